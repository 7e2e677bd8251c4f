//! Maximum-likelihood fitting, windowing and prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::{Months, NaiveDate};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{eval, BTModel, ColumnScale, DrawKind, DrawRule, Prepared, StrengthKind, StrengthSpec};
use crate::error::{Error, Result};
use crate::features::FeaturedMatch;
use crate::optim::{bfgs, fd_hessian, max_norm, OptimOptions};
use crate::prediction::{Flag, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Value of the lower ordinal threshold, or `None` to estimate it (only
    /// sensible when the strength has no intercept such as the home
    /// feature).
    pub fix_delta0: Option<f64>,
    /// Ridge on CS team strengths, added to the negative log-likelihood.
    pub cs_ridge: f64,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grad_tol: 1e-6,
            max_iter: 500,
            fix_delta0: Some(0.0),
            cs_ridge: 1e-6,
            standard_errors: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Most recent matches used by pooled (BL/LF/TVC) fits.
    pub max_matches: usize,
    /// Look-back for league-by-league CS fits.
    pub cs_lookback_months: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            max_matches: 20_000,
            cs_lookback_months: 12,
        }
    }
}

/// Maps the unconstrained optimization vector to model parameters.
///
/// Layout: coefficients, team strengths except the reference (slot 0), then
/// `[δ0 if free], log(δ1 - δ0)` or `log δ`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n_cols: usize,
    n_teams: usize,
    draw: DrawKind,
    fix_delta0: Option<f64>,
}

impl Layout {
    fn free_teams(&self) -> usize {
        self.n_teams.saturating_sub(1)
    }

    fn n_draw(&self) -> usize {
        match (self.draw, self.fix_delta0) {
            (DrawKind::Ordinal, None) => 2,
            _ => 1,
        }
    }

    fn dim(&self) -> usize {
        self.n_cols + self.free_teams() + self.n_draw()
    }

    fn unpack(&self, u: &[f64], coefs: &mut [f64], alphas: &mut [f64]) -> DrawRule {
        coefs.copy_from_slice(&u[..self.n_cols]);
        if self.n_teams > 0 {
            alphas[0] = 0.0;
            alphas[1..].copy_from_slice(&u[self.n_cols..self.n_cols + self.free_teams()]);
        }
        let d = &u[self.n_cols + self.free_teams()..];
        match self.draw {
            DrawKind::Ordinal => {
                let (delta0, psi) = match self.fix_delta0 {
                    Some(v) => (v, d[0]),
                    None => (d[0], d[1]),
                };
                DrawRule::Ordinal {
                    delta0,
                    delta1: delta0 + psi.exp(),
                }
            }
            DrawKind::Davidson => DrawRule::Davidson { delta: d[0].exp() },
        }
    }

    /// Chain rule from the model-parameter gradient to the free vector.
    fn pull_back(&self, g_nat: &[f64], draw: &DrawRule, g: &mut [f64]) {
        let nc = self.n_cols;
        g[..nc].copy_from_slice(&g_nat[..nc]);
        let ft = self.free_teams();
        if self.n_teams > 0 {
            g[nc..nc + ft].copy_from_slice(&g_nat[nc + 1..nc + self.n_teams]);
        }
        let off_nat = nc + self.n_teams;
        let off = nc + ft;
        match *draw {
            DrawRule::Ordinal { delta0, delta1 } => {
                let gd0 = g_nat[off_nat];
                let gd1 = g_nat[off_nat + 1];
                let dpsi = gd1 * (delta1 - delta0);
                match self.fix_delta0 {
                    Some(_) => g[off] = dpsi,
                    None => {
                        g[off] = gd0 + gd1;
                        g[off + 1] = dpsi;
                    }
                }
            }
            DrawRule::Davidson { delta } => g[off] = g_nat[off_nat] * delta,
        }
    }
}

struct Objective<'a> {
    layout: Layout,
    prepared: &'a Prepared,
    ridge: f64,
    coefs: Vec<f64>,
    alphas: Vec<f64>,
    g_nat: Vec<f64>,
}

impl<'a> Objective<'a> {
    fn new(layout: Layout, prepared: &'a Prepared, ridge: f64) -> Self {
        Objective {
            layout,
            prepared,
            ridge,
            coefs: vec![0.0; layout.n_cols],
            alphas: vec![0.0; layout.n_teams],
            g_nat: vec![0.0; layout.n_cols + layout.n_teams + 2],
        }
    }

    /// Penalized negative log-likelihood and its gradient.
    fn value_grad(&mut self, u: &[f64], g: &mut [f64]) -> f64 {
        let draw = self.layout.unpack(u, &mut self.coefs, &mut self.alphas);
        let n_nat = self.layout.n_cols + self.layout.n_teams + draw_len(&draw);
        let res = eval(
            &self.coefs,
            &self.alphas,
            &draw,
            self.prepared,
            Some(&mut self.g_nat[..n_nat]),
        );
        let Ok(v) = res else {
            g.iter_mut().for_each(|x| *x = 0.0);
            return f64::INFINITY;
        };
        self.layout.pull_back(&self.g_nat[..n_nat], &draw, g);
        g.iter_mut().for_each(|x| *x = -*x);
        let mut f = -v.value;
        let nc = self.layout.n_cols;
        for s in 1..self.layout.n_teams {
            let a = self.alphas[s];
            f += self.ridge * a * a;
            g[nc + s - 1] += 2.0 * self.ridge * a;
        }
        f
    }
}

fn draw_len(d: &DrawRule) -> usize {
    match d {
        DrawRule::Ordinal { .. } => 2,
        DrawRule::Davidson { .. } => 1,
    }
}

/// Outcome of one maximum-likelihood fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub model: BTModel,
    /// Unpenalized log-likelihood at the estimate.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the objective gradient in the optimization parameters.
    pub gradient_norm: f64,
    pub n_matches: usize,
    /// Matches whose probability hit the floor at the estimate.
    pub floored: usize,
    pub warnings: Vec<String>,
    /// Inverse observed information in the optimization parameters.
    #[serde(skip)]
    covariance: Option<DMatrix<f64>>,
    #[serde(skip)]
    n_free_teams: usize,
}

impl FitResult {
    /// Standard error of covariate coefficient `k` (standardized scale).
    pub fn coefficient_se(&self, k: usize) -> Option<f64> {
        let c = self.covariance.as_ref()?;
        (k < self.model.coefficients.len()).then(|| c[(k, k)].max(0.0).sqrt())
    }

    fn team_free_index(&self, team: &str) -> Option<Option<usize>> {
        let slot = *self.model.team_index.get(team)?;
        Some((slot > 0).then(|| self.model.coefficients.len() + slot - 1))
    }

    /// Standard error of `α_a - α_b` (CS).
    pub fn strength_diff_se(&self, a: &str, b: &str) -> Option<f64> {
        let c = self.covariance.as_ref()?;
        let ia = self.team_free_index(a)?;
        let ib = self.team_free_index(b)?;
        let cov = |i: Option<usize>, j: Option<usize>| match (i, j) {
            (Some(i), Some(j)) => c[(i, j)],
            _ => 0.0,
        };
        let v = cov(ia, ia) + cov(ib, ib) - 2.0 * cov(ia, ib);
        Some(v.max(0.0).sqrt())
    }

    pub fn has_standard_errors(&self) -> bool {
        self.covariance.is_some()
    }

    /// Number of free team strengths (CS).
    pub fn n_free_teams(&self) -> usize {
        self.n_free_teams
    }
}

fn column_scales(spec: &StrengthSpec, data: &[&FeaturedMatch]) -> Vec<ColumnScale> {
    let nc = spec.n_columns();
    let mut sum = vec![0.0; nc];
    let mut sq = vec![0.0; nc];
    let mut cols = Vec::new();
    let mut n = 0.0;
    for m in data {
        for x in [&m.features.home, &m.features.away] {
            spec.columns_into(x, x.matches_played, &mut cols);
            for j in 0..nc {
                sum[j] += cols[j];
                sq[j] += cols[j] * cols[j];
            }
            n += 1.0;
        }
    }
    (0..nc)
        .map(|j| {
            let mean = sum[j] / n;
            let var = (sq[j] / n - mean * mean).max(0.0);
            let sd = var.sqrt();
            ColumnScale {
                mean,
                sd: if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 },
            }
        })
        .collect()
}

/// Checks that the comparison graph of a CS window ties every team to the
/// reference.
fn cs_identifiability(model: &BTModel, p: &Prepared) -> Vec<String> {
    let n = model.team_strengths.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(h, a) in &p.teams {
        let (rh, ra) = (find(&mut parent, h), find(&mut parent, a));
        if rh != ra {
            parent[rh] = ra;
        }
    }
    let roots: BTreeSet<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut w = Vec::new();
    if roots.len() > 1 {
        w.push(format!(
            "non-identifiable: {} disconnected groups of teams; strengths held by the ridge",
            roots.len()
        ));
    }
    let n_free = model.coefficients.len() + n.saturating_sub(1) + 1;
    if p.len() < n_free {
        w.push(format!(
            "non-identifiable: {} matches for {} free parameters; strengths held by the ridge",
            p.len(),
            n_free
        ));
    }
    w
}

/// Fits one model by maximum likelihood on the given played matches.
pub fn fit_bt(
    spec: &StrengthSpec,
    draw: DrawKind,
    data: &[&FeaturedMatch],
    league: Option<String>,
    opts: &FitOptions,
) -> Result<FitResult> {
    spec.validate()?;
    let data: Vec<&FeaturedMatch> = data.iter().copied().filter(|m| m.score.is_some()).collect();
    if data.is_empty() {
        return Err(Error::Empty("training window"));
    }
    let init = match draw {
        DrawKind::Ordinal => DrawRule::Ordinal {
            delta0: 0.0,
            delta1: 1.0,
        },
        DrawKind::Davidson => DrawRule::Davidson { delta: 1.0 },
    };
    let mut model = BTModel::new(spec.clone(), init)?;
    model.league = league;
    let cs = spec.kind == StrengthKind::Cs;
    if cs {
        let teams = data
            .iter()
            .flat_map(|m| [m.fixture.home_team.clone(), m.fixture.away_team.clone()]);
        model = model.with_teams(teams);
    }
    if matches!(spec.kind, StrengthKind::Lf | StrengthKind::Tvc) {
        model.scales = column_scales(spec, &data);
    }
    let prepared = Prepared::new(&model, &data)?;
    let layout = Layout {
        n_cols: spec.n_columns(),
        n_teams: model.team_strengths.len(),
        draw,
        fix_delta0: opts.fix_delta0,
    };
    let ridge = if cs { opts.cs_ridge } else { 0.0 };
    let mut obj = Objective::new(layout, &prepared, ridge);
    let mut u0 = vec![0.0; layout.dim()];
    if let (DrawKind::Ordinal, None) = (draw, opts.fix_delta0) {
        // start with δ0 = -1/2, δ1 = 1/2 rather than an asymmetric pair
        u0[layout.n_cols + layout.free_teams()] = -0.5;
    }
    let res = bfgs(
        |u, g| obj.value_grad(u, g),
        &u0,
        &OptimOptions {
            grad_tol: opts.grad_tol,
            max_iter: opts.max_iter,
        },
    );
    let mut coefs = vec![0.0; layout.n_cols];
    let mut alphas = vec![0.0; layout.n_teams];
    let draw_rule = layout.unpack(&res.x, &mut coefs, &mut alphas);
    model.coefficients = coefs;
    model.team_strengths = alphas;
    model.draw = draw_rule;
    let ll = eval(&model.coefficients, &model.team_strengths, &model.draw, &prepared, None)?;

    let mut warnings = Vec::new();
    if cs {
        warnings.extend(cs_identifiability(&model, &prepared));
    }
    if !res.converged {
        warnings.push(format!(
            "not converged after {} iterations (gradient max-norm {:.3e})",
            res.iterations,
            res.grad_max_norm()
        ));
    }
    let covariance = if opts.standard_errors {
        let h = fd_hessian(
            |u, g| {
                obj.value_grad(u, g);
            },
            &res.x,
            1e-5,
        );
        match h.clone().cholesky() {
            Some(ch) => Some(ch.inverse()),
            None => {
                warnings.push("observed information is not positive definite; no standard errors".into());
                None
            }
        }
    } else {
        None
    };
    Ok(FitResult {
        loglik: ll.value,
        converged: res.converged,
        iterations: res.iterations,
        gradient_norm: max_norm(&res.grad),
        n_matches: prepared.len(),
        floored: ll.floored.len(),
        warnings,
        covariance,
        n_free_teams: layout.free_teams(),
        model,
    })
}

/// One model per league (CS) or a single pooled model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BtFit {
    pub fits: Vec<FitResult>,
}

impl BtFit {
    pub fn converged(&self) -> bool {
        self.fits.iter().all(|f| f.converged)
    }

    pub fn loglik(&self) -> f64 {
        self.fits.iter().map(|f| f.loglik).sum()
    }

    pub fn iterations(&self) -> usize {
        self.fits.iter().map(|f| f.iterations).max().unwrap_or(0)
    }

    pub fn predictor(&self) -> BtPredictor {
        BtPredictor {
            models: self.fits.iter().map(|f| f.model.clone()).collect(),
        }
    }
}

/// Played matches strictly before `as_of`.
fn history_before(data: &[FeaturedMatch], as_of: NaiveDate) -> Vec<&FeaturedMatch> {
    let mut v: Vec<&FeaturedMatch> = data
        .iter()
        .filter(|m| m.score.is_some() && m.fixture.date < as_of)
        .collect();
    v.sort_by_key(|m| m.fixture.date);
    v
}

/// Selects the training window and fits: pooled on the most recent matches
/// for BL/LF/TVC, league by league on the last year for CS.
pub fn fit_ml(
    spec: &StrengthSpec,
    draw: DrawKind,
    data: &[FeaturedMatch],
    as_of: NaiveDate,
    window: &WindowConfig,
    opts: &FitOptions,
) -> Result<BtFit> {
    let hist = history_before(data, as_of);
    if spec.kind != StrengthKind::Cs {
        let start = hist.len().saturating_sub(window.max_matches);
        let fit = fit_bt(spec, draw, &hist[start..], None, opts)?;
        return Ok(BtFit { fits: vec![fit] });
    }
    let from = as_of
        .checked_sub_months(Months::new(window.cs_lookback_months))
        .unwrap_or(NaiveDate::MIN);
    let mut by_league: BTreeMap<&str, Vec<&FeaturedMatch>> = BTreeMap::new();
    for m in hist.into_iter().filter(|m| m.fixture.date >= from) {
        by_league.entry(m.fixture.league.as_str()).or_default().push(m);
    }
    if by_league.is_empty() {
        return Err(Error::Empty("training window"));
    }
    let jobs: Vec<(&str, Vec<&FeaturedMatch>)> = by_league.into_iter().collect();
    let fits = jobs
        .par_iter()
        .map(|(league, ms)| fit_bt(spec, draw, ms, Some(league.to_string()), opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(BtFit { fits })
}

/// Fitted models ready for prediction; serializable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtPredictor {
    pub models: Vec<BTModel>,
}

impl BtPredictor {
    fn model_for(&self, league: &str) -> Option<&BTModel> {
        self.models
            .iter()
            .find(|m| m.league.as_deref().is_none_or(|l| l == league))
    }

    pub fn predict(&self, fixtures: &[FeaturedMatch]) -> Vec<Prediction> {
        fixtures
            .iter()
            .map(|f| match self.model_for(&f.fixture.league) {
                Some(m) => predict_one(m, f),
                None => Prediction::neutral().flagged(Flag::UnseenLeague),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: BtPredictor = serde_json::from_str(s)?;
        for m in &p.models {
            m.spec.validate()?;
            m.draw.validate()?;
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        fs::write(p, self.to_json()?).map_err(|e| Error::io(p, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        Self::from_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)
    }
}

fn predict_one(model: &BTModel, f: &FeaturedMatch) -> Prediction {
    let mut p = Prediction::new(model.probs(f));
    if model.spec.kind == StrengthKind::Cs
        && (model.team_strength(&f.fixture.home_team).is_none()
            || model.team_strength(&f.fixture.away_team).is_none())
    {
        p.flags.insert(Flag::UnseenTeam);
    }
    p
}

/// Predictions of a single model.
pub fn predict(model: &BTModel, fixtures: &[FeaturedMatch]) -> Vec<Prediction> {
    fixtures.iter().map(|f| predict_one(model, f)).collect()
}
