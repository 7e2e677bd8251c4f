//! Hierarchical Poisson log-linear score model: Poisson goals with
//! covariates, team attack/defence effects and AR(1) team-by-season
//! interactions, fitted per league at the posterior mode with a Gaussian
//! (Laplace) approximation.

mod io;
mod sample;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{read_precisions, write_precisions};
pub use sample::{expected_goals, outcome_probs, precision_path, rmse_scores, sample_scores, HplPredictor, ScoreSamples};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FeaturedMatch};
use crate::optim::{max_norm, nelder_mead, newton, OptimOptions};

/// Prior variance of every fixed effect.
pub const BETA_PRIOR_VAR: f64 = 100.0;

/// Covariates entering both linear predictors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HplSpec {
    /// Features 1-13 enter as numbers (1 and 2 as the side's own
    /// indicator, the rest as own minus opponent); 14-16 as one-hot labels
    /// with the first level dropped.
    pub feature_ids: Vec<u8>,
}

impl Default for HplSpec {
    fn default() -> Self {
        HplSpec {
            feature_ids: vec![1, 2, 4, 6, 15, 16],
        }
    }
}

impl HplSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, &k) in self.feature_ids.iter().enumerate() {
            if !(1..=16).contains(&k) {
                return Err(Error::InvalidInput(format!("unknown feature {k}")));
            }
            if self.feature_ids[..i].contains(&k) {
                return Err(Error::InvalidInput(format!("feature {k} listed twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub sigma_alpha: f64,
    pub sigma_xi: f64,
    pub sigma_eps: f64,
    pub rho_gamma: f64,
    pub rho_delta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            sigma_alpha: 0.5,
            sigma_xi: 0.5,
            sigma_eps: 0.5,
            rho_gamma: 0.5,
            rho_delta: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_alpha > 0.0
            && self.sigma_xi > 0.0
            && self.sigma_eps > 0.0
            && self.rho_gamma.abs() < 1.0
            && self.rho_delta.abs() < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("hyperparameters out of range: {self:?}")))
        }
    }

    // σ on the log scale, ρ through log((1+ρ)/(1-ρ))
    fn to_internal(self) -> [f64; 5] {
        let r = |p: f64| ((1.0 + p) / (1.0 - p)).ln();
        [
            self.sigma_alpha.ln(),
            self.sigma_xi.ln(),
            self.sigma_eps.ln(),
            r(self.rho_gamma),
            r(self.rho_delta),
        ]
    }

    fn from_internal(u: &[f64]) -> Self {
        let s = |v: f64| v.clamp((0.01f64).ln(), 5f64.ln()).exp();
        // inverse of log((1+ρ)/(1-ρ))
        let r = |v: f64| (0.5 * v.clamp(-6.0, 6.0)).tanh();
        Hyperparams {
            sigma_alpha: s(u[0]),
            sigma_xi: s(u[1]),
            sigma_eps: s(u[2]),
            rho_gamma: r(u[3]),
            rho_delta: r(u[4]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HplOptions {
    pub hyper: Hyperparams,
    pub empirical_bayes: bool,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub eb_max_evals: usize,
}

impl Default for HplOptions {
    fn default() -> Self {
        HplOptions {
            hyper: Hyperparams::default(),
            empirical_bayes: false,
            max_iter: 100,
            grad_tol: 1e-6,
            eb_max_evals: 150,
        }
    }
}

/// One column of the fixed-effect design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Column {
    Intercept,
    /// The side's own value of a numeric feature.
    Own { feature: u8 },
    /// Own minus opponent value of a numeric feature.
    Diff { feature: u8 },
    /// Indicator of one level of a label feature.
    Level { feature: u8, label: String },
}

fn label_of(x: &FeatureVector, feature: u8) -> String {
    match feature {
        14 => x.season.clone(),
        15 => x.season_window.clone(),
        _ => x.quarter.to_string(),
    }
}

impl Column {
    fn value(&self, own: &FeatureVector, opp: &FeatureVector) -> f64 {
        match self {
            Column::Intercept => 1.0,
            Column::Own { feature } => own.numeric(*feature).unwrap_or(0.0),
            Column::Diff { feature } => {
                own.numeric(*feature).unwrap_or(0.0) - opp.numeric(*feature).unwrap_or(0.0)
            }
            Column::Level { feature, label } => f64::from(u8::from(label_of(own, *feature) == *label)),
        }
    }

    pub fn name(&self) -> String {
        let fname = |k: &u8| crate::features::feature_name(*k).unwrap_or("?");
        match self {
            Column::Intercept => "intercept".into(),
            Column::Own { feature } => fname(feature).into(),
            Column::Diff { feature } => format!("{}_difference", fname(feature)),
            Column::Level { feature, label } => format!("{}={label}", fname(feature)),
        }
    }
}

fn build_columns(spec: &HplSpec, data: &[&FeaturedMatch]) -> Vec<Column> {
    let mut cols = vec![Column::Intercept];
    for &k in &spec.feature_ids {
        match k {
            1 | 2 => cols.push(Column::Own { feature: k }),
            3..=13 => cols.push(Column::Diff { feature: k }),
            _ => {
                let levels: BTreeSet<String> = data
                    .iter()
                    .flat_map(|m| [label_of(&m.features.home, k), label_of(&m.features.away, k)])
                    .collect();
                for label in levels.into_iter().skip(1) {
                    cols.push(Column::Level { feature: k, label });
                }
            }
        }
    }
    cols
}

/// Observation of one side's goals.
#[derive(Debug, Clone)]
struct Obs {
    z: Vec<f64>,
    att: usize,
    def: usize,
    season: usize,
    y: f64,
}

/// Parameter layout: β, α (T), ξ (T), γ (T×S), δ (T×S); team-major within
/// the interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub p: usize,
    pub teams: usize,
    pub seasons: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.p + 2 * self.teams + 2 * self.teams * self.seasons
    }
    pub fn alpha(&self, t: usize) -> usize {
        self.p + t
    }
    pub fn xi(&self, t: usize) -> usize {
        self.p + self.teams + t
    }
    pub fn gamma(&self, t: usize, s: usize) -> usize {
        self.p + 2 * self.teams + t * self.seasons + s
    }
    pub fn delta(&self, t: usize, s: usize) -> usize {
        self.p + 2 * self.teams + self.teams * self.seasons + t * self.seasons + s
    }
}

/// A league's data in model form.
#[derive(Debug, Clone)]
pub struct LeagueData {
    pub layout: Layout,
    pub columns: Vec<Column>,
    pub teams: Vec<String>,
    pub seasons: Vec<String>,
    obs: Vec<Obs>,
}

impl LeagueData {
    pub fn new(spec: &HplSpec, data: &[&FeaturedMatch], extra_teams: &[String]) -> Result<Self> {
        spec.validate()?;
        let data: Vec<&FeaturedMatch> = data.iter().copied().filter(|m| m.score.is_some()).collect();
        let columns = build_columns(spec, &data);
        let teams: BTreeSet<String> = data
            .iter()
            .flat_map(|m| [m.fixture.home_team.clone(), m.fixture.away_team.clone()])
            .chain(extra_teams.iter().cloned())
            .collect();
        let teams: Vec<String> = teams.into_iter().collect();
        // seasons in order of their first match
        let mut first: BTreeMap<&str, NaiveDate> = BTreeMap::new();
        for m in &data {
            let e = first.entry(m.fixture.season.as_str()).or_insert(m.fixture.date);
            *e = (*e).min(m.fixture.date);
        }
        let mut seasons: Vec<(NaiveDate, &str)> = first.iter().map(|(s, d)| (*d, *s)).collect();
        seasons.sort();
        let seasons: Vec<String> = seasons.into_iter().map(|(_, s)| s.to_string()).collect();
        let tix = |t: &str| teams.binary_search_by(|x| x.as_str().cmp(t)).expect("team indexed");
        let six = |s: &str| seasons.iter().position(|x| x == s).expect("season indexed");
        let mut obs = Vec::with_capacity(2 * data.len());
        for m in &data {
            let (hg, ag) = m.score.expect("played");
            let (h, a) = (tix(&m.fixture.home_team), tix(&m.fixture.away_team));
            let s = six(&m.fixture.season);
            let (fh, fa) = (&m.features.home, &m.features.away);
            obs.push(Obs {
                z: columns.iter().map(|c| c.value(fh, fa)).collect(),
                att: h,
                def: a,
                season: s,
                y: f64::from(hg),
            });
            obs.push(Obs {
                z: columns.iter().map(|c| c.value(fa, fh)).collect(),
                att: a,
                def: h,
                season: s,
                y: f64::from(ag),
            });
        }
        Ok(LeagueData {
            layout: Layout {
                p: columns.len(),
                teams: teams.len(),
                seasons: seasons.len().max(1),
            },
            columns,
            teams,
            seasons,
            obs,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    fn eta(&self, o: &Obs, x: &[f64]) -> f64 {
        let l = &self.layout;
        o.z.iter().zip(x).map(|(z, b)| z * b).sum::<f64>()
            + x[l.alpha(o.att)]
            + x[l.xi(o.def)]
            + x[l.gamma(o.att, o.season)]
            + x[l.delta(o.def, o.season)]
    }

    /// Negative log posterior (Poisson part without `log y!`, Gaussian
    /// priors with their normalizing constants) and optionally its
    /// gradient.
    pub fn neg_log_posterior(&self, x: &[f64], hyper: &Hyperparams, grad: Option<&mut [f64]>) -> Result<f64> {
        let l = self.layout;
        if x.len() != l.dim() {
            return Err(Error::DimensionMismatch {
                expected: l.dim(),
                got: x.len(),
            });
        }
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut f = 0.0;
        for (i, o) in self.obs.iter().enumerate() {
            let eta = self.eta(o, x);
            let th = eta.exp();
            if !th.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            f += th - o.y * eta;
            if let Some(g) = g.as_deref_mut() {
                let r = th - o.y;
                for (j, z) in o.z.iter().enumerate() {
                    g[j] += r * z;
                }
                g[l.alpha(o.att)] += r;
                g[l.xi(o.def)] += r;
                g[l.gamma(o.att, o.season)] += r;
                g[l.delta(o.def, o.season)] += r;
            }
        }
        f += self.prior(x, hyper, g);
        if !f.is_finite() {
            return Err(Error::NonFinite { index: usize::MAX });
        }
        Ok(f)
    }

    fn prior(&self, x: &[f64], h: &Hyperparams, mut g: Option<&mut [f64]>) -> f64 {
        let l = self.layout;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut f = 0.0;
        let mut normal = |i: usize, mean_coef: Option<(usize, f64)>, var: f64, g: &mut Option<&mut [f64]>| {
            let m = mean_coef.map_or(0.0, |(j, r)| r * x[j]);
            let d = x[i] - m;
            f += 0.5 * d * d / var + 0.5 * (ln2pi + var.ln());
            if let Some(g) = g.as_deref_mut() {
                g[i] += d / var;
                if let Some((j, r)) = mean_coef {
                    g[j] -= r * d / var;
                }
            }
        };
        for j in 0..l.p {
            normal(j, None, BETA_PRIOR_VAR, &mut g);
        }
        for t in 0..l.teams {
            normal(l.alpha(t), None, h.sigma_alpha.powi(2), &mut g);
            normal(l.xi(t), None, h.sigma_xi.powi(2), &mut g);
        }
        let s2 = h.sigma_eps.powi(2);
        for t in 0..l.teams {
            for (idx, rho) in [
                (&(|s| l.gamma(t, s)) as &dyn Fn(usize) -> usize, h.rho_gamma),
                (&(|s| l.delta(t, s)) as &dyn Fn(usize) -> usize, h.rho_delta),
            ] {
                normal(idx(0), None, s2, &mut g);
                for s in 1..l.seasons {
                    normal(idx(s), Some((idx(s - 1), rho)), s2 * (1.0 - rho * rho), &mut g);
                }
            }
        }
        f
    }

    /// Hessian of [`LeagueData::neg_log_posterior`] (the posterior
    /// precision of the Laplace approximation).
    pub fn hessian(&self, x: &[f64], hyper: &Hyperparams) -> DMatrix<f64> {
        let l = self.layout;
        let n = l.dim();
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut idx: Vec<(usize, f64)> = Vec::with_capacity(l.p + 4);
        for o in &self.obs {
            let th = self.eta(o, x).exp();
            idx.clear();
            idx.extend(o.z.iter().enumerate().filter(|(_, z)| **z != 0.0).map(|(j, z)| (j, *z)));
            idx.push((l.alpha(o.att), 1.0));
            idx.push((l.xi(o.def), 1.0));
            idx.push((l.gamma(o.att, o.season), 1.0));
            idx.push((l.delta(o.def, o.season), 1.0));
            for &(i, a) in &idx {
                for &(j, b) in &idx {
                    h[(i, j)] += th * a * b;
                }
            }
        }
        for j in 0..l.p {
            h[(j, j)] += 1.0 / BETA_PRIOR_VAR;
        }
        for t in 0..l.teams {
            h[(l.alpha(t), l.alpha(t))] += 1.0 / hyper.sigma_alpha.powi(2);
            h[(l.xi(t), l.xi(t))] += 1.0 / hyper.sigma_xi.powi(2);
        }
        let s2 = hyper.sigma_eps.powi(2);
        for t in 0..l.teams {
            for (first, rho) in [(l.gamma(t, 0), hyper.rho_gamma), (l.delta(t, 0), hyper.rho_delta)] {
                h[(first, first)] += 1.0 / s2;
                let v = s2 * (1.0 - rho * rho);
                for s in 1..l.seasons {
                    let (i, j) = (first + s, first + s - 1);
                    h[(i, i)] += 1.0 / v;
                    h[(j, j)] += rho * rho / v;
                    h[(i, j)] -= rho / v;
                    h[(j, i)] -= rho / v;
                }
            }
        }
        h
    }

    fn start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.dim()];
        let mean = self.obs.iter().map(|o| o.y).sum::<f64>() / self.obs.len().max(1) as f64;
        if self.columns.first() == Some(&Column::Intercept) && mean > 0.0 {
            x[0] = mean.ln();
        }
        x
    }
}

/// Posterior mode and Gaussian approximation for one league.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceFit {
    pub league: String,
    pub spec: HplSpec,
    pub columns: Vec<Column>,
    pub teams: Vec<String>,
    pub seasons: Vec<String>,
    pub layout: Layout,
    pub hyper: Hyperparams,
    pub mode: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Laplace approximation of the log marginal likelihood (up to the
    /// `log y!` terms).
    pub log_marginal: f64,
    /// Hessian of the negative log posterior at the mode.
    #[serde(skip)]
    pub precision: DMatrix<f64>,
    #[serde(skip)]
    covariance: DMatrix<f64>,
}

impl LaplaceFit {
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Posterior standard deviation of parameter `i`.
    pub fn posterior_sd(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }

    pub fn team_index(&self, team: &str) -> Option<usize> {
        self.teams.binary_search_by(|t| t.as_str().cmp(team)).ok()
    }

    /// Re-derives the covariance after the precision has been loaded.
    pub fn set_precision(&mut self, precision: DMatrix<f64>) -> Result<()> {
        if precision.nrows() != self.layout.dim() || precision.ncols() != self.layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dim(),
                got: precision.nrows(),
            });
        }
        self.covariance = invert_precision(&precision)?;
        self.precision = precision;
        Ok(())
    }
}

fn invert_precision(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match q.clone().cholesky() {
        Some(c) => Ok(c.inverse()),
        None => {
            let ev = q.clone().symmetric_eigen().eigenvalues;
            Err(Error::NotPositiveDefinite {
                min_eigenvalue: ev.min(),
            })
        }
    }
}

struct Mode {
    x: Vec<f64>,
    converged: bool,
    iterations: usize,
    gradient_norm: f64,
    value: f64,
}

fn find_mode(d: &LeagueData, hyper: &Hyperparams, start: &[f64], opts: &HplOptions) -> Mode {
    let res = newton(
        |x, g| d.neg_log_posterior(x, hyper, Some(g)).unwrap_or(f64::INFINITY),
        |x| d.hessian(x, hyper),
        start,
        &OptimOptions {
            grad_tol: opts.grad_tol,
            max_iter: opts.max_iter,
        },
    );
    Mode {
        gradient_norm: max_norm(&res.grad),
        converged: res.converged,
        iterations: res.iterations,
        value: res.f,
        x: res.x,
    }
}

/// `-log` of the Laplace-approximate marginal likelihood.
fn neg_log_marginal(d: &LeagueData, hyper: &Hyperparams, m: &Mode) -> f64 {
    let h = d.hessian(&m.x, hyper);
    match h.cholesky() {
        Some(c) => {
            let logdet: f64 = c.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let n = d.layout.dim() as f64;
            m.value + 0.5 * logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
        }
        None => f64::INFINITY,
    }
}

/// Log density of the hyperprior on the internal scale: a log-Gamma(1,
/// 5e-5) prior on each precision and Normal(0, 1/0.15) on the AR
/// transforms.
fn log_hyperprior(u: &[f64]) -> f64 {
    let (a, b) = (1.0, 5e-5);
    let mut lp = 0.0;
    for &ls in &u[..3] {
        let log_tau = -2.0 * ls;
        lp += a * log_tau - b * log_tau.exp();
    }
    for &r in &u[3..] {
        lp -= 0.5 * 0.15 * r * r;
    }
    lp
}

/// Posterior mode and Laplace approximation for one league's played
/// matches.
pub fn fit_map(
    league: &str,
    data: &[&FeaturedMatch],
    spec: &HplSpec,
    opts: &HplOptions,
    extra_teams: &[String],
) -> Result<LaplaceFit> {
    opts.hyper.validate()?;
    let d = LeagueData::new(spec, data, extra_teams)?;
    if d.n_obs() == 0 {
        return Err(Error::Empty("league has no played matches"));
    }
    let mut start = d.start();
    let mut hyper = opts.hyper;
    if opts.empirical_bayes {
        let u0 = hyper.to_internal();
        let mut warm = start.clone();
        let (u, _) = nelder_mead(
            |u| {
                let h = Hyperparams::from_internal(u);
                let m = find_mode(&d, &h, &warm, opts);
                if !m.converged {
                    return f64::INFINITY;
                }
                let v = neg_log_marginal(&d, &h, &m) - log_hyperprior(u);
                warm = m.x;
                v
            },
            &u0,
            0.5,
            1e-6,
            opts.eb_max_evals,
        );
        hyper = Hyperparams::from_internal(&u);
        start = warm;
    }
    let m = find_mode(&d, &hyper, &start, opts);
    if !m.converged {
        log::warn!(
            "league {league}: mode not converged after {} iterations (gradient {:.3e})",
            m.iterations,
            m.gradient_norm
        );
    }
    let precision = d.hessian(&m.x, &hyper);
    let covariance = invert_precision(&precision)?;
    let log_marginal = -neg_log_marginal(&d, &hyper, &m);
    Ok(LaplaceFit {
        league: league.to_string(),
        spec: spec.clone(),
        columns: d.columns.clone(),
        teams: d.teams.clone(),
        seasons: d.seasons.clone(),
        layout: d.layout,
        hyper,
        converged: m.converged,
        iterations: m.iterations,
        gradient_norm: m.gradient_norm,
        log_marginal,
        mode: m.x,
        precision,
        covariance,
    })
}

/// Fits every league with played matches strictly before `as_of`.
pub fn fit_leagues(data: &[FeaturedMatch], as_of: NaiveDate, spec: &HplSpec, opts: &HplOptions) -> Result<HplPredictor> {
    let mut by_league: BTreeMap<&str, Vec<&FeaturedMatch>> = BTreeMap::new();
    for m in data.iter().filter(|m| m.score.is_some() && m.fixture.date < as_of) {
        by_league.entry(m.fixture.league.as_str()).or_default().push(m);
    }
    if by_league.is_empty() {
        return Err(Error::Empty("training window"));
    }
    let jobs: Vec<(&str, Vec<&FeaturedMatch>)> = by_league.into_iter().collect();
    let fits = jobs
        .par_iter()
        .map(|(l, ms)| fit_map(l, ms, spec, opts, &[]))
        .collect::<Result<Vec<_>>>()?;
    Ok(HplPredictor { fits })
}

/// Linear predictor of one side given explicit effects, for checks and
/// examples.
pub fn linear_predictor(z: &[f64], beta: &[f64], attack: f64, defence: f64, gamma: f64, delta: f64) -> f64 {
    z.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + attack + defence + gamma + delta
}

pub(crate) fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
