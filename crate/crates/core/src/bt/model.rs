//! Strength specifications, fitted models and the log-likelihood.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::probs::{davidson_term, davidson_triple, ordinal_term, ordinal_triple};
use crate::error::{Error, Result};
use crate::features::{is_numeric_feature, FeatureVector, FeaturedMatch, FEATURE_HOME};
use crate::match_data::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrengthKind {
    Bl,
    Cs,
    Lf,
    Tvc,
}

impl StrengthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrengthKind::Bl => "bl",
            StrengthKind::Cs => "cs",
            StrengthKind::Lf => "lf",
            StrengthKind::Tvc => "tvc",
        }
    }
}

impl std::str::FromStr for StrengthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bl" => Ok(StrengthKind::Bl),
            "cs" => Ok(StrengthKind::Cs),
            "lf" => Ok(StrengthKind::Lf),
            "tvc" => Ok(StrengthKind::Tvc),
            _ => Err(Error::InvalidInput(format!("unknown strength spec `{s}`"))),
        }
    }
}

/// Which covariates enter the strength of a team and how.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrengthSpec {
    pub kind: StrengthKind,
    pub feature_ids: Vec<u8>,
    /// Features whose coefficient is `α_k + β_k·m` with `m` the matches
    /// played so far (TVC only).
    #[serde(default)]
    pub varying_ids: Vec<u8>,
}

impl StrengthSpec {
    pub fn bl() -> Self {
        StrengthSpec {
            kind: StrengthKind::Bl,
            feature_ids: vec![FEATURE_HOME],
            varying_ids: vec![],
        }
    }

    pub fn cs() -> Self {
        StrengthSpec {
            kind: StrengthKind::Cs,
            feature_ids: vec![FEATURE_HOME],
            varying_ids: vec![],
        }
    }

    pub fn lf(feature_ids: &[u8]) -> Self {
        StrengthSpec {
            kind: StrengthKind::Lf,
            feature_ids: feature_ids.to_vec(),
            varying_ids: vec![],
        }
    }

    pub fn tvc(feature_ids: &[u8], varying_ids: &[u8]) -> Self {
        StrengthSpec {
            kind: StrengthKind::Tvc,
            feature_ids: feature_ids.to_vec(),
            varying_ids: varying_ids.to_vec(),
        }
    }

    /// Builds a spec from a kind plus optional feature lists, filling in the
    /// fixed feature sets of BL and CS.
    pub fn from_parts(kind: StrengthKind, features: &[u8], varying: &[u8]) -> Result<Self> {
        let spec = match kind {
            StrengthKind::Bl => StrengthSpec::bl(),
            StrengthKind::Cs => StrengthSpec::cs(),
            StrengthKind::Lf => StrengthSpec::lf(features),
            StrengthKind::Tvc => StrengthSpec::tvc(features, varying),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        match self.kind {
            StrengthKind::Bl | StrengthKind::Cs => {
                if self.feature_ids != [FEATURE_HOME] {
                    return bad(format!(
                        "{} strength uses only the home feature",
                        self.kind.as_str()
                    ));
                }
            }
            StrengthKind::Lf | StrengthKind::Tvc => {
                if self.feature_ids.is_empty() {
                    return bad("feature list is empty".into());
                }
            }
        }
        if self.kind != StrengthKind::Tvc && !self.varying_ids.is_empty() {
            return bad("time-varying features are only allowed for tvc".into());
        }
        for (i, &k) in self.feature_ids.iter().enumerate() {
            if !is_numeric_feature(k) {
                return bad(format!("feature {k} is not a numeric feature (1-13)"));
            }
            if self.feature_ids[..i].contains(&k) {
                return bad(format!("feature {k} listed twice"));
            }
        }
        for &k in &self.varying_ids {
            if !self.feature_ids.contains(&k) {
                return bad(format!("varying feature {k} is not in the feature list"));
            }
        }
        Ok(())
    }

    /// Number of covariate coefficients, excluding team strengths.
    pub fn n_columns(&self) -> usize {
        self.feature_ids.len()
            + self
                .feature_ids
                .iter()
                .filter(|k| self.varying_ids.contains(k))
                .count()
    }

    /// Covariate columns of one side, in coefficient order. A varying
    /// feature contributes `x_k` and then `m·x_k`.
    pub fn columns_into(&self, x: &FeatureVector, m: u32, out: &mut Vec<f64>) {
        out.clear();
        for &k in &self.feature_ids {
            let v = x.numeric(k).unwrap_or(0.0);
            out.push(v);
            if self.varying_ids.contains(&k) {
                out.push(f64::from(m) * v);
            }
        }
    }

    pub fn columns(&self, x: &FeatureVector, m: u32) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_columns());
        self.columns_into(x, m, &mut v);
        v
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for &k in &self.feature_ids {
            let n = crate::features::feature_name(k).unwrap_or("?");
            if self.varying_ids.contains(&k) {
                names.push(format!("{n}:alpha"));
                names.push(format!("{n}:beta"));
            } else {
                names.push(n.to_string());
            }
        }
        names
    }
}

/// Strength of one side on the raw covariate scale.
///
/// `coefs` holds the covariate coefficients in column order; for CS the team
/// strength `α_i` follows the home coefficient, i.e. `coefs = [β, α_i]`.
pub fn strength(spec: &StrengthSpec, coefs: &[f64], x: &FeatureVector, m: u32) -> Result<f64> {
    let nc = spec.n_columns();
    let expected = nc + usize::from(spec.kind == StrengthKind::Cs);
    if coefs.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: coefs.len(),
        });
    }
    let cols = spec.columns(x, m);
    let mut s: f64 = cols.iter().zip(coefs).map(|(c, b)| c * b).sum();
    if spec.kind == StrengthKind::Cs {
        s += coefs[nc];
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawKind {
    Ordinal,
    Davidson,
}

impl std::str::FromStr for DrawKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ordinal" => Ok(DrawKind::Ordinal),
            "davidson" => Ok(DrawKind::Davidson),
            _ => Err(Error::InvalidInput(format!("unknown draw rule `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DrawRule {
    Ordinal { delta0: f64, delta1: f64 },
    Davidson { delta: f64 },
}

impl DrawRule {
    pub fn kind(&self) -> DrawKind {
        match self {
            DrawRule::Ordinal { .. } => DrawKind::Ordinal,
            DrawRule::Davidson { .. } => DrawKind::Davidson,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DrawRule::Ordinal { delta0, delta1 } if !(delta0 <= delta1) => Err(Error::InvalidInput(
                format!("ordinal thresholds must satisfy δ0 ≤ δ1 (got {delta0}, {delta1})"),
            )),
            DrawRule::Davidson { delta } if !(delta >= 0.0) => Err(Error::InvalidInput(format!(
                "Davidson draw parameter must be non-negative (got {delta})"
            ))),
            _ => Ok(()),
        }
    }

    fn n_params(&self) -> usize {
        match self {
            DrawRule::Ordinal { .. } => 2,
            DrawRule::Davidson { .. } => 1,
        }
    }

    /// `(p_win, p_draw, p_loss)` for a strength difference.
    pub fn probs(&self, diff: f64) -> [f64; 3] {
        match *self {
            DrawRule::Ordinal { delta0, delta1 } => ordinal_triple(diff, delta0, delta1),
            DrawRule::Davidson { delta } => davidson_triple(diff, delta),
        }
    }
}

/// Mean and scale of one covariate column over a training window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub sd: f64,
}

/// A fitted (or hand-specified) Bradley-Terry-type model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BTModel {
    pub spec: StrengthSpec,
    pub draw: DrawRule,
    /// Covariate coefficients in column order, on the standardized scale
    /// when `scales` is non-empty.
    pub coefficients: Vec<f64>,
    /// Team strengths indexed through `team_index` (CS only).
    #[serde(default)]
    pub team_strengths: Vec<f64>,
    #[serde(default)]
    pub team_index: BTreeMap<String, usize>,
    #[serde(default)]
    pub reference_team: Option<String>,
    /// Per-column standardization (LF/TVC); empty means raw columns.
    #[serde(default)]
    pub scales: Vec<ColumnScale>,
    /// League the model was fitted on, when fitted league by league.
    #[serde(default)]
    pub league: Option<String>,
}

impl BTModel {
    /// A model with all parameters zero except the draw rule.
    pub fn new(spec: StrengthSpec, draw: DrawRule) -> Result<Self> {
        spec.validate()?;
        draw.validate()?;
        let nc = spec.n_columns();
        Ok(BTModel {
            spec,
            draw,
            coefficients: vec![0.0; nc],
            team_strengths: vec![],
            team_index: BTreeMap::new(),
            reference_team: None,
            scales: vec![],
            league: None,
        })
    }

    /// Registers the CS teams; the first (alphabetically) is the reference.
    pub fn with_teams<I, S>(mut self, teams: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: std::collections::BTreeSet<String> = teams.into_iter().map(Into::into).collect();
        self.team_index = names.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        self.team_strengths = vec![0.0; names.len()];
        self.reference_team = names.into_iter().next();
        self
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len() + self.team_strengths.len() + self.draw.n_params()
    }

    /// Parameter vector: coefficients, team strengths, then the draw
    /// parameters (`δ0, δ1` or `δ`).
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.coefficients.clone();
        t.extend_from_slice(&self.team_strengths);
        match self.draw {
            DrawRule::Ordinal { delta0, delta1 } => t.extend([delta0, delta1]),
            DrawRule::Davidson { delta } => t.push(delta),
        }
        t
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        if let Some(i) = theta.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        let nc = self.coefficients.len();
        let nt = self.team_strengths.len();
        self.coefficients.copy_from_slice(&theta[..nc]);
        self.team_strengths.copy_from_slice(&theta[nc..nc + nt]);
        let d = &theta[nc + nt..];
        let draw = match self.draw {
            DrawRule::Ordinal { .. } => DrawRule::Ordinal {
                delta0: d[0],
                delta1: d[1],
            },
            DrawRule::Davidson { .. } => DrawRule::Davidson { delta: d[0] },
        };
        draw.validate()?;
        self.draw = draw;
        Ok(())
    }

    pub fn team_strength(&self, team: &str) -> Option<f64> {
        self.team_index.get(team).map(|&i| self.team_strengths[i])
    }

    fn scale(&self, col: usize) -> ColumnScale {
        self.scales.get(col).copied().unwrap_or(ColumnScale { mean: 0.0, sd: 1.0 })
    }

    /// Strength of a team given its feature vector. Unknown CS teams get
    /// strength 0.
    pub fn strength(&self, team: &str, x: &FeatureVector) -> f64 {
        let cols = self.spec.columns(x, x.matches_played);
        let mut s = 0.0;
        for (j, (c, b)) in cols.iter().zip(&self.coefficients).enumerate() {
            let sc = self.scale(j);
            s += b * (c - sc.mean) / sc.sd;
        }
        s + self.team_strength(team).unwrap_or(0.0)
    }

    /// Predicted `(p_win, p_draw, p_loss)` for the home side.
    pub fn probs(&self, m: &FeaturedMatch) -> [f64; 3] {
        let li = self.strength(&m.fixture.home_team, &m.features.home);
        let lj = self.strength(&m.fixture.away_team, &m.features.away);
        self.draw.probs(li - lj)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: BTModel = serde_json::from_str(s)?;
        m.spec.validate()?;
        m.draw.validate()?;
        Ok(m)
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

/// Matches reduced to covariate differences and team slots.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub n_cols: usize,
    /// Row-major `n × n_cols` standardized column differences.
    pub diffs: Vec<f64>,
    /// Home and away team slots (CS only).
    pub teams: Vec<(usize, usize)>,
    pub outcomes: Vec<Outcome>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.diffs[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn new(model: &BTModel, data: &[&FeaturedMatch]) -> Result<Self> {
        let spec = &model.spec;
        let nc = spec.n_columns();
        let cs = spec.kind == StrengthKind::Cs;
        let mut diffs = Vec::with_capacity(data.len() * nc);
        let mut teams = Vec::new();
        let mut outcomes = Vec::with_capacity(data.len());
        let (mut ch, mut ca) = (Vec::new(), Vec::new());
        for (i, m) in data.iter().enumerate() {
            let o = m.outcome().ok_or_else(|| {
                Error::InvalidInput(format!("match {i} has no final score"))
            })?;
            outcomes.push(o);
            spec.columns_into(&m.features.home, m.features.home.matches_played, &mut ch);
            spec.columns_into(&m.features.away, m.features.away.matches_played, &mut ca);
            for j in 0..nc {
                diffs.push((ch[j] - ca[j]) / model.scale(j).sd);
            }
            if cs {
                let slot = |t: &str| {
                    model.team_index.get(t).copied().ok_or_else(|| {
                        Error::InvalidInput(format!("match {i}: team `{t}` has no strength slot"))
                    })
                };
                teams.push((slot(&m.fixture.home_team)?, slot(&m.fixture.away_team)?));
            }
        }
        Ok(Prepared {
            n_cols: nc,
            diffs,
            teams,
            outcomes,
        })
    }
}

/// Log-likelihood with the indices of matches whose probability hit the
/// floor.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikValue {
    pub value: f64,
    pub floored: Vec<usize>,
}

/// Evaluates the log-likelihood and, if `grad` is given, its gradient in
/// the model's parameter vector.
pub(crate) fn eval(
    coefs: &[f64],
    alphas: &[f64],
    draw: &DrawRule,
    p: &Prepared,
    mut grad: Option<&mut [f64]>,
) -> Result<LoglikValue> {
    let nc = p.n_cols;
    let nt = alphas.len();
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|x| *x = 0.0);
    }
    let mut value = 0.0;
    let mut floored = Vec::new();
    let log_delta = match *draw {
        DrawRule::Davidson { delta } => delta.ln(),
        _ => 0.0,
    };
    for i in 0..p.len() {
        let row = p.row(i);
        let mut diff: f64 = row.iter().zip(coefs).map(|(d, b)| d * b).sum();
        if let Some(&(h, a)) = p.teams.get(i) {
            diff += alphas[h] - alphas[a];
        }
        if !diff.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        let o = p.outcomes[i];
        let (v, d_diff, d_draw, flo) = match *draw {
            DrawRule::Ordinal { delta0, delta1 } => {
                let t = ordinal_term(o, delta0 - diff, delta1 - diff);
                (t.value, -(t.d_a + t.d_b), [t.d_a, t.d_b], t.floored)
            }
            DrawRule::Davidson { delta } => {
                let t = davidson_term(o, diff, log_delta);
                (t.value, t.d_diff, [t.d_phi / delta, 0.0], t.floored)
            }
        };
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        if flo {
            floored.push(i);
        }
        value += v;
        if let Some(g) = grad.as_deref_mut() {
            for (gk, d) in g[..nc].iter_mut().zip(row) {
                *gk += d_diff * d;
            }
            if let Some(&(h, a)) = p.teams.get(i) {
                g[nc + h] += d_diff;
                g[nc + a] -= d_diff;
            }
            let off = nc + nt;
            g[off] += d_draw[0];
            if matches!(draw, DrawRule::Ordinal { .. }) {
                g[off + 1] += d_draw[1];
            }
        }
    }
    if !floored.is_empty() {
        log::warn!("{} match probabilities floored at 1e-300", floored.len());
    }
    Ok(LoglikValue { value, floored })
}

fn prepare_all(model: &BTModel, data: &[FeaturedMatch]) -> Result<Prepared> {
    let refs: Vec<&FeaturedMatch> = data.iter().collect();
    Prepared::new(model, &refs)
}

/// Log-likelihood of the observed outcomes, with the floored matches.
pub fn loglik_detailed(model: &BTModel, data: &[FeaturedMatch]) -> Result<LoglikValue> {
    let p = prepare_all(model, data)?;
    eval(&model.coefficients, &model.team_strengths, &model.draw, &p, None)
}

pub fn loglik(model: &BTModel, data: &[FeaturedMatch]) -> Result<f64> {
    Ok(loglik_detailed(model, data)?.value)
}

/// Analytic gradient of [`loglik`] in [`BTModel::theta`].
pub fn grad_loglik(model: &BTModel, data: &[FeaturedMatch]) -> Result<Vec<f64>> {
    let p = prepare_all(model, data)?;
    let mut g = vec![0.0; model.dim()];
    eval(&model.coefficients, &model.team_strengths, &model.draw, &p, Some(&mut g))?;
    Ok(g)
}
