//! Scoring rules, jackknife variances and random-effects pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::golden_max;

const PROB_TOL: f64 = 1e-9;

fn check_triple(p: &[f64; 3], a: &[f64; 3]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < -PROB_TOL || *v > 1.0 + PROB_TOL) {
        return Err(Error::InvalidInput(format!("probabilities out of range: {p:?}")));
    }
    if (p.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidInput(format!("probabilities do not sum to 1: {p:?}")));
    }
    let ones = a.iter().filter(|v| **v == 1.0).count();
    let zeros = a.iter().filter(|v| **v == 0.0).count();
    if ones != 1 || zeros != 2 {
        return Err(Error::InvalidInput(format!("outcome is not one-hot: {a:?}")));
    }
    Ok(())
}

/// Ranked probability score over the ordered categories (win, draw, loss).
pub fn rps(p: &[f64; 3], a: &[f64; 3]) -> Result<f64> {
    check_triple(p, a)?;
    let c1 = p[0] - a[0];
    let c2 = c1 + p[1] - a[1];
    Ok((c1 * c1 + c2 * c2) / 2.0)
}

/// Index of the largest probability; ties go to win, then draw.
pub fn predicted_category(p: &[f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

/// 1 when the most probable category occurred.
pub fn accuracy(p: &[f64; 3], a: &[f64; 3]) -> Result<f64> {
    check_triple(p, a)?;
    Ok(f64::from(u8::from(a[predicted_category(p)] == 1.0)))
}

/// Leave-one-out jackknife variance of `stat(mean)`, with
/// `s = stat(mean of all values)`.
pub fn jackknife_var_of(v: &[f64], stat: impl Fn(f64) -> f64) -> Result<f64> {
    let n = v.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("jackknife needs at least 2 values, got {n}")));
    }
    let total: f64 = v.iter().sum();
    let nf = n as f64;
    let s = stat(total / nf);
    let ss: f64 = v
        .iter()
        .map(|x| {
            let loo = stat((total - x) / (nf - 1.0));
            (loo - s).powi(2)
        })
        .sum();
    Ok(nf / (nf - 1.0) * ss)
}

/// Leave-one-match-out jackknife variance of the mean.
pub fn jackknife_var(v: &[f64]) -> Result<f64> {
    jackknife_var_of(v, |m| m)
}

/// Pooled estimate of a random-effects model `s_i ~ N(α + U_i, σ_i²)`,
/// `U_i ~ N(0, τ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResult {
    pub alpha_hat: f64,
    pub tau2_hat: f64,
    pub se: f64,
    pub weights: Vec<f64>,
}

fn pooled(s: &[f64], var: &[f64], tau2: f64) -> (f64, f64, Vec<f64>) {
    let w: Vec<f64> = var.iter().map(|v| 1.0 / (v + tau2)).collect();
    let sw: f64 = w.iter().sum();
    let alpha = w.iter().zip(s).map(|(w, s)| w * s).sum::<f64>() / sw;
    (alpha, sw, w)
}

/// Profile log-likelihood of τ².
pub fn profile_loglik(s: &[f64], var: &[f64], tau2: f64) -> f64 {
    let (alpha, _, _) = pooled(s, var, tau2);
    -0.5 * s
        .iter()
        .zip(var)
        .map(|(s, v)| (v + tau2).ln() + (s - alpha).powi(2) / (v + tau2))
        .sum::<f64>()
}

/// Random-effects pooling with τ² at its profile maximum likelihood
/// estimate on `[0, ∞)`.
pub fn meta_analyze(s: &[f64], var: &[f64]) -> Result<MetaResult> {
    if s.len() != var.len() {
        return Err(Error::DimensionMismatch {
            expected: s.len(),
            got: var.len(),
        });
    }
    if s.len() < 2 {
        return Err(Error::InvalidInput(format!("pooling needs at least 2 experiments, got {}", s.len())));
    }
    if let Some(v) = var.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!("experiment variance must be positive, got {v}")));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite experiment summary".into()));
    }
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let spread = s.iter().map(|x| (x - mean).powi(2)).fold(0.0, f64::max);
    let vmax = var.iter().copied().fold(0.0, f64::max);
    // the profile decreases once τ² dwarfs every squared deviation
    let upper = 10.0 * (spread + vmax);
    let f = |t: f64| profile_loglik(s, var, t);
    let n_grid = 400;
    let grid: Vec<f64> = (0..=n_grid).map(|i| upper * (i as f64 / n_grid as f64).powi(2)).collect();
    let best = (0..grid.len())
        .max_by(|&a, &b| f(grid[a]).total_cmp(&f(grid[b])))
        .expect("grid is non-empty");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(n_grid)];
    let mut tau2 = golden_max(f, lo, hi, 1e-10 * (1.0 + upper));
    if f(0.0) >= f(tau2) {
        tau2 = 0.0;
    }
    let (alpha_hat, sw, weights) = pooled(s, var, tau2);
    Ok(MetaResult {
        alpha_hat,
        tau2_hat: tau2,
        se: sw.powf(-0.5),
        weights,
    })
}

/// Mean home and away goals of the training matches.
pub fn baseline_goal_predictor(scores: &[(u32, u32)]) -> Result<[f64; 2]> {
    if scores.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let n = scores.len() as f64;
    let h = scores.iter().map(|s| f64::from(s.0)).sum::<f64>() / n;
    let a = scores.iter().map(|s| f64::from(s.1)).sum::<f64>() / n;
    Ok([h, a])
}
