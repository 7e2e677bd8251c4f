//! Outcome probabilities under the two draw rules, with the log-probability
//! derivatives used by the fits.

use crate::error::{Error, Result};
use crate::match_data::Outcome;

/// Logistic function, stable for large `|x|`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(logistic(x))`.
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Cumulative-link probabilities `(p_win, p_draw, p_loss)`.
///
/// With `Δ = λ_i - λ_j`, `p_loss = F(δ0 - Δ)` and `p_loss + p_draw =
/// F(δ1 - Δ)`, so a larger strength difference raises `p_win`.
pub fn probs_ordinal(lambda_i: f64, lambda_j: f64, delta0: f64, delta1: f64) -> Result<[f64; 3]> {
    if delta0 > delta1 || delta0.is_nan() || delta1.is_nan() {
        return Err(Error::InvalidInput(format!(
            "ordinal thresholds must satisfy δ0 ≤ δ1 (got {delta0}, {delta1})"
        )));
    }
    Ok(ordinal_triple(lambda_i - lambda_j, delta0, delta1))
}

pub(crate) fn ordinal_triple(diff: f64, delta0: f64, delta1: f64) -> [f64; 3] {
    let p_loss = logistic(delta0 - diff);
    let p_win = logistic(diff - delta1);
    let p_draw = (logistic(delta1 - diff) - p_loss).max(0.0);
    [p_win, p_draw, p_loss]
}

/// Davidson's tie extension: draws get mass proportional to
/// `δ·sqrt(π_i π_j)` with `π = exp(λ)`.
pub fn probs_davidson(lambda_i: f64, lambda_j: f64, delta: f64) -> Result<[f64; 3]> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "Davidson draw parameter must be non-negative (got {delta})"
        )));
    }
    Ok(davidson_triple(lambda_i - lambda_j, delta))
}

pub(crate) fn davidson_triple(diff: f64, delta: f64) -> [f64; 3] {
    // Dividing numerator and denominator by sqrt(π_i π_j) leaves
    // exp(±Δ/2) and δ.
    let h = 0.5 * diff;
    let m = h.abs();
    let w = (h - m).exp();
    let l = (-h - m).exp();
    let d = delta * (-m).exp();
    let den = w + l + d;
    [w / den, d / den, l / den]
}

/// Smallest probability allowed inside a logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

/// Log-probability of an outcome under the ordinal rule and its derivatives
/// with respect to `a = δ0 - Δ` and `b = δ1 - Δ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OrdinalTerm {
    pub value: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub d_aa: f64,
    pub d_ab: f64,
    pub d_bb: f64,
    pub floored: bool,
}

pub fn ordinal_term(outcome: Outcome, a: f64, b: f64) -> OrdinalTerm {
    let mut t = OrdinalTerm::default();
    match outcome {
        Outcome::HomeLoss => {
            t.value = log_logistic(a);
            let s = logistic(a);
            t.d_a = 1.0 - s;
            t.d_aa = -s * (1.0 - s);
        }
        Outcome::HomeWin => {
            t.value = log_logistic(-b);
            let s = logistic(b);
            t.d_b = -s;
            t.d_bb = -s * (1.0 - s);
        }
        Outcome::Draw => {
            let u = b - a;
            if u <= 0.0 {
                t.value = PROB_FLOOR.ln();
                t.floored = true;
                return t;
            }
            // log(F(b) - F(a)) = log(1 - e^{a-b}) + log F(b) + log F(-a)
            t.value = (-(-u).exp_m1()).ln() + log_logistic(b) + log_logistic(-a);
            let q = 1.0 / u.exp_m1();
            let sa = logistic(a);
            let sb = logistic(b);
            t.d_b = q + (1.0 - sb);
            t.d_a = -q - sa;
            let qq = q * (1.0 + q);
            t.d_bb = -qq - sb * (1.0 - sb);
            t.d_aa = -qq - sa * (1.0 - sa);
            t.d_ab = qq;
        }
    }
    if !(t.value >= PROB_FLOOR.ln()) {
        t.value = PROB_FLOOR.ln();
        t.floored = true;
    }
    t
}

/// Log-probability under the Davidson rule and its derivatives with respect
/// to `Δ` and `φ = log δ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DavidsonTerm {
    pub value: f64,
    pub d_diff: f64,
    pub d_phi: f64,
    pub floored: bool,
}

pub fn davidson_term(outcome: Outcome, diff: f64, log_delta: f64) -> DavidsonTerm {
    let h = 0.5 * diff;
    let m = h.max(-h).max(log_delta);
    let ew = (h - m).exp();
    let el = (-h - m).exp();
    let ed = (log_delta - m).exp();
    let den = ew + el + ed;
    let log_den = m + den.ln();
    let (pw, pd, pl) = (ew / den, ed / den, el / den);
    let d_log_den_diff = 0.5 * (pw - pl);
    let (value, d_diff, d_phi) = match outcome {
        Outcome::HomeWin => (h - log_den, 0.5 - d_log_den_diff, -pd),
        Outcome::Draw => (log_delta - log_den, -d_log_den_diff, 1.0 - pd),
        Outcome::HomeLoss => (-h - log_den, -0.5 - d_log_den_diff, -pd),
    };
    if value >= PROB_FLOOR.ln() {
        DavidsonTerm {
            value,
            d_diff,
            d_phi,
            floored: false,
        }
    } else {
        DavidsonTerm {
            value: PROB_FLOOR.ln(),
            d_diff,
            d_phi,
            floored: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ordinal_examples() {
        let p = probs_ordinal(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(p, [0.5, 0.0, 0.5]);

        let p = probs_ordinal(0.0, 0.0, -0.5, 0.5).unwrap();
        // direct evaluation of the two logistics
        let draw = 1.0 / (1.0 + (-0.5f64).exp()) - 1.0 / (1.0 + 0.5f64.exp());
        assert!(close(p[1], draw, 1e-15));
        assert!(close(p[1], 0.244_918_662_403_709_1, 1e-12));
        assert!(close(p[0], 0.377_540_668_798_145_4, 1e-12));
        assert!(close(p[0], p[2], 1e-15));

        let p = probs_ordinal(800.0, 0.0, -0.5, 0.5).unwrap();
        assert_eq!(p, [1.0, 0.0, 0.0]);
        let p = probs_ordinal(-700.0, 0.0, -0.5, 0.5).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!(close(p[2], 1.0, 1e-15));

        assert!(probs_ordinal(0.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn davidson_examples() {
        let p = probs_davidson(0.3, 0.3, 1.0).unwrap();
        for x in p {
            assert!(close(x, 1.0 / 3.0, 1e-15));
        }
        let p = probs_davidson(2f64.ln(), 0.0, 1.0).unwrap();
        let den = 3.0 + 2f64.sqrt();
        assert!(close(p[0], 2.0 / den, 1e-15));
        assert!(close(p[1], 2f64.sqrt() / den, 1e-15));
        assert!(close(p[0], 0.4531, 1e-4));
        assert!(close(p[1], 0.3204, 1e-4));

        let p = probs_davidson(1.2, 0.4, 0.0).unwrap();
        assert_eq!(p[1], 0.0);
        assert!(close(p[0], logistic(0.8), 1e-15));

        assert!(probs_davidson(0.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn ordinal_term_matches_probabilities() {
        let (d0, d1, diff) = (-0.3, 0.7, 0.25);
        let p = probs_ordinal(diff, 0.0, d0, d1).unwrap();
        for o in [Outcome::HomeWin, Outcome::Draw, Outcome::HomeLoss] {
            let t = ordinal_term(o, d0 - diff, d1 - diff);
            assert!(close(t.value, p[o.triple_index()].ln(), 1e-14));
        }
    }

    #[test]
    fn ordinal_term_derivatives() {
        let (a, b) = (-0.4, 0.9);
        let h = 1e-6;
        for o in [Outcome::HomeWin, Outcome::Draw, Outcome::HomeLoss] {
            let t = ordinal_term(o, a, b);
            let fa = (ordinal_term(o, a + h, b).value - ordinal_term(o, a - h, b).value) / (2.0 * h);
            let fb = (ordinal_term(o, a, b + h).value - ordinal_term(o, a, b - h).value) / (2.0 * h);
            assert!(close(t.d_a, fa, 1e-8), "{o:?}");
            assert!(close(t.d_b, fb, 1e-8), "{o:?}");
            let faa = (ordinal_term(o, a + h, b).d_a - ordinal_term(o, a - h, b).d_a) / (2.0 * h);
            let fab = (ordinal_term(o, a, b + h).d_a - ordinal_term(o, a, b - h).d_a) / (2.0 * h);
            let fbb = (ordinal_term(o, a, b + h).d_b - ordinal_term(o, a, b - h).d_b) / (2.0 * h);
            assert!(close(t.d_aa, faa, 1e-7), "{o:?}");
            assert!(close(t.d_ab, fab, 1e-7), "{o:?}");
            assert!(close(t.d_bb, fbb, 1e-7), "{o:?}");
        }
    }

    #[test]
    fn davidson_term_matches_probabilities() {
        let (diff, phi) = (0.8, -0.2f64);
        let p = probs_davidson(diff, 0.0, phi.exp()).unwrap();
        for o in [Outcome::HomeWin, Outcome::Draw, Outcome::HomeLoss] {
            let t = davidson_term(o, diff, phi);
            assert!(close(t.value, p[o.triple_index()].ln(), 1e-14));
            let h = 1e-6;
            let fd = (davidson_term(o, diff + h, phi).value - davidson_term(o, diff - h, phi).value) / (2.0 * h);
            let fp = (davidson_term(o, diff, phi + h).value - davidson_term(o, diff, phi - h).value) / (2.0 * h);
            assert!(close(t.d_diff, fd, 1e-8));
            assert!(close(t.d_phi, fp, 1e-8));
        }
    }
}
