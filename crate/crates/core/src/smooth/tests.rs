use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bt::probs_ordinal;
use crate::features::{FeatureVector, MatchFeatures};
use crate::match_data::Fixture;

fn fv(home: bool, form: f64, gd: i32, played: u32) -> FeatureVector {
    FeatureVector {
        home: u8::from(home),
        form,
        goal_diff: gd,
        matches_played: played,
        ..Default::default()
    }
}

fn fm(hx: FeatureVector, ax: FeatureVector, score: Option<(u32, u32)>) -> FeaturedMatch {
    FeaturedMatch {
        fixture: Fixture {
            league: "L".into(),
            season: "2020".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            home_team: "A".into(),
            away_team: "B".into(),
        },
        features: MatchFeatures { home: hx, away: ax },
        score,
    }
}

/// Matches whose strength difference is `g(form diff) + 0.03·(gd diff)`,
/// with ordinal thresholds (-0.4, 0.3).
fn simulate(n: usize, seed: u64, g: impl Fn(f64) -> f64) -> Vec<FeaturedMatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let played = rng.random_range(0..30);
            let hx = fv(true, rng.random(), rng.random_range(-15..15), played);
            let ax = fv(false, rng.random(), rng.random_range(-15..15), played);
            let d = g(hx.form - ax.form) + 0.03 * f64::from(hx.goal_diff - ax.goal_diff);
            let p = probs_ordinal(d, 0.0, -0.4, 0.3).unwrap();
            let u: f64 = rng.random();
            let s = if u < p[0] {
                (2, 1)
            } else if u < p[0] + p[1] {
                (1, 1)
            } else {
                (0, 1)
            };
            fm(hx, ax, Some(s))
        })
        .collect()
}

fn refs(d: &[FeaturedMatch]) -> Vec<&FeaturedMatch> {
    d.iter().collect()
}

#[test]
fn design_shapes_and_dropped_terms() {
    let data = simulate(300, 1, |x| x);
    let terms = [TermSpec::univariate(1), TermSpec::univariate(4), TermSpec::with_m(7)];
    let d = build_design(&refs(&data), &terms, &AfdConfig::default()).unwrap();
    assert_eq!(d.dropped, vec![1]);
    assert!(d.warnings.iter().any(|w| w.contains("constant difference")));
    assert_eq!(d.terms.len(), 2);
    assert_eq!(d.terms[0].dim(), 10);
    assert_eq!(d.terms[1].dim(), 50);
    // one constraint per univariate term, one per m-basis function for tensors
    assert_eq!(d.blocks, vec![(0, 9), (9, 45)]);
    assert_eq!(d.x.ncols(), 54);
    let p = &d.penalty;
    assert!((p - p.transpose()).amax() < 1e-12);
}

#[test]
fn smooths_vanish_at_zero_difference() {
    let data = simulate(400, 2, |x| 0.8 * x);
    let terms = [TermSpec::univariate(4), TermSpec::with_m(7)];
    let mut cfg = AfdConfig::default();
    cfg.k_grid = vec![1.0];
    let model = fit_penalized(&refs(&data), &terms, &cfg).unwrap();
    let zero = fm(fv(true, 0.4, 3, 12), fv(false, 0.4, 3, 12), None);
    assert!(model.diff(&zero).abs() < 1e-12);
    let p = predict_afd(&model, &[zero])[0].probs;
    let neutral = probs_ordinal(0.0, 0.0, model.delta0, model.delta1).unwrap();
    for k in 0..3 {
        assert!((p[k] - neutral[k]).abs() < 1e-12);
    }
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn gradient_and_information_match_differences() {
    let data = simulate(200, 3, |x| x - x * x);
    let terms = [TermSpec::univariate(4), TermSpec::with_m(7)];
    let d = build_design(&refs(&data), &terms, &AfdConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..3 {
        let w: Vec<f64> = (0..d.dim()).map(|_| rng.random_range(-0.3..0.3)).collect();
        let k = 0.7;
        let g = d.grad_penalized_loglik(&w, k);
        let info = d.information(&w);
        let h = 1e-6;
        for j in 0..d.dim() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (d.penalized_loglik(&wp, k) - d.penalized_loglik(&wm, k)) / (2.0 * h);
            assert!((fd - g[j]).abs() / g[j].abs().max(1.0) < 1e-5, "coord {j}");
            let gp = d.grad_penalized_loglik(&wp, k);
            let gm = d.grad_penalized_loglik(&wm, k);
            let pen = d.full_penalty(k);
            for i in 0..d.dim() {
                let fdh = -(gp[i] - gm[i]) / (2.0 * h) - pen[(i, j)];
                assert!((fdh - info[(i, j)]).abs() / info[(i, j)].abs().max(1.0) < 1e-4);
            }
        }
    }
}

#[test]
fn penalty_limits_and_edf() {
    let data = simulate(600, 5, |x| 1.5 * (x - 0.5).powi(2));
    let terms = [TermSpec::univariate(4), TermSpec::with_m(7)];
    let cfg = AfdConfig::default();
    let d = build_design(&refs(&data), &terms, &cfg).unwrap();

    let stiff = fit_fixed_k(&d, 1e9, &cfg).unwrap();
    assert!((stiff.term_edf[0] - 1.0).abs() < 0.1, "{:?}", stiff.term_edf);
    assert!((stiff.term_edf[1] - 2.0).abs() < 0.1, "{:?}", stiff.term_edf);

    // k -> 0 recovers the unpenalized likelihood (univariate terms keep the
    // coefficients bounded)
    let du = build_design(&refs(&data), &[TermSpec::univariate(4), TermSpec::univariate(7)], &cfg).unwrap();
    let loose = fit_fixed_k(&du, 1e-13, &cfg).unwrap();
    assert!(loose.converged);
    let mut w: Vec<f64> = Vec::new();
    for (ti, t) in loose.terms.iter().enumerate() {
        let full = DVector::from_column_slice(&t.coefficients);
        w.extend((du.z[ti].transpose() * full).iter());
    }
    w.push(loose.delta0);
    w.push((loose.delta1 - loose.delta0).ln());
    let pen = du.penalized_loglik(&w, 1e-13);
    assert!((pen - loose.loglik).abs() < 1e-6, "{pen} vs {}", loose.loglik);
    let unpen = fit_fixed_k(&d, 1e-10, &cfg).unwrap();

    let mut prev = f64::INFINITY;
    let mut cfg2 = cfg.clone();
    cfg2.k_grid = log_grid(1e-3, 1e3, 7);
    let fit = fit_penalized(&refs(&data), &terms, &cfg2).unwrap();
    assert_eq!(fit.gcv_trace.len(), 7);
    for p in &fit.gcv_trace {
        assert!(p.converged);
        assert!(p.edf <= prev + 1e-8, "edf not monotone: {:?}", fit.gcv_trace);
        prev = p.edf;
    }
    // penalized likelihood never exceeds the unpenalized maximum
    for p in &fit.gcv_trace {
        assert!(p.penalized_loglik <= unpen.loglik + 1e-8);
    }
    let best = fit.gcv_trace.iter().map(|p| p.gcv).fold(f64::INFINITY, f64::min);
    let chosen = fit.gcv_trace.iter().find(|p| p.k == fit.k).unwrap();
    assert_eq!(chosen.gcv, best);
}

#[test]
fn mirrored_fixture_swaps_outcomes() {
    // a hand-built odd smooth with symmetric thresholds
    let basis = BSplineBasis::uniform(-1.0, 1.0, 6, 3);
    let coefs: Vec<f64> = (0..6).map(|j| -1.0 + 0.4 * j as f64).collect();
    let model = AfdModel {
        terms: vec![SmoothTerm {
            feature_id: 4,
            interacts_with_m: false,
            basis_x: basis,
            basis_m: None,
            coefficients: coefs,
        }],
        dropped: vec![],
        delta0: -0.3,
        delta1: 0.3,
        k: 1.0,
        edf: 0.0,
        term_edf: vec![],
        loglik: 0.0,
        converged: true,
        gcv_trace: vec![],
        warnings: vec![],
        term_covariance: vec![],
    };
    let a = fm(fv(true, 0.9, 0, 5), fv(false, 0.2, 0, 5), None);
    let b = fm(fv(true, 0.2, 0, 5), fv(false, 0.9, 0, 5), None);
    let (pa, pb) = (model.probs(&a), model.probs(&b));
    assert!((pa[0] - pb[2]).abs() < 1e-12);
    assert!((pa[1] - pb[1]).abs() < 1e-12);
    assert!((pa[2] - pb[0]).abs() < 1e-12);
}

#[test]
fn quadratic_smooth_is_recovered() {
    let g = |x: f64| 1.2 * x - 1.5 * x * x;
    let data = simulate(3000, 6, g);
    let mut cfg = AfdConfig::default();
    cfg.k_grid = log_grid(1e-2, 1e3, 11);
    let model = fit_penalized(&refs(&data), &[TermSpec::univariate(4), TermSpec::univariate(7)], &cfg).unwrap();
    for i in 1..10 {
        let x = -0.9 + 1.8 * i as f64 / 10.0;
        let (v, se) = model.term_curve(0, x, 0.0);
        let se = se.unwrap();
        assert!((v - g(x)).abs() < 3.0 * se + 0.05, "x={x}: {v} vs {} (se {se})", g(x));
    }
    let back = AfdModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(back.terms, model.terms);
}

#[test]
fn empty_or_bad_grid() {
    let data = simulate(50, 7, |x| x);
    let mut cfg = AfdConfig::default();
    cfg.k_grid = vec![];
    assert!(fit_penalized(&refs(&data), &[TermSpec::univariate(4)], &cfg).is_err());
    assert!(build_design(&refs(&data), &[TermSpec::univariate(1)], &AfdConfig::default()).is_err());
    assert_eq!(log_grid(1e-4, 1e4, 17).len(), 17);
    assert!((log_grid(1e-4, 1e4, 17)[8] - 1.0).abs() < 1e-12);
}
