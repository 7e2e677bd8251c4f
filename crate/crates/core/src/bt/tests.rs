use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::{FeatureVector, FeaturedMatch, MatchFeatures};
use crate::match_data::Fixture;
use crate::prediction::Flag;

fn date(day: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(day)
}

fn fv(home: bool, points: u32, gd: i32, played: u32) -> FeatureVector {
    FeatureVector {
        home: u8::from(home),
        points_tally: points,
        goal_diff: gd,
        matches_played: played,
        ..Default::default()
    }
}

fn fm(league: &str, day: i64, h: &str, a: &str, hx: FeatureVector, ax: FeatureVector, score: Option<(u32, u32)>) -> FeaturedMatch {
    FeaturedMatch {
        fixture: Fixture {
            league: league.into(),
            season: "2020".into(),
            date: date(day),
            home_team: h.into(),
            away_team: a.into(),
        },
        features: MatchFeatures { home: hx, away: ax },
        score,
    }
}

fn score_for(probs: [f64; 3], u: f64) -> (u32, u32) {
    if u < probs[0] {
        (1, 0)
    } else if u < probs[0] + probs[1] {
        (0, 0)
    } else {
        (0, 1)
    }
}

/// Matches between random pairs with random covariates, outcomes drawn from
/// `truth`.
fn simulate(truth: &BTModel, teams: &[&str], n: usize, seed: u64) -> Vec<FeaturedMatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let h = rng.random_range(0..teams.len());
            let mut a = rng.random_range(0..teams.len() - 1);
            if a >= h {
                a += 1;
            }
            let played = rng.random_range(0..34);
            let hx = fv(true, rng.random_range(0..60), rng.random_range(-20..20), played);
            let ax = fv(false, rng.random_range(0..60), rng.random_range(-20..20), played);
            let mut m = fm("L", i as i64 / 10, teams[h], teams[a], hx, ax, None);
            m.score = Some(score_for(truth.probs(&m), rng.random()));
            m
        })
        .collect()
}

#[test]
fn strength_examples() {
    let bl = StrengthSpec::bl();
    assert!((strength(&bl, &[0.3], &fv(true, 0, 0, 0), 0).unwrap() - 0.3).abs() < 1e-15);
    assert_eq!(strength(&bl, &[0.3], &fv(false, 0, 0, 0), 0).unwrap(), 0.0);

    let cs = StrengthSpec::cs();
    assert!((strength(&cs, &[0.2, 0.5], &fv(true, 0, 0, 0), 0).unwrap() - 0.7).abs() < 1e-15);

    let tvc = StrengthSpec::tvc(&[6], &[6]);
    let s = strength(&tvc, &[0.1, 0.01], &fv(false, 10, 0, 5), 5).unwrap();
    assert!((s - 1.5).abs() < 1e-12);

    assert!(matches!(
        strength(&tvc, &[0.1], &fv(false, 10, 0, 5), 5),
        Err(crate::Error::DimensionMismatch { expected: 2, got: 1 })
    ));
}

#[test]
fn spec_invariants() {
    assert!(StrengthSpec::lf(&[1, 6]).validate().is_ok());
    assert!(StrengthSpec::lf(&[14]).validate().is_err());
    assert!(StrengthSpec::tvc(&[6], &[7]).validate().is_err());
    let mut s = StrengthSpec::lf(&[1, 6]);
    s.varying_ids = vec![6];
    assert!(s.validate().is_err());
    let mut s = StrengthSpec::bl();
    s.feature_ids.push(6);
    assert!(s.validate().is_err());
}

#[test]
fn loglik_examples() {
    let mut m = BTModel::new(StrengthSpec::bl(), DrawRule::Davidson { delta: 1.0 }).unwrap();
    let draw = fm("L", 0, "A", "B", fv(false, 0, 0, 0), fv(false, 0, 0, 0), Some((1, 1)));
    let ll = loglik(&m, std::slice::from_ref(&draw)).unwrap();
    assert!((ll - (1.0f64 / 3.0).ln()).abs() < 1e-14);
    assert!((ll + 1.0986).abs() < 1e-4);

    let win = fm("L", 1, "A", "B", fv(true, 0, 0, 0), fv(false, 0, 0, 0), Some((2, 0)));
    m.coefficients = vec![0.4];
    let a = loglik(&m, std::slice::from_ref(&draw)).unwrap();
    let b = loglik(&m, std::slice::from_ref(&win)).unwrap();
    let both = loglik(&m, &[draw.clone(), win.clone()]).unwrap();
    assert!((a + b - both).abs() < 1e-14);

    // probability one for the observed outcome
    m.draw = DrawRule::Davidson { delta: 0.0 };
    m.coefficients = vec![800.0];
    assert_eq!(loglik(&m, std::slice::from_ref(&win)).unwrap(), 0.0);

    // probability zero is floored and reported
    let lose = fm("L", 2, "A", "B", fv(true, 0, 0, 0), fv(false, 0, 0, 0), Some((0, 2)));
    let v = loglik_detailed(&m, &[lose]).unwrap();
    assert_eq!(v.floored, vec![0]);
    assert!((v.value - PROB_FLOOR.ln()).abs() < 1e-9);
}

fn random_model(spec: StrengthSpec, draw: DrawKind, rng: &mut ChaCha8Rng, teams: &[&str]) -> BTModel {
    let rule = match draw {
        DrawKind::Ordinal => DrawRule::Ordinal {
            delta0: rng.random_range(-0.8..-0.1),
            delta1: rng.random_range(0.1..0.8),
        },
        DrawKind::Davidson => DrawRule::Davidson {
            delta: rng.random_range(0.3..1.5),
        },
    };
    let cs = spec.kind == StrengthKind::Cs;
    let mut m = BTModel::new(spec, rule).unwrap();
    if cs {
        m = m.with_teams(teams.iter().copied());
        for (i, a) in m.team_strengths.iter_mut().enumerate() {
            *a = if i == 0 { 0.0 } else { rng.random_range(-1.0..1.0) };
        }
    }
    for c in &mut m.coefficients {
        *c = rng.random_range(-0.5..0.5) * 0.1;
    }
    m
}

#[test]
fn gradient_matches_central_differences() {
    let teams = ["A", "B", "C", "D", "E"];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let specs = [
        StrengthSpec::bl(),
        StrengthSpec::cs(),
        StrengthSpec::lf(&[1, 6, 7]),
        StrengthSpec::tvc(&[1, 6, 7], &[6]),
    ];
    for spec in specs {
        for draw in [DrawKind::Ordinal, DrawKind::Davidson] {
            let model = random_model(spec.clone(), draw, &mut rng, &teams);
            let data = simulate(&model, &teams, 60, rng.random());
            let g = grad_loglik(&model, &data).unwrap();
            assert_eq!(g.len(), model.dim());
            let theta = model.theta();
            for k in 0..theta.len() {
                let h = 1e-6;
                let mut mp = model.clone();
                let mut t = theta.clone();
                t[k] += h;
                mp.set_theta(&t).unwrap();
                let fp = loglik(&mp, &data).unwrap();
                t[k] -= 2.0 * h;
                mp.set_theta(&t).unwrap();
                let fm_ = loglik(&mp, &data).unwrap();
                let fd = (fp - fm_) / (2.0 * h);
                let rel = (fd - g[k]).abs() / g[k].abs().max(1.0);
                assert!(rel < 1e-5, "{spec:?} {draw:?} coord {k}: {fd} vs {}", g[k]);
            }
            if spec.kind == StrengthKind::Cs {
                let nc = model.coefficients.len();
                let s: f64 = g[nc..nc + teams.len()].iter().sum();
                assert!(s.abs() < 1e-10, "team gradient sum {s}");
            }
        }
    }
}

#[test]
fn translation_invariance_cs() {
    let teams = ["A", "B", "C", "D"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for draw in [DrawKind::Ordinal, DrawKind::Davidson] {
        let model = random_model(StrengthSpec::cs(), draw, &mut rng, &teams);
        let data = simulate(&model, &teams, 20, 3);
        let mut shifted = model.clone();
        shifted.team_strengths.iter_mut().for_each(|a| *a += 2.5);
        for (p, q) in predict(&model, &data).iter().zip(predict(&shifted, &data)) {
            for k in 0..3 {
                assert!((p.probs[k] - q.probs[k]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn bl_fit_without_home_effect() {
    // Under Davidson draws β is a pure home effect; the ordinal rule with
    // δ0 fixed would fold the threshold midpoint into it.
    let truth = BTModel::new(StrengthSpec::bl(), DrawRule::Davidson { delta: 0.8 }).unwrap();
    let teams: Vec<String> = (0..10).map(|i| format!("T{i}")).collect();
    let names: Vec<&str> = teams.iter().map(String::as_str).collect();
    let data = simulate(&truth, &names, 2000, 21);
    let refs: Vec<&FeaturedMatch> = data.iter().collect();
    let fit = fit_bt(&StrengthSpec::bl(), DrawKind::Davidson, &refs, None, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.gradient_norm < 1e-6);
    let beta = fit.model.coefficients[0];
    let se = fit.coefficient_se(0).unwrap();
    assert!(beta.abs() < 3.0 * se, "β̂ = {beta}, se = {se}");
}

#[test]
fn gradient_vanishes_and_optimum_is_local_max() {
    let teams = ["A", "B", "C", "D", "E", "F"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for draw in [DrawKind::Ordinal, DrawKind::Davidson] {
        let mut truth = random_model(StrengthSpec::lf(&[1, 6, 7]), draw, &mut rng, &teams);
        truth.coefficients = vec![0.4, 0.02, 0.03];
        let data = simulate(&truth, &teams, 800, 99);
        let fit = fit_ml(
            &StrengthSpec::lf(&[1, 6, 7]),
            draw,
            &data,
            date(10_000),
            &WindowConfig::default(),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(fit.converged());
        let f = &fit.fits[0];
        let g = grad_loglik(&f.model, &data).unwrap();
        // the fixed δ0 is not a free parameter
        let free: Vec<f64> = match draw {
            DrawKind::Ordinal => g.iter().enumerate().filter(|(i, _)| *i != 3).map(|(_, v)| *v).collect(),
            DrawKind::Davidson => g.clone(),
        };
        assert!(free.iter().all(|x| x.abs() < 1e-5), "{g:?}");
        let ll = f.loglik;
        let theta = f.model.theta();
        for k in 0..theta.len() {
            if draw == DrawKind::Ordinal && k == 3 {
                continue;
            }
            for s in [-1e-2, 1e-2] {
                let mut m = f.model.clone();
                let mut t = theta.clone();
                t[k] += s;
                m.set_theta(&t).unwrap();
                assert!(loglik(&m, &data).unwrap() < ll);
            }
        }
    }
}

#[test]
fn intercept_alternatives_agree() {
    let teams = ["A", "B", "C", "D", "E", "F"];
    let mut truth = BTModel::new(
        StrengthSpec::lf(&[1, 6]),
        DrawRule::Ordinal {
            delta0: -0.3,
            delta1: 0.4,
        },
    )
    .unwrap();
    truth.coefficients = vec![0.35, 0.03];
    let data = simulate(&truth, &teams, 1500, 4);
    let refs: Vec<&FeaturedMatch> = data.iter().collect();
    let a = fit_bt(&StrengthSpec::lf(&[1, 6]), DrawKind::Ordinal, &refs, None, &FitOptions::default()).unwrap();
    let b = fit_bt(
        &StrengthSpec::lf(&[6]),
        DrawKind::Ordinal,
        &refs,
        None,
        &FitOptions {
            fix_delta0: None,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(a.converged && b.converged);
    for (p, q) in predict(&a.model, &data).iter().zip(predict(&b.model, &data)) {
        for k in 0..3 {
            assert!((p.probs[k] - q.probs[k]).abs() < 1e-6, "{:?} {:?}", p.probs, q.probs);
        }
    }
}

#[test]
fn single_match_league() {
    let m = fm("L", 0, "A", "B", fv(true, 0, 0, 0), fv(false, 0, 0, 0), Some((1, 0)));
    let data = vec![m];
    let bl = fit_ml(&StrengthSpec::bl(), DrawKind::Ordinal, &data, date(5), &WindowConfig::default(), &FitOptions::default()).unwrap();
    assert!(bl.converged());
    let cs = fit_ml(&StrengthSpec::cs(), DrawKind::Ordinal, &data, date(5), &WindowConfig::default(), &FitOptions::default()).unwrap();
    let f = &cs.fits[0];
    assert!(f.warnings.iter().any(|w| w.contains("non-identifiable")));
    assert!(f.model.theta().iter().all(|x| x.is_finite()));
    assert_eq!(f.model.team_strength("A"), Some(0.0));
}

#[test]
fn empty_window_is_an_error() {
    let m = fm("L", 10, "A", "B", fv(true, 0, 0, 0), fv(false, 0, 0, 0), Some((1, 0)));
    let r = fit_ml(&StrengthSpec::bl(), DrawKind::Ordinal, &[m], date(10), &WindowConfig::default(), &FitOptions::default());
    assert!(matches!(r, Err(crate::Error::Empty(_))));
}

#[test]
fn windows() {
    let teams = ["A", "B", "C", "D"];
    let truth = BTModel::new(StrengthSpec::bl(), DrawRule::Davidson { delta: 0.8 }).unwrap();
    let data = simulate(&truth, &teams, 500, 1);
    let fit = fit_ml(
        &StrengthSpec::bl(),
        DrawKind::Davidson,
        &data,
        date(10_000),
        &WindowConfig {
            max_matches: 120,
            ..Default::default()
        },
        &FitOptions::default(),
    )
    .unwrap();
    assert_eq!(fit.fits[0].n_matches, 120);

    // CS: only the last twelve months and one model per league
    let mut data = Vec::new();
    for (i, d) in [0i64, 100, 400, 500, 700].iter().enumerate() {
        for l in ["X", "Y"] {
            let s = if i % 2 == 0 { (1, 0) } else { (0, 1) };
            data.push(fm(l, *d, "A", "B", fv(true, 0, 0, 0), fv(false, 0, 0, 0), Some(s)));
            data.push(fm(l, *d, "C", "A", fv(true, 0, 0, 0), fv(false, 0, 0, 0), Some(s)));
        }
    }
    let fit = fit_ml(&StrengthSpec::cs(), DrawKind::Ordinal, &data, date(700), &WindowConfig::default(), &FitOptions::default()).unwrap();
    assert_eq!(fit.fits.len(), 2);
    assert_eq!(fit.fits[0].model.league.as_deref(), Some("X"));
    // dates 400 and 500 are within a year before day 700; 700 itself is not
    assert!(fit.fits.iter().all(|f| f.n_matches == 4));
}

#[test]
fn cs_recovers_strengths() {
    let teams: Vec<String> = (0..8).map(|i| format!("T{i}")).collect();
    let names: Vec<&str> = teams.iter().map(String::as_str).collect();
    let mut truth = BTModel::new(
        StrengthSpec::cs(),
        DrawRule::Ordinal {
            delta0: 0.0,
            delta1: 0.6,
        },
    )
    .unwrap()
    .with_teams(names.iter().copied());
    truth.coefficients = vec![0.3];
    for (i, a) in truth.team_strengths.iter_mut().enumerate() {
        *a = 0.15 * i as f64;
    }
    let data = simulate(&truth, &names, 1500, 77);
    let refs: Vec<&FeaturedMatch> = data.iter().collect();
    let fit = fit_bt(&StrengthSpec::cs(), DrawKind::Ordinal, &refs, None, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.model.team_strengths[0], 0.0);
    assert_eq!(fit.model.reference_team.as_deref(), Some("T0"));
    for t in &names[1..] {
        let est = fit.model.team_strength(t).unwrap() - fit.model.team_strength("T0").unwrap();
        let tru = truth.team_strength(t).unwrap();
        let se = fit.strength_diff_se(t, "T0").unwrap();
        assert!((est - tru).abs() < 4.0 * se, "{t}: {est} vs {tru} (se {se})");
    }
}

#[test]
fn prediction_flags_and_examples() {
    let mut m = BTModel::new(
        StrengthSpec::cs(),
        DrawRule::Ordinal {
            delta0: -0.5,
            delta1: 0.5,
        },
    )
    .unwrap()
    .with_teams(["A", "B"]);
    m.coefficients = vec![0.4];
    m.league = Some("L".into());
    let neutral = fm("L", 0, "A", "B", fv(false, 0, 0, 0), fv(false, 0, 0, 0), None);
    let p = predict(&m, std::slice::from_ref(&neutral))[0].clone();
    assert!((p.probs[0] - 0.377_540_668_798_145_4).abs() < 1e-12);
    assert!((p.probs[1] - 0.244_918_662_403_709_1).abs() < 1e-12);
    assert!(p.flags.is_empty());

    let unseen = fm("L", 0, "A", "Z", fv(true, 0, 0, 0), fv(false, 0, 0, 0), None);
    let p = predict(&m, &[unseen])[0].clone();
    assert!(p.flags.contains(&Flag::UnseenTeam));
    assert!(p.probs[0] > p.probs[2]);

    let pred = BtPredictor { models: vec![m] };
    let other = fm("M", 0, "A", "B", fv(true, 0, 0, 0), fv(false, 0, 0, 0), None);
    let p = pred.predict(&[other])[0].clone();
    assert!(p.flags.contains(&Flag::UnseenLeague));
    assert_eq!(p.probs, [1.0 / 3.0; 3]);

    let back = BtPredictor::from_json(&pred.to_json().unwrap()).unwrap();
    assert_eq!(back, pred);
}

#[test]
fn standardization_leaves_predictions_unchanged() {
    let teams = ["A", "B", "C", "D", "E"];
    let mut truth = BTModel::new(StrengthSpec::lf(&[1, 6]), DrawRule::Davidson { delta: 0.7 }).unwrap();
    truth.coefficients = vec![0.3, 0.02];
    let data = simulate(&truth, &teams, 200, 2);
    let refs: Vec<&FeaturedMatch> = data.iter().collect();
    let fit = fit_bt(&StrengthSpec::lf(&[1, 6]), DrawKind::Davidson, &refs, None, &FitOptions::default()).unwrap();
    // rewrite the fitted model on the raw scale
    let mut raw = fit.model.clone();
    for (c, s) in raw.coefficients.iter_mut().zip(&fit.model.scales) {
        *c /= s.sd;
    }
    raw.scales.clear();
    for (p, q) in predict(&fit.model, &data).iter().zip(predict(&raw, &data)) {
        for k in 0..3 {
            assert!((p.probs[k] - q.probs[k]).abs() < 1e-12);
        }
    }
}
