use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use matchcast_bench::{as_of, league_history};
use matchcast_core::bt::{DrawKind, StrengthSpec};
use matchcast_core::smooth::{log_grid, AfdConfig, TermSpec};
use matchcast_core::validate::{meta_analyze, rps, run_validation, AfdSpec, BtSpec, ExperimentPlan, HplModelSpec, ModelEntry, ModelSpec};

fn bt(strength: StrengthSpec) -> ModelSpec {
    ModelSpec::Bt(BtSpec {
        strength,
        draw: DrawKind::Ordinal,
        window: Default::default(),
        fit: Default::default(),
    })
}

fn specs() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("bl", bt(StrengthSpec::bl())),
        ("lf", bt(StrengthSpec::lf(&[1, 4, 6]))),
        ("tvc", bt(StrengthSpec::tvc(&[1, 6, 7], &[6, 7]))),
        ("cs", bt(StrengthSpec::cs())),
        (
            "afd",
            ModelSpec::Afd(AfdSpec {
                terms: TermSpec::from_ids(&[4, 6], &[]),
                config: AfdConfig {
                    k_grid: log_grid(1e-2, 1e2, 5),
                    ..Default::default()
                },
                max_matches: 20_000,
            }),
        ),
        ("hpl", ModelSpec::Hpl(HplModelSpec::default())),
    ]
}

fn fitting(c: &mut Criterion) {
    let data = league_history(4, 1);
    let day = as_of(&data);
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    for (name, spec) in specs() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &spec, |b, spec| {
            b.iter(|| spec.fit(black_box(&data), day).unwrap())
        });
    }
    g.finish();
}

fn prediction(c: &mut Criterion) {
    let data = league_history(4, 2);
    let (train, test) = data.split_at(data.len() - 48);
    let day = as_of(train);
    let mut g = c.benchmark_group("predict_48");
    for (name, spec) in specs() {
        let fitted = spec.fit(train, day).unwrap();
        g.bench_function(name, |b| b.iter(|| fitted.predict(black_box(test)).unwrap()));
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let p = [0.45, 0.3, 0.25];
    let a = [0.0, 1.0, 0.0];
    c.bench_function("rps", |b| b.iter(|| rps(black_box(&p), black_box(&a)).unwrap()));
    let s: Vec<f64> = (0..40).map(|i| 0.2 + 0.001 * f64::from(i % 7)).collect();
    let v: Vec<f64> = (0..40).map(|i| 1e-4 * f64::from(1 + i % 5)).collect();
    c.bench_function("meta_analyze_40", |b| b.iter(|| meta_analyze(black_box(&s), black_box(&v)).unwrap()));
}

fn validation(c: &mut Criterion) {
    let data = league_history(2, 3);
    let models: Vec<ModelEntry> = specs()
        .into_iter()
        .filter(|(n, _)| matches!(*n, "bl" | "lf"))
        .map(|(n, spec)| ModelEntry { name: n.into(), spec })
        .collect();
    let plan = ExperimentPlan::default();
    let mut g = c.benchmark_group("validate");
    g.sample_size(10);
    g.bench_function("bl_lf_3_cutoffs", |b| b.iter(|| run_validation(&models, black_box(&data), &plan).unwrap()));
    g.finish();
}

criterion_group!(benches, fitting, prediction, scoring, validation);
criterion_main!(benches);
