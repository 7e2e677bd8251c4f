use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use matchcast_core::sim::{bt_rule, simulate, to_dataset, LeagueSim};
use matchcast_core::bt::{BTModel, DrawRule, StrengthSpec};
use matchcast_core::FeatureConfig;
use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matchcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Two leagues of eight teams over three seasons, home advantage plus a
/// form effect.
fn write_league(dir: &Path) -> PathBuf {
    let sim = LeagueSim {
        leagues: 2,
        teams: 8,
        seasons: 3,
        ..Default::default()
    };
    let mut truth = BTModel::new(
        StrengthSpec::lf(&[1, 4]),
        DrawRule::Ordinal {
            delta0: 0.0,
            delta1: 0.7,
        },
    )
    .unwrap();
    truth.coefficients = vec![0.35, 1.0];
    let played = simulate(&sim.schedule(), &FeatureConfig::default(), 1, 5, bt_rule(&truth));
    let path = dir.join("matches.csv");
    to_dataset(&played).save_csv(&path).unwrap();
    path
}

const TABLE2: &str = "\
league,season,date,home_team,away_team,home_goals,away_goals
Country1,33-34,2033-08-26,team A,team D,0,0
Country1,33-34,2033-08-18,team A,team B,2,0
Country1,33-34,2033-08-21,team A,team C,2,1
";

#[test]
fn ingest_sorts_the_worked_example() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("in.csv"), TABLE2).unwrap();
    let o = run(dir.path(), &["ingest", "--input", "in.csv", "--output", "out.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let dates: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(dates, ["2033-08-18", "2033-08-21", "2033-08-26"]);
    let meta = read_json(dir.path().join("out.csv.meta.json"));
    assert_eq!(meta["command"], "ingest");
    assert!(meta["config"]["feature_seed"].is_u64());
    let anomalies = read_json(dir.path().join("out.csv.anomalies.json"));
    assert!(anomalies.is_object());
}

#[test]
fn ingest_empty_and_corrupt_files() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let o = run(dir.path(), &["ingest", "--input", "empty.csv", "--output", "out.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("0 records read"));
    assert_eq!(std::fs::read_to_string(dir.path().join("out.csv")).unwrap().lines().count(), 1);

    let corrupt = TABLE2.replace("2033-08-21,team A,team C,2,1", "2033-08-21,team A,team C,two,1");
    std::fs::write(dir.path().join("bad.csv"), corrupt).unwrap();
    let o = run(dir.path(), &["ingest", "--input", "bad.csv", "--output", "out.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}

#[test]
fn fit_reports_diagnostics_and_parameter_counts() {
    let dir = TempDir::new().unwrap();
    write_league(dir.path());
    let o = run(dir.path(), &["fit", "--data", "matches.csv", "--spec", "bl", "--output", "bl.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("loglik ") && out.contains("iterations ") && out.contains("converged true"));
    let m = read_json(dir.path().join("bl.json"));
    let model = &m["fitted"]["predictor"]["models"][0];
    assert_eq!(model["coefficients"].as_array().unwrap().len(), 1);
    assert_eq!(model["draw"]["kind"], "ordinal");
    assert!(model["draw"]["delta1"].is_f64());
    assert_eq!(m["provenance"]["config"]["models"][0]["name"], "bl");

    let o = run(
        dir.path(),
        &[
            "fit", "--data", "matches.csv", "--spec", "tvc", "--features", "1,6,7,12,13", "--varying", "6,7,12",
            "--output", "tvc.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(dir.path().join("tvc.json"));
    let model = &m["fitted"]["predictor"]["models"][0];
    assert_eq!(model["spec"]["feature_ids"], serde_json::json!([1, 6, 7, 12, 13]));
    assert_eq!(model["spec"]["varying_ids"], serde_json::json!([6, 7, 12]));
    // one coefficient per feature plus one per matches-played interaction
    assert_eq!(model["coefficients"].as_array().unwrap().len(), 8);

    let o = run(dir.path(), &["fit", "--data", "matches.csv", "--spec", "elo", "--output", "x.json"]);
    assert_eq!(code(&o), 2);
    let o = run(dir.path(), &["fit", "--data", "matches.csv", "--spec", "lf", "--features", "1,14", "--output", "x.json"]);
    assert_eq!(code(&o), 2);
    let o = run(dir.path(), &["fit", "--data", "missing.csv", "--spec", "bl", "--output", "x.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn predict_rows_flags_and_reproducibility() {
    let dir = TempDir::new().unwrap();
    write_league(dir.path());
    std::fs::write(
        dir.path().join("fixtures.csv"),
        "league,season,date,home_team,away_team\nL0,2012,2012-12-01,L0-T00,L0-T01\n",
    )
    .unwrap();
    let o = run(dir.path(), &["fit", "--data", "matches.csv", "--spec", "lf", "--features", "1,4", "--output", "lf.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(dir.path(), &["predict", "--model", "lf.json", "--fixtures", "fixtures.csv", "--output", "p.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let p: f64 = (5..8).map(|i| rows[0][i].parse::<f64>().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-12);
    assert_eq!(read_json(dir.path().join("p.csv.meta.json"))["command"], "predict");

    // an unseen team under club-specific strengths
    std::fs::write(
        dir.path().join("new.csv"),
        "league,season,date,home_team,away_team\nL0,2012,2012-12-01,L0-T00,Newcomers\n",
    )
    .unwrap();
    let o = run(dir.path(), &["fit", "--data", "matches.csv", "--spec", "cs", "--output", "cs.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(dir.path(), &["predict", "--model", "cs.json", "--fixtures", "new.csv", "--output", "cs.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("cs.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with(",flags"));
    assert!(text.lines().nth(1).unwrap().ends_with(",unseen_team"), "{text}");

    let o = run(
        dir.path(),
        &["fit", "--data", "matches.csv", "--spec", "hpl", "--samples", "1000", "--seed", "1", "--output", "hpl.json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("hpl.json.precision").exists());
    for out in ["h1.csv", "h2.csv"] {
        let o = run(
            dir.path(),
            &["predict", "--model", "hpl.json", "--fixtures", "fixtures.csv", "--samples", "1000", "--seed", "1", "--output", out],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let h1 = std::fs::read(dir.path().join("h1.csv")).unwrap();
    assert_eq!(h1, std::fs::read(dir.path().join("h2.csv")).unwrap());
    let o = run(
        dir.path(),
        &["predict", "--model", "hpl.json", "--fixtures", "fixtures.csv", "--seed", "2", "--output", "h3.csv"],
    );
    assert_eq!(code(&o), 0);
    assert_ne!(h1, std::fs::read(dir.path().join("h3.csv")).unwrap());
    let meta = read_json(dir.path().join("h3.csv.meta.json"));
    assert_eq!(meta["config"]["models"][0]["seed"], 2);
}

const CONFIG: &str = r#"
data = "matches.csv"
feature_seed = 3

[plan]
horizon_days = 14

[[models]]
name = "bl"
family = "bt"
draw = "ordinal"
strength = { kind = "bl", feature_ids = [1] }

[[models]]
name = "lf"
family = "bt"
draw = "ordinal"
strength = { kind = "lf", feature_ids = [1, 4] }
"#;

#[test]
fn validate_is_byte_identical_and_reports_pooled_rows() {
    let dir = TempDir::new().unwrap();
    write_league(dir.path());
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let a = run(dir.path(), &["validate", "--config", "run.toml", "--output-dir", "a"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = run(dir.path(), &["validate", "--config", "run.toml", "--output-dir", "b", "--jobs", "1"]);
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    for f in ["report.json", "predictions.csv", "predictions.csv.meta.json"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let r = read_json(dir.path().join("a/report.json"));
    let models = r["report"]["models"].as_array().unwrap();
    assert_eq!(models.len(), 2);
    for m in models {
        let rps = &m["pooled"]["rps"];
        assert!(rps["alpha_hat"].is_f64() && rps["tau2_hat"].is_f64() && rps["se"].is_f64());
    }
    assert_eq!(r["provenance"]["config"]["feature_seed"], 3);

    let o = run(dir.path(), &["report", "--input", "a/report.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("cutoffs: 3"), "{out}");
    assert!(out.lines().any(|l| l.starts_with("bl ") && l.contains("rps")));
    assert!(out.lines().any(|l| l.starts_with("lf ") && l.contains("accuracy")));
}

#[test]
fn validate_usage_errors() {
    let dir = TempDir::new().unwrap();
    write_league(dir.path());
    let none = CONFIG.replace("horizon_days = 14", "horizon_days = 14\ncutoffs = [\"1990-03-31\"]");
    std::fs::write(dir.path().join("none.toml"), none).unwrap();
    let o = run(dir.path(), &["validate", "--config", "none.toml", "--output-dir", "x"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("cutoffs"));

    std::fs::write(dir.path().join("bad.toml"), CONFIG.replace("[1, 4]", "[1, 99]")).unwrap();
    let o = run(dir.path(), &["validate", "--config", "bad.toml"]);
    assert_eq!(code(&o), 2);
    let o = run(dir.path(), &["validate"]);
    assert_eq!(code(&o), 2);
    let o = run(dir.path(), &["report", "--input", "run.toml"]);
    assert_eq!(code(&o), 2);
}
