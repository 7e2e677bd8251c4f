//! `matchcast`: ingest match data, fit outcome models, predict fixtures and
//! run rolling validations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chrono::{Days, NaiveDate};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use matchcast_core::bt::{DrawKind, StrengthSpec, WindowConfig};
use matchcast_core::features::extract_fixtures;
use matchcast_core::match_data::read_fixtures_csv;
use matchcast_core::score::HplSpec;
use matchcast_core::smooth::{AfdConfig, TermSpec};
use matchcast_core::validate::{
    run_validation, write_predictions_csv, AfdSpec, BtSpec, Fitted, HplModelSpec, ModelEntry, ModelSpec,
    ValidationReport,
};
use matchcast_core::{clean, extract, load_csv, Error as CoreError, RunConfig};

#[derive(Parser)]
#[command(name = "matchcast", version, about = "Soccer outcome models and temporal validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a match CSV, drop duplicates and report anomalies.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Anomaly report (JSON); defaults to `<output>.anomalies.json`.
        #[arg(long)]
        anomalies: Option<PathBuf>,
    },
    /// Fit one model and write it as JSON.
    Fit(FitArgs),
    /// Predict outcome probabilities for upcoming fixtures.
    Predict {
        /// Model written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Fixture CSV (league, season, date, home_team, away_team).
        #[arg(long)]
        fixtures: PathBuf,
        /// Results known before the fixtures; defaults to the data the
        /// model was fitted on.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Posterior draws per fixture (score models).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the rolling validation described by a config file.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Summarize a validation report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Bl,
    Cs,
    Lf,
    Tvc,
    Afd,
    Hpl,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(clap::Args)]
struct FitArgs {
    /// Match CSV; taken from the config when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Config file holding the model definition.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Name of the model in the config.
    #[arg(long, requires = "config")]
    name: Option<String>,
    #[arg(long = "spec", visible_alias = "model", value_enum, conflicts_with = "name")]
    family: Option<Family>,
    /// Comma-separated feature ids.
    #[arg(long, value_delimiter = ',')]
    features: Vec<u8>,
    /// Features with matches-played varying coefficients (tvc) or
    /// interaction smooths (afd).
    #[arg(long, value_delimiter = ',')]
    varying: Vec<u8>,
    #[arg(long, visible_alias = "draws", default_value = "ordinal")]
    draw: String,
    /// Most recent matches used for fitting.
    #[arg(long)]
    window: Option<usize>,
    /// Smoothing grid as `lo:hi:n`, log-spaced (afd).
    #[arg(long, value_parser = parse_k_grid)]
    k_grid: Option<KGrid>,
    /// Use matches strictly before this date; all played matches by default.
    #[arg(long)]
    as_of: Option<NaiveDate>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    empirical_bayes: Option<OnOff>,
    /// Seed of the random first-match form.
    #[arg(long)]
    feature_seed: Option<u64>,
}

/// `1e-4:1e4:17` gives 17 values evenly spaced on the log scale.
#[derive(Clone)]
struct KGrid(Vec<f64>);

fn parse_k_grid(s: &str) -> Result<KGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err("expected lo:hi:n".into());
    };
    let lo: f64 = lo.parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("{hi}: {e}"))?;
    let n: usize = n.parse().map_err(|e| format!("{n}: {e}"))?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || n == 0 {
        return Err("need 0 < lo <= hi and n >= 1".into());
    }
    if n == 1 {
        return Ok(KGrid(vec![lo]));
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    Ok(KGrid((0..n).map(|i| lo * (step * i as f64).exp()).collect()))
}

/// A failure with its exit code: 1 numerical, 2 usage or input.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn usage(err: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, err: err.into() }
    }
    fn numerical(err: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, err: err.into() }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { .. } | CoreError::NotPositiveDefinite { .. } | CoreError::Optimization(_) => {
                Failure::numerical(e)
            }
            _ => Failure::usage(e),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::usage(err)
    }
}

type CliResult<T> = Result<T, Failure>;

/// What produced an output file; written next to CSV outputs and
/// embedded in JSON ones.
#[derive(Serialize, Deserialize)]
struct Provenance {
    tool: String,
    command: String,
    config: RunConfig,
}

fn provenance(command: &str, config: &RunConfig) -> Provenance {
    Provenance {
        tool: format!("matchcast {}", env!("CARGO_PKG_VERSION")),
        command: command.to_string(),
        config: config.clone(),
    }
}

/// Serialized model plus everything needed to rebuild fixture features.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    provenance: Provenance,
    model: String,
    as_of: NaiveDate,
    fitted: Fitted,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    provenance: Provenance,
    report: ValidationReport,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::usage(anyhow!(e)))?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_ingest(input: &Path, output: &Path, anomalies: Option<PathBuf>) -> CliResult<()> {
    let raw = load_csv(input)?;
    let (data, report) = clean(&raw);
    data.write_csv(create(output)?)?;
    let anomalies = anomalies.unwrap_or_else(|| {
        let mut s = output.as_os_str().to_owned();
        s.push(".anomalies.json");
        s.into()
    });
    write_json(&anomalies, &report)?;
    write_json(&meta_path(output), &provenance("ingest", &RunConfig::new(input)))?;
    println!(
        "{} records read, {} kept, {} duplicate groups, {} date anomalies",
        raw.len(),
        data.len(),
        report.duplicate_groups.len(),
        report.date_anomalies.len()
    );
    Ok(())
}

fn entry_from_flags(a: &FitArgs, family: Family) -> CliResult<ModelEntry> {
    let draw: DrawKind = a.draw.parse()?;
    let mut window = WindowConfig::default();
    if let Some(n) = a.window {
        window.max_matches = n;
    }
    let bt = |strength: StrengthSpec| {
        ModelSpec::Bt(BtSpec {
            strength,
            draw,
            window,
            fit: Default::default(),
        })
    };
    let (name, spec) = match family {
        Family::Bl => ("bl", bt(StrengthSpec::bl())),
        Family::Cs => ("cs", bt(StrengthSpec::cs())),
        Family::Lf => ("lf", bt(StrengthSpec::lf(&a.features))),
        Family::Tvc => ("tvc", bt(StrengthSpec::tvc(&a.features, &a.varying))),
        Family::Afd => {
            if draw != DrawKind::Ordinal {
                return Err(Failure::usage(anyhow!("afd supports only ordinal draws")));
            }
            (
                "afd",
                ModelSpec::Afd(AfdSpec {
                    terms: TermSpec::from_ids(&a.features, &a.varying),
                    config: AfdConfig {
                        k_grid: a.k_grid.clone().map_or_else(|| AfdConfig::default().k_grid, |g| g.0),
                        ..Default::default()
                    },
                    max_matches: window.max_matches,
                }),
            )
        }
        Family::Hpl => {
            let mut h = HplModelSpec::default();
            if !a.features.is_empty() {
                h.spec = HplSpec {
                    feature_ids: a.features.clone(),
                };
            }
            ("hpl", ModelSpec::Hpl(h))
        }
        Family::Uniform => ("uniform", ModelSpec::Uniform),
    };
    Ok(ModelEntry {
        name: name.to_string(),
        spec,
    })
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let mut config = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(
            a.data
                .clone()
                .ok_or_else(|| Failure::usage(anyhow!("--data is required without --config")))?,
        ),
    };
    if let Some(d) = &a.data {
        config.data = d.clone();
    }
    if let Some(s) = a.feature_seed {
        config.feature_seed = s;
    }
    let mut entry = match (&a.name, a.family) {
        (Some(n), _) => config
            .model(n)
            .cloned()
            .ok_or_else(|| Failure::usage(anyhow!("no model named `{n}` in the config")))?,
        (None, Some(f)) => entry_from_flags(&a, f)?,
        (None, None) => return Err(Failure::usage(anyhow!("give --spec or --config with --name"))),
    };
    if let ModelSpec::Hpl(h) = &mut entry.spec {
        if let Some(n) = a.samples {
            h.samples = n;
        }
        if let Some(s) = a.seed {
            h.seed = s;
        }
        if let Some(eb) = a.empirical_bayes {
            h.options.empirical_bayes = matches!(eb, OnOff::On);
        }
    }
    matchcast_core::config::validate_model(&entry.spec)?;
    config.models = vec![entry.clone()];
    config.validate()?;

    let data = load_csv(&config.data)?;
    let (data, _) = clean(&data);
    let featured = extract(&data, &config.features, config.feature_seed);
    let as_of = match a.as_of {
        Some(d) => d,
        None => data
            .last_date()
            .map(|d| d + Days::new(1))
            .ok_or_else(|| Failure::usage(anyhow!("no matches in {}", config.data.display())))?,
    };
    let fitted = entry.spec.fit(&featured, as_of)?;
    let summary = fitted.summary();
    let file = ModelFile {
        provenance: provenance("fit", &config),
        model: entry.name.clone(),
        as_of,
        fitted,
    };
    write_json(&a.output, &file)?;
    if let Fitted::Hpl { predictor, .. } = &file.fitted {
        predictor.save_precisions(&a.output)?;
    }
    match summary.loglik {
        Some(l) => println!("loglik {l:.6}"),
        None => println!("loglik n/a"),
    }
    println!("iterations {}", summary.iterations);
    println!("converged {}", summary.converged);
    if !summary.converged {
        return Err(Failure::numerical(anyhow!("fit did not converge; model written anyway")));
    }
    Ok(())
}

#[derive(Serialize)]
struct FixtureRow<'a> {
    key: String,
    league: &'a str,
    date: NaiveDate,
    home_team: &'a str,
    away_team: &'a str,
    p_win: f64,
    p_draw: f64,
    p_loss: f64,
    expected_home_goals: Option<f64>,
    expected_away_goals: Option<f64>,
    flags: String,
}

fn cmd_predict(
    model: &Path,
    fixtures: &Path,
    history: Option<PathBuf>,
    output: &Path,
    samples: Option<usize>,
    seed: Option<u64>,
) -> CliResult<()> {
    let text = std::fs::read_to_string(model).with_context(|| format!("cannot read {}", model.display()))?;
    let mut file: ModelFile = serde_json::from_str(&text).map_err(|e| Failure::usage(anyhow!("{}: {e}", model.display())))?;
    if let Fitted::Hpl {
        predictor,
        samples: n,
        seed: s,
    } = &mut file.fitted
    {
        predictor.load_precisions(model)?;
        *n = samples.unwrap_or(*n);
        *s = seed.unwrap_or(*s);
        let (n, s) = (*n, *s);
        for m in &mut file.provenance.config.models {
            if let ModelSpec::Hpl(h) = &mut m.spec {
                h.samples = n;
                h.seed = s;
            }
        }
    }
    let config = &file.provenance.config;
    let history = history.unwrap_or_else(|| config.data.clone());
    let (hist, _) = clean(&load_csv(&history)?);
    let fx = File::open(fixtures).with_context(|| format!("cannot open {}", fixtures.display()))?;
    let fixtures = read_fixtures_csv(fx)?;
    let featured = extract_fixtures(&hist, &fixtures, &config.features, config.feature_seed);
    let preds = file.fitted.predict(&featured)?;
    let mut w = csv::Writer::from_writer(create(output)?);
    for (m, p) in featured.iter().zip(&preds) {
        let f = &m.fixture;
        w.serialize(FixtureRow {
            key: f.key(),
            league: &f.league,
            date: f.date,
            home_team: &f.home_team,
            away_team: &f.away_team,
            p_win: p.probs[0],
            p_draw: p.probs[1],
            p_loss: p.probs[2],
            expected_home_goals: p.expected_goals.map(|e| e[0]),
            expected_away_goals: p.expected_goals.map(|e| e[1]),
            flags: p.flag_string(),
        })
        .map_err(|e| Failure::usage(anyhow!(e)))?;
    }
    w.flush().context("cannot write predictions")?;
    let mut prov = provenance("predict", config);
    prov.config.data = history;
    write_json(&meta_path(output), &prov)?;
    println!("{} fixtures predicted", preds.len());
    Ok(())
}

fn cmd_validate(config_path: &Path, output_dir: Option<PathBuf>, jobs: Option<usize>) -> CliResult<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(d) = output_dir {
        config.output_dir = d;
    }
    if jobs.is_some() {
        config.jobs = jobs;
    }
    config.validate()?;
    if config.models.is_empty() {
        return Err(Failure::usage(anyhow!("the config defines no models")));
    }
    let (data, _) = clean(&load_csv(&config.data)?);
    let featured = extract(&data, &config.features, config.feature_seed);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = config.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| Failure::usage(anyhow!(e)))?;
    let (report, rows) = pool.install(|| run_validation(&config.models, &featured, &config.plan))?;

    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create {}", config.output_dir.display()))?;
    let report_path = config.output_dir.join("report.json");
    let preds_path = config.output_dir.join("predictions.csv");
    // the output directory does not change the results; keep it out of
    // the embedded config so reports compare byte for byte
    let mut recorded = config.clone();
    recorded.output_dir = PathBuf::from(".");
    recorded.jobs = None;
    let file = ReportFile {
        provenance: provenance("validate", &recorded),
        report,
    };
    write_json(&report_path, &file)?;
    write_predictions_csv(&rows, create(&preds_path)?)?;
    write_json(&meta_path(&preds_path), &file.provenance)?;
    print_summary(&file.report);

    let unconverged: Vec<String> = file
        .report
        .models
        .iter()
        .flat_map(|m| {
            m.experiments
                .iter()
                .filter(|e| e.skipped.is_none() && !e.converged)
                .map(move |e| format!("{} at {}", m.name, e.cutoff))
        })
        .collect();
    if !unconverged.is_empty() {
        return Err(Failure::numerical(anyhow!("fits did not converge: {}", unconverged.join(", "))));
    }
    Ok(())
}

fn print_summary(report: &ValidationReport) {
    println!("{:<16} {:<14} {:>10} {:>10} {:>12} {:>5}", "model", "metric", "pooled", "se", "tau2", "k");
    for m in &report.models {
        for (metric, res) in &m.pooled {
            match res {
                Some(r) => println!(
                    "{:<16} {:<14} {:>10.5} {:>10.5} {:>12.3e} {:>5}",
                    m.name,
                    metric,
                    r.alpha_hat,
                    r.se,
                    r.tau2_hat,
                    r.weights.len()
                ),
                None => println!("{:<16} {:<14} {:>10}", m.name, metric, "n/a"),
            }
        }
    }
}

fn cmd_report(input: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
    let file: ReportFile = serde_json::from_str(&text).map_err(|e| Failure::usage(anyhow!("{}: {e}", input.display())))?;
    println!("cutoffs: {}", file.report.cutoffs.len());
    print_summary(&file.report);
    for m in &file.report.models {
        for n in &m.notes {
            println!("note [{}]: {n}", m.name);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest {
            input,
            output,
            anomalies,
        } => cmd_ingest(&input, &output, anomalies),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict {
            model,
            fixtures,
            history,
            output,
            samples,
            seed,
        } => cmd_predict(&model, &fixtures, history, &output, samples, seed),
        Command::Validate {
            config,
            output_dir,
            jobs,
        } => cmd_validate(&config, output_dir, jobs),
        Command::Report { input } => cmd_report(&input),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = writeln!(std::io::stderr(), "error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
