//! Rolling temporal validation: train on everything up to a cutoff,
//! predict the following days, score, and pool the per-cutoff summaries
//! with a random-effects model.

mod models;
mod scoring;

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use models::{AfdSpec, BtSpec, FitSummary, Fitted, HplModelSpec, ModelSpec};
pub use scoring::{
    accuracy, baseline_goal_predictor, jackknife_var, jackknife_var_of, meta_analyze, predicted_category,
    profile_loglik, rps, MetaResult,
};

use crate::error::{Error, Result};
use crate::features::FeaturedMatch;

/// Cutoff dates and the length of the prediction window after each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    /// Explicit cutoffs; when absent one per calendar year in the data.
    pub cutoffs: Option<Vec<NaiveDate>>,
    pub horizon_days: u32,
    /// Month and day of the automatic yearly cutoffs.
    pub cutoff_month: u32,
    pub cutoff_day: u32,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            cutoffs: None,
            horizon_days: 10,
            cutoff_month: 3,
            cutoff_day: 31,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_days < 1 {
            return Err(Error::InvalidInput("horizon must be at least one day".into()));
        }
        if let Some(c) = &self.cutoffs {
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInput("cutoffs must be strictly increasing".into()));
            }
        }
        if NaiveDate::from_ymd_opt(2000, self.cutoff_month, self.cutoff_day).is_none() {
            return Err(Error::InvalidInput(format!(
                "invalid cutoff day {}-{}",
                self.cutoff_month, self.cutoff_day
            )));
        }
        Ok(())
    }

    /// Candidate cutoffs before checking that both sets are non-empty.
    pub fn candidates(&self, data: &[FeaturedMatch]) -> Vec<NaiveDate> {
        if let Some(c) = &self.cutoffs {
            return c.clone();
        }
        let years = data.iter().map(|m| m.fixture.date.year());
        let (Some(lo), Some(hi)) = (years.clone().min(), years.max()) else {
            return Vec::new();
        };
        (lo..=hi)
            .filter_map(|y| NaiveDate::from_ymd_opt(y, self.cutoff_month, self.cutoff_day))
            .collect()
    }

    pub fn window_end(&self, cutoff: NaiveDate) -> NaiveDate {
        cutoff + Days::new(u64::from(self.horizon_days))
    }

    /// Played matches on or before the cutoff, and those in the window
    /// after it.
    pub fn split<'a>(&self, data: &'a [FeaturedMatch], cutoff: NaiveDate) -> (Vec<&'a FeaturedMatch>, Vec<&'a FeaturedMatch>) {
        let end = self.window_end(cutoff);
        let played = data.iter().filter(|m| m.score.is_some());
        let train = played.clone().filter(|m| m.fixture.date <= cutoff).collect();
        let test = played.filter(|m| m.fixture.date > cutoff && m.fixture.date <= end).collect();
        (train, test)
    }

    /// Cutoffs with non-empty training and prediction sets.
    pub fn valid_cutoffs(&self, data: &[FeaturedMatch]) -> Vec<NaiveDate> {
        self.candidates(data)
            .into_iter()
            .filter(|c| {
                let (a, b) = self.split(data, *c);
                !a.is_empty() && !b.is_empty()
            })
            .collect()
    }
}

/// Mean criterion over one prediction set and its jackknife variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub cutoff: NaiveDate,
    pub n_b: usize,
    pub s: f64,
    /// `None` when the prediction set is too small for the jackknife.
    pub sigma2: Option<f64>,
}

/// Per-match prediction and scores, one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub model: String,
    pub cutoff: NaiveDate,
    pub key: String,
    pub p_win: f64,
    pub p_draw: f64,
    pub p_loss: f64,
    pub outcome: String,
    pub rps: f64,
    pub correct: u8,
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub cutoff: NaiveDate,
    pub n_a: usize,
    pub n_b: usize,
    pub converged: bool,
    /// Why the experiment produced no scores, if it did not.
    pub skipped: Option<String>,
    pub metrics: BTreeMap<String, ExperimentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub spec: ModelSpec,
    pub experiments: Vec<ExperimentRecord>,
    /// Pooled estimate per metric; `None` when fewer than two experiments
    /// qualify.
    pub pooled: BTreeMap<String, Option<MetaResult>>,
    pub notes: Vec<String>,
}

impl ModelReport {
    pub fn pooled_value(&self, metric: &str) -> Option<f64> {
        self.pooled.get(metric)?.as_ref().map(|m| m.alpha_hat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub plan: ExperimentPlan,
    pub cutoffs: Vec<NaiveDate>,
    pub models: Vec<ModelReport>,
}

/// A model with a display name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

pub const METRIC_RPS: &str = "rps";
pub const METRIC_ACCURACY: &str = "accuracy";
pub const METRIC_RMSE: &str = "rmse";
pub const METRIC_BASELINE_RMSE: &str = "baseline_rmse";

fn summarize(cutoff: NaiveDate, v: &[f64], stat: impl Fn(f64) -> f64 + Copy) -> ExperimentSummary {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    ExperimentSummary {
        cutoff,
        n_b: v.len(),
        s: stat(mean),
        sigma2: jackknife_var_of(v, stat).ok(),
    }
}

/// Squared errors of both sides, averaged per match.
fn squared_errors(pred: &[[f64; 2]], obs: &[(u32, u32)]) -> Vec<f64> {
    pred.iter()
        .zip(obs)
        .map(|(p, (h, a))| 0.5 * ((p[0] - f64::from(*h)).powi(2) + (p[1] - f64::from(*a)).powi(2)))
        .collect()
}

/// Trains on matches up to `cutoff`, predicts the following window and
/// scores it.
pub fn run_experiment(
    entry: &ModelEntry,
    data: &[FeaturedMatch],
    plan: &ExperimentPlan,
    cutoff: NaiveDate,
) -> (ExperimentRecord, Vec<PredictionRow>) {
    let (train, test) = plan.split(data, cutoff);
    let mut rec = ExperimentRecord {
        cutoff,
        n_a: train.len(),
        n_b: test.len(),
        converged: false,
        skipped: None,
        metrics: BTreeMap::new(),
    };
    if train.is_empty() || test.is_empty() {
        rec.skipped = Some(format!(
            "empty {} set",
            if train.is_empty() { "training" } else { "prediction" }
        ));
        return (rec, Vec::new());
    }
    let as_of = cutoff + Days::new(1);
    let fitted = match entry.spec.fit(data, as_of) {
        Ok(f) => f,
        Err(e) => {
            rec.skipped = Some(format!("fit failed: {e}"));
            return (rec, Vec::new());
        }
    };
    rec.converged = fitted.converged();
    let targets: Vec<FeaturedMatch> = test.iter().map(|m| (*m).clone()).collect();
    let preds = match fitted.predict(&targets) {
        Ok(p) => p,
        Err(e) => {
            rec.skipped = Some(format!("prediction failed: {e}"));
            return (rec, Vec::new());
        }
    };
    let mut rows = Vec::with_capacity(targets.len());
    let (mut rv, mut av) = (Vec::new(), Vec::new());
    for (m, p) in targets.iter().zip(&preds) {
        let o = m.outcome().expect("played");
        let a = o.indicator();
        let (r, c) = match (rps(&p.probs, &a), accuracy(&p.probs, &a)) {
            (Ok(r), Ok(c)) => (r, c),
            (Err(e), _) | (_, Err(e)) => {
                rec.skipped = Some(format!("invalid prediction for {}: {e}", m.fixture.key()));
                return (rec, Vec::new());
            }
        };
        rv.push(r);
        av.push(c);
        rows.push(PredictionRow {
            model: entry.name.clone(),
            cutoff,
            key: m.fixture.key(),
            p_win: p.probs[0],
            p_draw: p.probs[1],
            p_loss: p.probs[2],
            outcome: o.as_str().to_string(),
            rps: r,
            correct: c as u8,
            flags: p.flag_string(),
        });
    }
    rec.metrics.insert(METRIC_RPS.into(), summarize(cutoff, &rv, |x| x));
    rec.metrics.insert(METRIC_ACCURACY.into(), summarize(cutoff, &av, |x| x));
    if preds.iter().all(|p| p.expected_goals.is_some()) {
        let obs: Vec<(u32, u32)> = targets.iter().map(|m| m.score.expect("played")).collect();
        let eg: Vec<[f64; 2]> = preds.iter().map(|p| p.expected_goals.expect("checked")).collect();
        rec.metrics.insert(METRIC_RMSE.into(), summarize(cutoff, &squared_errors(&eg, &obs), f64::sqrt));
        let train_scores: Vec<(u32, u32)> = train.iter().map(|m| m.score.expect("played")).collect();
        if let Ok(base) = baseline_goal_predictor(&train_scores) {
            let bp = vec![base; obs.len()];
            rec.metrics
                .insert(METRIC_BASELINE_RMSE.into(), summarize(cutoff, &squared_errors(&bp, &obs), f64::sqrt));
        }
    }
    (rec, rows)
}

fn pool(experiments: &[ExperimentRecord], notes: &mut Vec<String>) -> BTreeMap<String, Option<MetaResult>> {
    let mut metrics: Vec<&String> = experiments.iter().flat_map(|e| e.metrics.keys()).collect();
    metrics.sort();
    metrics.dedup();
    let mut out = BTreeMap::new();
    for metric in metrics {
        let mut s = Vec::new();
        let mut v = Vec::new();
        for e in experiments {
            let Some(sum) = e.metrics.get(metric) else { continue };
            match sum.sigma2 {
                Some(var) if var > 0.0 => {
                    s.push(sum.s);
                    v.push(var);
                }
                Some(_) => notes.push(format!("{metric} at {}: zero jackknife variance, excluded from pooling", e.cutoff)),
                None => notes.push(format!("{metric} at {}: fewer than 2 matches, excluded from pooling", e.cutoff)),
            }
        }
        let res = meta_analyze(&s, &v);
        if let Err(err) = &res {
            notes.push(format!("{metric}: not pooled ({err})"));
        }
        out.insert(metric.clone(), res.ok());
    }
    out
}

/// Runs every model at every valid cutoff and pools the results. Fails
/// when no cutoff has both a training and a prediction set.
pub fn run_validation(
    models: &[ModelEntry],
    data: &[FeaturedMatch],
    plan: &ExperimentPlan,
) -> Result<(ValidationReport, Vec<PredictionRow>)> {
    plan.validate()?;
    let cutoffs = plan.valid_cutoffs(data);
    if cutoffs.is_empty() {
        return Err(Error::Empty("set of valid cutoffs"));
    }
    let jobs: Vec<(usize, NaiveDate)> = (0..models.len())
        .flat_map(|m| cutoffs.iter().map(move |c| (m, *c)))
        .collect();
    let results: Vec<(ExperimentRecord, Vec<PredictionRow>)> = jobs
        .par_iter()
        .map(|(m, c)| run_experiment(&models[*m], data, plan, *c))
        .collect();
    let mut results = results.into_iter();
    let mut reports = Vec::with_capacity(models.len());
    let mut rows = Vec::new();
    for entry in models {
        let mut experiments = Vec::with_capacity(cutoffs.len());
        let mut notes = Vec::new();
        for _ in &cutoffs {
            let (rec, r) = results.next().expect("one result per job");
            if let Some(why) = &rec.skipped {
                log::warn!("{} at {}: {why}", entry.name, rec.cutoff);
                notes.push(format!("{}: skipped ({why})", rec.cutoff));
            } else if !rec.converged {
                notes.push(format!("{}: fit did not converge", rec.cutoff));
            }
            experiments.push(rec);
            rows.extend(r);
        }
        let pooled = pool(&experiments, &mut notes);
        reports.push(ModelReport {
            name: entry.name.clone(),
            spec: entry.spec.clone(),
            experiments,
            pooled,
            notes,
        });
    }
    Ok((
        ValidationReport {
            plan: plan.clone(),
            cutoffs,
            models: reports,
        },
        rows,
    ))
}

pub fn write_predictions_csv<W: std::io::Write>(rows: &[PredictionRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(|e| Error::io("<predictions>", e))?;
    Ok(())
}
