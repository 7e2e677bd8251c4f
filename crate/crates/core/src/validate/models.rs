//! Uniform wrappers around the model families for training and prediction.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bt::{fit_ml, BtPredictor, DrawKind, FitOptions, StrengthSpec, WindowConfig};
use crate::error::{Error, Result};
use crate::features::FeaturedMatch;
use crate::prediction::Prediction;
use crate::score::{fit_leagues, HplOptions, HplPredictor, HplSpec};
use crate::smooth::{fit_penalized, predict_afd, AfdConfig, AfdModel, TermSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtSpec {
    pub strength: StrengthSpec,
    pub draw: DrawKind,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfdSpec {
    pub terms: Vec<TermSpec>,
    #[serde(default)]
    pub config: AfdConfig,
    /// Most recent matches used for fitting.
    #[serde(default = "default_afd_window")]
    pub max_matches: usize,
}

fn default_afd_window() -> usize {
    WindowConfig::default().max_matches
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HplModelSpec {
    #[serde(default)]
    pub spec: HplSpec,
    #[serde(default)]
    pub options: HplOptions,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_samples() -> usize {
    1000
}

fn default_seed() -> u64 {
    1
}

impl Default for HplModelSpec {
    fn default() -> Self {
        HplModelSpec {
            spec: HplSpec::default(),
            options: HplOptions::default(),
            samples: default_samples(),
            seed: default_seed(),
        }
    }
}

/// Any model the validation framework can train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Bt(BtSpec),
    Afd(AfdSpec),
    Hpl(HplModelSpec),
    /// Always `(1/3, 1/3, 1/3)`.
    Uniform,
}

impl ModelSpec {
    /// Trains on played matches dated strictly before `as_of`.
    pub fn fit(&self, data: &[FeaturedMatch], as_of: NaiveDate) -> Result<Fitted> {
        match self {
            ModelSpec::Bt(s) => {
                let fit = fit_ml(&s.strength, s.draw, data, as_of, &s.window, &s.fit)?;
                Ok(Fitted::Bt {
                    converged: fit.converged(),
                    loglik: fit.loglik(),
                    iterations: fit.iterations(),
                    predictor: fit.predictor(),
                })
            }
            ModelSpec::Afd(s) => {
                let hist: Vec<&FeaturedMatch> = data
                    .iter()
                    .filter(|m| m.score.is_some() && m.fixture.date < as_of)
                    .collect();
                if hist.is_empty() {
                    return Err(Error::Empty("training window"));
                }
                let start = hist.len().saturating_sub(s.max_matches);
                Ok(Fitted::Afd(fit_penalized(&hist[start..], &s.terms, &s.config)?))
            }
            ModelSpec::Hpl(s) => Ok(Fitted::Hpl {
                predictor: fit_leagues(data, as_of, &s.spec, &s.options)?,
                samples: s.samples,
                seed: s.seed,
            }),
            ModelSpec::Uniform => Ok(Fitted::Uniform),
        }
    }
}

/// A trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Fitted {
    Bt {
        predictor: BtPredictor,
        converged: bool,
        loglik: f64,
        iterations: usize,
    },
    Afd(AfdModel),
    Hpl { predictor: HplPredictor, samples: usize, seed: u64 },
    Uniform,
}

/// Headline diagnostics of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub converged: bool,
    /// Log-likelihood at the estimate (log marginal likelihood for score
    /// models).
    pub loglik: Option<f64>,
    pub iterations: usize,
}

impl Fitted {
    pub fn summary(&self) -> FitSummary {
        let (loglik, iterations) = match self {
            Fitted::Bt { loglik, iterations, .. } => (Some(*loglik), *iterations),
            Fitted::Afd(m) => (Some(m.loglik), m.gcv_trace.iter().map(|p| p.iterations).sum()),
            Fitted::Hpl { predictor, .. } => (
                Some(predictor.fits.iter().map(|f| f.log_marginal).sum()),
                predictor.fits.iter().map(|f| f.iterations).sum(),
            ),
            Fitted::Uniform => (None, 0),
        };
        FitSummary {
            converged: self.converged(),
            loglik,
            iterations,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            Fitted::Bt { converged, .. } => *converged,
            Fitted::Afd(m) => m.converged,
            Fitted::Hpl { predictor, .. } => predictor.converged(),
            Fitted::Uniform => true,
        }
    }

    pub fn predict(&self, fixtures: &[FeaturedMatch]) -> Result<Vec<Prediction>> {
        match self {
            Fitted::Bt { predictor, .. } => Ok(predictor.predict(fixtures)),
            Fitted::Afd(m) => Ok(predict_afd(m, fixtures)),
            Fitted::Hpl { predictor, samples, seed } => predictor.predict(fixtures, *samples, *seed),
            Fitted::Uniform => Ok(fixtures.iter().map(|_| Prediction::neutral()).collect()),
        }
    }

    /// Writes JSON to `path`; score models also write their precisions
    /// next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
        if let Fitted::Hpl { predictor, .. } = self {
            predictor.save_precisions(path)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut f: Fitted = serde_json::from_str(&text)?;
        if let Fitted::Hpl { predictor, .. } = &mut f {
            predictor.load_precisions(path)?;
        }
        Ok(f)
    }
}
