//! Run configuration: data, feature settings, models and validation plan.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{is_numeric_feature, FeatureConfig};
use crate::validate::{ExperimentPlan, ModelEntry, ModelSpec};

fn default_feature_seed() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Match CSV.
    pub data: PathBuf,
    #[serde(default)]
    pub features: FeatureConfig,
    /// Seed of the random first-match form.
    #[serde(default = "default_feature_seed")]
    pub feature_seed: u64,
    #[serde(default)]
    pub plan: ExperimentPlan,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads for validation; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
}

impl RunConfig {
    pub fn new(data: impl Into<PathBuf>) -> Self {
        RunConfig {
            data: data.into(),
            features: FeatureConfig::default(),
            feature_seed: default_feature_seed(),
            plan: ExperimentPlan::default(),
            output_dir: default_output_dir(),
            jobs: None,
            models: Vec::new(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }

    /// Reads a TOML file; a relative data path is taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            if cfg.data.is_relative() {
                cfg.data = dir.join(&cfg.data);
            }
        }
        Ok(cfg)
    }

    pub fn model(&self, name: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(Error::InvalidInput(format!("model name `{}` used twice", m.name)));
            }
            validate_model(&m.spec).map_err(|e| Error::InvalidInput(format!("model `{}`: {e}", m.name)))?;
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidInput("jobs must be at least 1".into()));
        }
        self.plan.validate()
    }
}

pub fn validate_model(spec: &ModelSpec) -> Result<()> {
    match spec {
        ModelSpec::Bt(s) => s.strength.validate(),
        ModelSpec::Afd(s) => {
            if s.terms.is_empty() {
                return Err(Error::InvalidInput("no smooth terms".into()));
            }
            for t in &s.terms {
                if !is_numeric_feature(t.feature_id) {
                    return Err(Error::InvalidInput(format!("feature {} is not numeric (1-13)", t.feature_id)));
                }
            }
            if s.config.k_grid.is_empty() || s.config.k_grid.iter().any(|k| !(*k > 0.0)) {
                return Err(Error::InvalidInput("smoothing grid must hold positive values".into()));
            }
            Ok(())
        }
        ModelSpec::Hpl(s) => {
            s.spec.validate()?;
            s.options.hyper.validate()?;
            if s.samples == 0 {
                return Err(Error::InvalidInput("samples must be at least 1".into()));
            }
            Ok(())
        }
        ModelSpec::Uniform => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
data = "matches.csv"
feature_seed = 7

[plan]
horizon_days = 7
cutoffs = ["2016-03-31", "2017-03-13"]

[[models]]
name = "bl"
family = "bt"
draw = "ordinal"
strength = { kind = "bl", feature_ids = [1] }

[[models]]
name = "tvc"
family = "bt"
draw = "davidson"
strength = { kind = "tvc", feature_ids = [1, 6, 7, 12, 13], varying_ids = [6, 7, 12] }

[[models]]
name = "afd"
family = "afd"
terms = [{ feature_id = 4 }, { feature_id = 6, interacts_with_m = true }]

[[models]]
name = "hpl"
family = "hpl"
samples = 500
seed = 3
options = { empirical_bayes = true }

[[models]]
name = "uniform"
family = "uniform"
"#;

    #[test]
    fn parses_and_roundtrips() {
        let cfg = RunConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.models.len(), 5);
        assert_eq!(cfg.feature_seed, 7);
        assert_eq!(cfg.plan.horizon_days, 7);
        assert_eq!(cfg.plan.cutoffs.as_ref().unwrap().len(), 2);
        let ModelSpec::Hpl(h) = &cfg.model("hpl").unwrap().spec else {
            panic!("wrong family")
        };
        assert!(h.options.empirical_bayes);
        assert_eq!(h.spec.feature_ids, vec![1, 2, 4, 6, 15, 16]);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let dup = EXAMPLE.replace("name = \"tvc\"", "name = \"bl\"");
        assert!(RunConfig::from_toml(&dup).is_err());
        let bad_feature = EXAMPLE.replace("[1, 6, 7, 12, 13]", "[1, 6, 17]");
        assert!(RunConfig::from_toml(&bad_feature).is_err());
        let bad_family = EXAMPLE.replace("family = \"uniform\"", "family = \"oracle\"");
        assert!(RunConfig::from_toml(&bad_family).is_err());
        assert!(RunConfig::from_toml("data = 3").is_err());
    }
}
