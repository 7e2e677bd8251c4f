//! Soccer outcome prediction with paired-comparison (Bradley-Terry family)
//! and hierarchical Poisson score models, plus a rolling temporal
//! validation framework with jackknife uncertainty and random-effects
//! pooling.

pub mod bt;
pub mod config;
pub mod error;
pub mod features;
pub mod match_data;
pub mod optim;
pub mod score;
pub mod sim;
pub mod prediction;
pub mod smooth;
pub mod validate;

pub use error::{Error, Result};
pub use features::{extract, FeatureConfig, FeatureVector, FeaturedMatch, MatchFeatures};
pub use match_data::{clean, load_csv, Dataset, Fixture, MatchRecord, Outcome};
pub use config::RunConfig;
pub use prediction::{Flag, Prediction};
