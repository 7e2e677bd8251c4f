//! Workloads shared by the benchmarks.

use chrono::{Days, NaiveDate};
use matchcast_core::bt::{BTModel, DrawRule, StrengthSpec};
use matchcast_core::sim::{bt_rule, simulate, LeagueSim};
use matchcast_core::{FeatureConfig, FeaturedMatch};

/// `leagues` leagues of 12 teams over three seasons, outcomes from a
/// home-plus-form truth.
pub fn league_history(leagues: usize, seed: u64) -> Vec<FeaturedMatch> {
    let sim = LeagueSim {
        leagues,
        teams: 12,
        seasons: 3,
        ..Default::default()
    };
    let mut truth = BTModel::new(
        StrengthSpec::lf(&[1, 4]),
        DrawRule::Ordinal {
            delta0: 0.0,
            delta1: 0.6,
        },
    )
    .expect("valid truth");
    truth.coefficients = vec![0.3, 1.5];
    simulate(&sim.schedule(), &FeatureConfig::default(), 1, seed, bt_rule(&truth))
}

/// The day after the last match.
pub fn as_of(data: &[FeaturedMatch]) -> NaiveDate {
    data.iter().map(|m| m.fixture.date).max().expect("non-empty") + Days::new(1)
}
