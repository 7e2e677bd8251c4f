//! Synthetic leagues for simulation studies, tests and benchmarks.
//!
//! Fixtures come from a double round robin per league and season. Outcomes
//! are drawn match by match from a caller-supplied rule that sees the
//! features known before kick-off, so form, tallies and rankings evolve as
//! they would on real data.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::bt::BTModel;
use crate::features::{FeatureConfig, FeatureExtractor, FeaturedMatch, MatchFeatures};
use crate::match_data::{Dataset, Fixture, MatchRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct LeagueSim {
    pub leagues: usize,
    /// Teams per league; odd counts get a bye each round.
    pub teams: usize,
    pub seasons: usize,
    pub first_year: i32,
    /// Month and day of the first round of every season.
    pub season_start: (u32, u32),
    pub round_gap_days: u64,
}

impl Default for LeagueSim {
    fn default() -> Self {
        LeagueSim {
            leagues: 1,
            teams: 10,
            seasons: 3,
            first_year: 2010,
            season_start: (1, 10),
            round_gap_days: 7,
        }
    }
}

impl LeagueSim {
    pub fn league_name(k: usize) -> String {
        format!("L{k}")
    }

    pub fn team_name(league: usize, i: usize) -> String {
        format!("L{league}-T{i:02}")
    }

    /// Every fixture, ordered by date and then league.
    pub fn schedule(&self) -> Vec<Fixture> {
        // circle method on an even number of slots; slot `n` is the bye
        let n = self.teams + self.teams % 2;
        let mut out = Vec::new();
        if self.teams < 2 {
            return out;
        }
        for y in 0..self.seasons {
            let year = self.first_year + y as i32;
            let (mo, day) = self.season_start;
            let start = NaiveDate::from_ymd_opt(year, mo, day).expect("valid season start");
            for round in 0..2 * (n - 1) {
                let date = start + Days::new(self.round_gap_days * round as u64);
                for k in 0..self.leagues {
                    for i in 0..n / 2 {
                        let (mut h, mut a) = if i == 0 {
                            (round % (n - 1), n - 1)
                        } else {
                            ((round + i) % (n - 1), (round + n - 1 - i) % (n - 1))
                        };
                        if round >= n - 1 {
                            std::mem::swap(&mut h, &mut a);
                        }
                        if h >= self.teams || a >= self.teams {
                            continue;
                        }
                        out.push(Fixture {
                            league: Self::league_name(k),
                            season: year.to_string(),
                            date,
                            home_team: Self::team_name(k, h),
                            away_team: Self::team_name(k, a),
                        });
                    }
                }
            }
        }
        out
    }
}

/// `n` fixtures between uniformly drawn distinct teams of one league,
/// `per_day` a day from `start`.
pub fn random_fixtures(teams: usize, n: usize, per_day: usize, start: NaiveDate, seed: u64) -> Vec<Fixture> {
    assert!(teams >= 2 && per_day >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let h = rng.random_range(0..teams);
            let mut a = rng.random_range(0..teams - 1);
            if a >= h {
                a += 1;
            }
            let date = start + Days::new((i / per_day) as u64);
            Fixture {
                league: LeagueSim::league_name(0),
                season: date.format("%Y").to_string(),
                date,
                home_team: LeagueSim::team_name(0, h),
                away_team: LeagueSim::team_name(0, a),
            }
        })
        .collect()
}

/// Plays `fixtures` in order. `score` sees each fixture with its
/// pre-match features and returns the goals.
pub fn simulate<F>(fixtures: &[Fixture], cfg: &FeatureConfig, feature_seed: u64, seed: u64, mut score: F) -> Vec<FeaturedMatch>
where
    F: FnMut(&Fixture, &MatchFeatures, &mut ChaCha8Rng) -> (u32, u32),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ex = FeatureExtractor::new(cfg.clone(), feature_seed);
    fixtures
        .iter()
        .map(|f| {
            let features = ex.features_for(f);
            let (hg, ag) = score(f, &features, &mut rng);
            ex.record_result(&MatchRecord {
                league: f.league.clone(),
                season: f.season.clone(),
                date: f.date,
                home_team: f.home_team.clone(),
                away_team: f.away_team.clone(),
                home_goals: hg,
                away_goals: ag,
            });
            FeaturedMatch {
                fixture: f.clone(),
                features,
                score: Some((hg, ag)),
            }
        })
        .collect()
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    Poisson::new(mean).expect("positive mean").sample(rng) as u32
}

/// Draws an outcome from `(p_win, p_draw, p_loss)` and a plausible score
/// for it.
pub fn score_for_outcome(p: [f64; 3], rng: &mut ChaCha8Rng) -> (u32, u32) {
    let u: f64 = rng.random();
    if u < p[0] + p[1] && u >= p[0] {
        let g = poisson(rng, 1.0);
        return (g, g);
    }
    let lose = poisson(rng, 0.7);
    let win = lose + 1 + poisson(rng, 0.6);
    if u < p[0] {
        (win, lose)
    } else {
        (lose, win)
    }
}

/// A score rule drawing outcomes from a Bradley-Terry-type model.
pub fn bt_rule(truth: &BTModel) -> impl FnMut(&Fixture, &MatchFeatures, &mut ChaCha8Rng) -> (u32, u32) + '_ {
    move |f, x, rng| {
        let m = FeaturedMatch {
            fixture: f.clone(),
            features: x.clone(),
            score: None,
        };
        score_for_outcome(truth.probs(&m), rng)
    }
}

/// Independent Poisson goals with the given log-rate rule.
pub fn poisson_rule<G>(mut log_rates: G) -> impl FnMut(&Fixture, &MatchFeatures, &mut ChaCha8Rng) -> (u32, u32)
where
    G: FnMut(&Fixture, &MatchFeatures) -> [f64; 2],
{
    move |f, x, rng| {
        let [h, a] = log_rates(f, x);
        (poisson(rng, h.exp()), poisson(rng, a.exp()))
    }
}

/// The played matches as a dataset.
pub fn to_dataset(matches: &[FeaturedMatch]) -> Dataset {
    Dataset::from_records(
        matches
            .iter()
            .filter_map(|m| {
                let (hg, ag) = m.score?;
                let f = &m.fixture;
                Some(MatchRecord {
                    league: f.league.clone(),
                    season: f.season.clone(),
                    date: f.date,
                    home_team: f.home_team.clone(),
                    away_team: f.away_team.clone(),
                    home_goals: hg,
                    away_goals: ag,
                })
            })
            .collect(),
    )
}
