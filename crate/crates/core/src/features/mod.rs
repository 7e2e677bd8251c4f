//! Team-, season- and match-specific features computed in one chronological
//! pass.
//!
//! Every feature of a match is computed from strictly earlier results; the
//! team state is only updated after the match's features have been emitted.
//! Missing values follow fixed conventions: a random form for a team's first
//! match of a season, default previous-season tallies for promoted and
//! relegated teams, and a default gap when no previous match is known.

mod rank;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};

pub use rank::{ls_rank, ordinal_score, solve_ratings, RatingVector};

use crate::error::Result;
use crate::match_data::{quarter, Dataset, Fixture, MatchRecord, Outcome};

/// Short names of features 1-16, lower-cased with underscores.
pub const FEATURE_NAMES: [&str; 16] = [
    "home",
    "newly_promoted",
    "days_since_previous_match",
    "form",
    "matches_played",
    "points_tally",
    "goal_difference",
    "goals_scored_per_match",
    "goals_conceded_per_match",
    "points_per_match",
    "previous_season_points_tally",
    "previous_season_goal_difference",
    "team_rankings",
    "season",
    "season_window",
    "quarter",
];

pub const FEATURE_HOME: u8 = 1;
pub const FEATURE_NEWLY_PROMOTED: u8 = 2;
pub const FEATURE_FORM: u8 = 4;
pub const FEATURE_MATCHES_PLAYED: u8 = 5;
pub const FEATURE_POINTS_TALLY: u8 = 6;

/// Features 1-13 are numeric; 14-16 are labels.
pub fn is_numeric_feature(id: u8) -> bool {
    (1..=13).contains(&id)
}

pub fn feature_name(id: u8) -> Option<&'static str> {
    FEATURE_NAMES.get(usize::from(id).checked_sub(1)?).copied()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeagueTier {
    pub country: String,
    /// 1 is the top division.
    pub tier: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Days since previous match for a team's first match in the data.
    pub default_gap_days: u32,
    pub promoted_prev_points: u32,
    pub promoted_prev_goal_diff: i32,
    pub relegated_prev_points: u32,
    pub relegated_prev_goal_diff: i32,
    /// Length of the look-back window of the least-squares rating.
    pub rank_window_days: u32,
    pub rank_home_offset: bool,
    /// Optional league hierarchy used to tell promotion from relegation.
    pub league_tiers: BTreeMap<String, LeagueTier>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            default_gap_days: 30,
            promoted_prev_points: 15,
            promoted_prev_goal_diff: -35,
            relegated_prev_points: 65,
            relegated_prev_goal_diff: 35,
            rank_window_days: 365,
            rank_home_offset: true,
            league_tiers: BTreeMap::new(),
        }
    }
}

/// Per-team, per-side feature values for one match.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub home: u8,
    pub newly_promoted: u8,
    pub days_since_prev: u32,
    pub form: f64,
    pub matches_played: u32,
    pub points_tally: u32,
    pub goal_diff: i32,
    pub goals_scored_pm: f64,
    pub goals_conceded_pm: f64,
    pub points_pm: f64,
    pub prev_points: u32,
    pub prev_goal_diff: i32,
    pub ls_rank: f64,
    pub season: String,
    pub season_window: String,
    pub quarter: u8,
}

impl FeatureVector {
    /// Value of a numeric feature (1-13); `None` for labels and unknown ids.
    pub fn numeric(&self, id: u8) -> Option<f64> {
        Some(match id {
            1 => f64::from(self.home),
            2 => f64::from(self.newly_promoted),
            3 => f64::from(self.days_since_prev),
            4 => self.form,
            5 => f64::from(self.matches_played),
            6 => f64::from(self.points_tally),
            7 => f64::from(self.goal_diff),
            8 => self.goals_scored_pm,
            9 => self.goals_conceded_pm,
            10 => self.points_pm,
            11 => f64::from(self.prev_points),
            12 => f64::from(self.prev_goal_diff),
            13 => self.ls_rank,
            _ => return None,
        })
    }

    fn csv_fields(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..=13u8)
            .map(|k| fmt_num(self.numeric(k).expect("numeric id")))
            .collect();
        v.push(self.season.clone());
        v.push(self.season_window.clone());
        v.push(self.quarter.to_string());
        v
    }
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchFeatures {
    pub home: FeatureVector,
    pub away: FeatureVector,
}

/// A fixture with its features and, for played matches, the final score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturedMatch {
    pub fixture: Fixture,
    pub features: MatchFeatures,
    pub score: Option<(u32, u32)>,
}

impl FeaturedMatch {
    pub fn outcome(&self) -> Option<Outcome> {
        self.score
            .map(|(h, a)| crate::match_data::outcome(h, a))
    }
}

/// Running state of a team within one league season.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamSeasonState {
    pub season: String,
    pub matches_played: u32,
    pub points_tally: u32,
    pub goal_diff: i32,
    pub goals_for: u32,
    pub goals_against: u32,
    pub last3_points: VecDeque<u32>,
    pub prev_season_points: u32,
    pub prev_season_goal_diff: i32,
    pub newly_promoted: bool,
    /// Form used before the first match of the season.
    opening_form: f64,
}

impl TeamSeasonState {
    fn form(&self) -> f64 {
        if self.last3_points.is_empty() {
            self.opening_form
        } else {
            let total: u32 = self.last3_points.iter().sum();
            f64::from(total) / (3.0 * self.last3_points.len() as f64)
        }
    }

    fn record(&mut self, scored: u32, conceded: u32, points: u32) {
        self.matches_played += 1;
        self.points_tally += points;
        self.goals_for += scored;
        self.goals_against += conceded;
        self.goal_diff = self.goals_for as i32 - self.goals_against as i32;
        if self.last3_points.len() == 3 {
            self.last3_points.pop_front();
        }
        self.last3_points.push_back(points);
    }
}

#[derive(Debug, Clone)]
struct LeagueSeason {
    name: String,
    first_month: u32,
    last_month: u32,
}

/// Incremental feature extractor.
///
/// Results must be recorded in chronological order; `features_for` may be
/// called for any fixture dated on or after the last recorded result.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    seed: u64,
    states: HashMap<(String, String), TeamSeasonState>,
    last_date: HashMap<String, NaiveDate>,
    last_seen_in: HashMap<String, (String, String)>,
    seasons: HashMap<String, Vec<LeagueSeason>>,
    history: HashMap<String, Vec<(NaiveDate, MatchRecord)>>,
    rating_cache: HashMap<(String, NaiveDate), RatingVector>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig, seed: u64) -> Self {
        FeatureExtractor {
            cfg,
            seed,
            states: HashMap::new(),
            last_date: HashMap::new(),
            last_seen_in: HashMap::new(),
            seasons: HashMap::new(),
            history: HashMap::new(),
            rating_cache: HashMap::new(),
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    fn previous_season<'a>(&'a self, league: &str, season: &str) -> Option<&'a LeagueSeason> {
        let list = self.seasons.get(league)?;
        match list.iter().position(|s| s.name == season) {
            Some(0) => None,
            Some(i) => Some(&list[i - 1]),
            None => list.last(),
        }
    }

    fn opening_form(&self, league: &str, season: &str, team: &str) -> f64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in league
            .bytes()
            .chain([0x1f])
            .chain(season.bytes())
            .chain([0x1f])
            .chain(team.bytes())
        {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Open01.sample(&mut rng)
    }

    /// The team's state for `season` of `league`, starting a new season when
    /// needed. Does not modify the extractor.
    fn season_state(&self, league: &str, season: &str, team: &str) -> TeamSeasonState {
        let key = (league.to_string(), team.to_string());
        if let Some(st) = self.states.get(&key) {
            if st.season == season {
                return st.clone();
            }
        }
        let prev = self.previous_season(league, season);
        let carried = prev.and_then(|p| {
            self.states
                .get(&key)
                .filter(|st| st.season == p.name)
                .map(|st| (st.points_tally, st.goal_diff))
        });
        let (newly_promoted, prev_points, prev_gd) = match carried {
            Some((pts, gd)) => (false, pts, gd),
            None => {
                let promoted = match self.last_seen_in.get(team) {
                    None => true,
                    Some((other_league, _)) => {
                        let tiers = &self.cfg.league_tiers;
                        match (tiers.get(other_league), tiers.get(league)) {
                            (Some(a), Some(b)) if a.country == b.country && a.tier != b.tier => {
                                a.tier > b.tier
                            }
                            // Without hierarchy metadata a returning team is
                            // treated as relegated.
                            _ => false,
                        }
                    }
                };
                if promoted {
                    (
                        true,
                        self.cfg.promoted_prev_points,
                        self.cfg.promoted_prev_goal_diff,
                    )
                } else {
                    (
                        false,
                        self.cfg.relegated_prev_points,
                        self.cfg.relegated_prev_goal_diff,
                    )
                }
            }
        };
        TeamSeasonState {
            season: season.to_string(),
            matches_played: 0,
            points_tally: 0,
            goal_diff: 0,
            goals_for: 0,
            goals_against: 0,
            last3_points: VecDeque::new(),
            prev_season_points: prev_points,
            prev_season_goal_diff: prev_gd,
            newly_promoted,
            opening_form: self.opening_form(league, season, team),
        }
    }

    fn season_window(&self, fixture: &Fixture) -> String {
        let first_month = self
            .seasons
            .get(&fixture.league)
            .and_then(|l| l.iter().find(|s| s.name == fixture.season))
            .map(|s| s.first_month)
            .unwrap_or(fixture.date.month());
        let start = month_name(first_month);
        match self.previous_season(&fixture.league, &fixture.season) {
            Some(p) => format!("{start}-{}", month_name(p.last_month)),
            None => start.to_string(),
        }
    }

    fn ratings(&mut self, league: &str, date: NaiveDate) -> Option<&RatingVector> {
        let key = (league.to_string(), date);
        if !self.rating_cache.contains_key(&key) {
            let hist = self.history.get(league)?;
            let from = date - Duration::days(i64::from(self.cfg.rank_window_days));
            let lo = hist.partition_point(|(d, _)| *d < from);
            let hi = hist.partition_point(|(d, _)| *d < date);
            if lo >= hi {
                return None;
            }
            let window: Vec<MatchRecord> = hist[lo..hi].iter().map(|(_, m)| m.clone()).collect();
            let rv = ls_rank(&window, self.cfg.rank_home_offset).ok()?;
            self.rating_cache.insert(key.clone(), rv);
        }
        self.rating_cache.get(&key)
    }

    fn side(
        &self,
        fixture: &Fixture,
        team: &str,
        is_home: bool,
        window: &str,
        rating: f64,
    ) -> FeatureVector {
        let st = self.season_state(&fixture.league, &fixture.season, team);
        let mp = st.matches_played;
        let per_match = |x: f64| if mp == 0 { 0.0 } else { x / f64::from(mp) };
        let days = match self.last_date.get(team) {
            Some(d) => (fixture.date - *d).num_days().max(0) as u32,
            None => self.cfg.default_gap_days,
        };
        FeatureVector {
            home: u8::from(is_home),
            newly_promoted: u8::from(st.newly_promoted),
            days_since_prev: days,
            form: st.form(),
            matches_played: mp,
            points_tally: st.points_tally,
            goal_diff: st.goal_diff,
            goals_scored_pm: per_match(f64::from(st.goals_for)),
            goals_conceded_pm: per_match(f64::from(st.goals_against)),
            points_pm: per_match(f64::from(st.points_tally)),
            prev_points: st.prev_season_points,
            prev_goal_diff: st.prev_season_goal_diff,
            ls_rank: rating,
            season: fixture.season.clone(),
            season_window: window.to_string(),
            quarter: quarter(fixture.date) as u8,
        }
    }

    /// Features of both sides of a fixture given the results recorded so far.
    pub fn features_for(&mut self, fixture: &Fixture) -> MatchFeatures {
        let (rh, ra) = match self.ratings(&fixture.league, fixture.date) {
            Some(rv) => (
                rv.get(&fixture.home_team).unwrap_or(0.0),
                rv.get(&fixture.away_team).unwrap_or(0.0),
            ),
            None => (0.0, 0.0),
        };
        let window = self.season_window(fixture);
        MatchFeatures {
            home: self.side(fixture, &fixture.home_team, true, &window, rh),
            away: self.side(fixture, &fixture.away_team, false, &window, ra),
        }
    }

    /// Folds a played match into the team and league state.
    pub fn record_result(&mut self, m: &MatchRecord) {
        let list = self.seasons.entry(m.league.clone()).or_default();
        let month = m.date.month();
        match list.iter_mut().find(|s| s.name == m.season) {
            Some(s) => s.last_month = month,
            None => list.push(LeagueSeason {
                name: m.season.clone(),
                first_month: month,
                last_month: month,
            }),
        }
        let outcome = m.outcome();
        for (team, scored, conceded, points) in [
            (&m.home_team, m.home_goals, m.away_goals, outcome.home_points()),
            (&m.away_team, m.away_goals, m.home_goals, outcome.away_points()),
        ] {
            let mut st = self.season_state(&m.league, &m.season, team);
            st.record(scored, conceded, points);
            self.states.insert((m.league.clone(), team.clone()), st);
            self.last_date.insert(team.clone(), m.date);
            self.last_seen_in
                .insert(team.clone(), (m.league.clone(), m.season.clone()));
        }
        self.history
            .entry(m.league.clone())
            .or_default()
            .push((m.date, m.clone()));
    }

    /// Current state of a team in a league, if it has played there.
    pub fn team_state(&self, league: &str, team: &str) -> Option<&TeamSeasonState> {
        self.states.get(&(league.to_string(), team.to_string()))
    }
}

fn month_name(m: u32) -> &'static str {
    const NAMES: [&str; 12] = [
        "January",
        "February",
        "March",
        "April",
        "May",
        "June",
        "July",
        "August",
        "September",
        "October",
        "November",
        "December",
    ];
    NAMES[(m as usize).clamp(1, 12) - 1]
}

/// Features for every match of a chronologically sorted dataset.
pub fn extract(d: &Dataset, cfg: &FeatureConfig, rng_seed: u64) -> Vec<FeaturedMatch> {
    let mut fx = FeatureExtractor::new(cfg.clone(), rng_seed);
    d.iter()
        .map(|m| {
            let fixture = m.fixture();
            let features = fx.features_for(&fixture);
            fx.record_result(m);
            FeaturedMatch {
                fixture,
                features,
                score: Some((m.home_goals, m.away_goals)),
            }
        })
        .collect()
}

/// Features for fixtures after all results in `history` are known.
pub fn extract_fixtures(
    history: &Dataset,
    fixtures: &[Fixture],
    cfg: &FeatureConfig,
    rng_seed: u64,
) -> Vec<FeaturedMatch> {
    let mut fx = FeatureExtractor::new(cfg.clone(), rng_seed);
    for m in history {
        fx.record_result(m);
    }
    fixtures
        .iter()
        .map(|f| FeaturedMatch {
            fixture: f.clone(),
            features: fx.features_for(f),
            score: None,
        })
        .collect()
}

/// Writes one row per (match, side) with the feature short names as columns.
pub fn write_feature_csv<W: Write>(matches: &[FeaturedMatch], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["match", "league", "date", "team", "opponent"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    for (i, m) in matches.iter().enumerate() {
        let f = &m.fixture;
        for (team, opp, fv) in [
            (&f.home_team, &f.away_team, &m.features.home),
            (&f.away_team, &f.home_team, &m.features.away),
        ] {
            let mut row = vec![
                i.to_string(),
                f.league.clone(),
                f.date.to_string(),
                team.clone(),
                opp.clone(),
            ];
            row.extend(fv.csv_fields());
            w.write_record(&row)?;
        }
    }
    w.flush()
        .map_err(|e| crate::error::Error::io("<feature csv>", e))?;
    Ok(())
}
