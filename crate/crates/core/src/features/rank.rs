//! Centered least-squares team rating over a window of matches.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::match_data::{MatchRecord, Outcome};

const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingVector {
    pub teams: Vec<String>,
    pub ratings: Vec<f64>,
    pub home_offset: Option<f64>,
}

impl RatingVector {
    pub fn get(&self, team: &str) -> Option<f64> {
        self.teams
            .binary_search_by(|t| t.as_str().cmp(team))
            .ok()
            .map(|i| self.ratings[i])
    }
}

/// Ordinal score of a result from the home side: +1 win, 0 draw, -1 loss.
pub fn ordinal_score(outcome: Outcome) -> f64 {
    match outcome {
        Outcome::HomeWin => 1.0,
        Outcome::Draw => 0.0,
        Outcome::HomeLoss => -1.0,
    }
}

/// Least-squares ratings minimizing `sum (r_home - r_away + h - s)^2` where
/// `s` is the ordinal score of each match and `h` an optional home offset.
pub fn ls_rank(window: &[MatchRecord], home_adv: bool) -> Result<RatingVector> {
    if window.is_empty() {
        return Err(Error::Empty("rating window"));
    }
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for m in window {
        index.entry(m.home_team.as_str()).or_insert(0);
        index.entry(m.away_team.as_str()).or_insert(0);
    }
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    let games: Vec<(usize, usize, f64)> = window
        .iter()
        .map(|m| {
            (
                index[m.home_team.as_str()],
                index[m.away_team.as_str()],
                ordinal_score(m.outcome()),
            )
        })
        .collect();
    let (ratings, home_offset) = solve_ratings(&games, index.len(), home_adv);
    Ok(RatingVector {
        teams: index.keys().map(|s| s.to_string()).collect(),
        ratings,
        home_offset,
    })
}

/// Solves the rating normal equations for `(home, away, score)` triples.
///
/// A ridge of `1e-8` on the ratings (not on the home offset) keeps
/// disconnected schedules solvable; ratings are centered afterwards.
pub fn solve_ratings(
    games: &[(usize, usize, f64)],
    n_teams: usize,
    home_adv: bool,
) -> (Vec<f64>, Option<f64>) {
    let dim = n_teams + usize::from(home_adv);
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    for &(h, w, s) in games {
        a[(h, h)] += 1.0;
        a[(w, w)] += 1.0;
        a[(h, w)] -= 1.0;
        a[(w, h)] -= 1.0;
        b[h] += s;
        b[w] -= s;
        if home_adv {
            let o = n_teams;
            a[(o, o)] += 1.0;
            a[(o, h)] += 1.0;
            a[(h, o)] += 1.0;
            a[(o, w)] -= 1.0;
            a[(w, o)] -= 1.0;
            b[o] += s;
        }
    }
    for i in 0..n_teams {
        a[(i, i)] += RIDGE;
    }
    let x = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a.lu().solve(&b).unwrap_or_else(|| DVector::zeros(dim)),
    };
    let mean = if n_teams > 0 {
        x.rows(0, n_teams).sum() / n_teams as f64
    } else {
        0.0
    };
    let ratings = (0..n_teams).map(|i| x[i] - mean).collect();
    (ratings, home_adv.then(|| x[n_teams]))
}
