//! Per-fixture predictions shared by every model family.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Conditions under which a prediction fell back to a default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// A team without a fitted effect; its effect was set to 0.
    UnseenTeam,
    /// No model for the league; the neutral triple was used.
    UnseenLeague,
    /// A season beyond the fitted ones; its effects were extrapolated.
    UnseenSeason,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::UnseenTeam => "unseen_team",
            Flag::UnseenLeague => "unseen_league",
            Flag::UnseenSeason => "unseen_season",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `(p_win, p_draw, p_loss)` from the home side.
    pub probs: [f64; 3],
    /// Expected home and away goals, for score models.
    #[serde(default)]
    pub expected_goals: Option<[f64; 2]>,
    #[serde(default)]
    pub flags: BTreeSet<Flag>,
}

impl Prediction {
    pub fn new(probs: [f64; 3]) -> Self {
        Prediction {
            probs,
            expected_goals: None,
            flags: BTreeSet::new(),
        }
    }

    pub fn neutral() -> Self {
        Prediction::new([1.0 / 3.0; 3])
    }

    pub fn flagged(mut self, flag: Flag) -> Self {
        self.flags.insert(flag);
        self
    }

    pub fn flag_string(&self) -> String {
        self.flags
            .iter()
            .map(|f| f.as_str())
            .collect::<Vec<_>>()
            .join(";")
    }
}
