//! Match records: CSV ingestion, chronological ordering and cleaning.
//!
//! A [`Dataset`] is always sorted by date, then league, then home team, so
//! every downstream pass (feature extraction, windowing, validation splits)
//! sees the same deterministic order.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of the match CSV, in canonical order.
pub const CSV_HEADER: [&str; 7] = [
    "league",
    "season",
    "date",
    "home_team",
    "away_team",
    "home_goals",
    "away_goals",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchRecord {
    pub league: String,
    pub season: String,
    pub date: NaiveDate,
    pub home_team: String,
    pub away_team: String,
    pub home_goals: u32,
    pub away_goals: u32,
}

impl MatchRecord {
    pub fn outcome(&self) -> Outcome {
        outcome(self.home_goals, self.away_goals)
    }

    fn sort_key(&self) -> (NaiveDate, &str, &str, &str, &str, u32, u32) {
        (
            self.date,
            &self.league,
            &self.home_team,
            &self.away_team,
            &self.season,
            self.home_goals,
            self.away_goals,
        )
    }

    /// Stable identifier used in prediction exports.
    pub fn key(&self) -> String {
        self.fixture().key()
    }

    pub fn fixture(&self) -> Fixture {
        Fixture {
            league: self.league.clone(),
            season: self.season.clone(),
            date: self.date,
            home_team: self.home_team.clone(),
            away_team: self.away_team.clone(),
        }
    }
}

/// A scheduled match without a result.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fixture {
    pub league: String,
    pub season: String,
    pub date: NaiveDate,
    pub home_team: String,
    pub away_team: String,
}

impl Fixture {
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.league, self.date, self.home_team, self.away_team
        )
    }
}

/// Reads a fixtures CSV: the match header without the two goal columns.
pub fn read_fixtures_csv<R: Read>(reader: R) -> Result<Vec<Fixture>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let idx: Vec<usize> = CSV_HEADER[..5]
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MalformedRow {
                    row: 0,
                    column: name.to_string(),
                    message: "missing from header".to_string(),
                })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::MalformedRow {
            row: row_no,
            column: "*".to_string(),
            message: e.to_string(),
        })?;
        let get = |k: usize| row.get(idx[k]).unwrap_or("").to_string();
        let date_str = get(2);
        let date = NaiveDate::parse_from_str(&date_str, "%Y-%m-%d").map_err(|e| {
            Error::MalformedRow {
                row: row_no,
                column: "date".to_string(),
                message: format!("unparseable date `{date_str}`: {e}"),
            }
        })?;
        let f = Fixture {
            league: get(0),
            season: get(1),
            date,
            home_team: get(3),
            away_team: get(4),
        };
        if f.home_team == f.away_team {
            return Err(Error::MalformedRow {
                row: row_no,
                column: "away_team".to_string(),
                message: "home and away team are identical".to_string(),
            });
        }
        out.push(f);
    }
    Ok(out)
}

fn chronological(a: &MatchRecord, b: &MatchRecord) -> Ordering {
    a.sort_key().cmp(&b.sort_key())
}

/// Result of a match from the home side's point of view.
///
/// The discriminants follow the ordered coding `2 > 1 > 0` used by the
/// cumulative-link draw model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    HomeLoss = 0,
    Draw = 1,
    HomeWin = 2,
}

impl Outcome {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Position in the `(win, draw, loss)` probability triple.
    pub fn triple_index(self) -> usize {
        match self {
            Outcome::HomeWin => 0,
            Outcome::Draw => 1,
            Outcome::HomeLoss => 2,
        }
    }

    /// One-hot vector in `(win, draw, loss)` order.
    pub fn indicator(self) -> [f64; 3] {
        let mut a = [0.0; 3];
        a[self.triple_index()] = 1.0;
        a
    }

    /// Points earned by the home side (3/1/0).
    pub fn home_points(self) -> u32 {
        match self {
            Outcome::HomeWin => 3,
            Outcome::Draw => 1,
            Outcome::HomeLoss => 0,
        }
    }

    pub fn away_points(self) -> u32 {
        match self {
            Outcome::HomeWin => 0,
            Outcome::Draw => 1,
            Outcome::HomeLoss => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::HomeWin => "home_win",
            Outcome::Draw => "draw",
            Outcome::HomeLoss => "home_loss",
        }
    }
}

pub fn outcome(home_goals: u32, away_goals: u32) -> Outcome {
    match home_goals.cmp(&away_goals) {
        Ordering::Greater => Outcome::HomeWin,
        Ordering::Equal => Outcome::Draw,
        Ordering::Less => Outcome::HomeLoss,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<MatchRecord>,
}

impl Dataset {
    pub fn from_records(mut records: Vec<MatchRecord>) -> Self {
        records.sort_by(chronological);
        Dataset { records }
    }

    pub fn records(&self) -> &[MatchRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<MatchRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MatchRecord> {
        self.records.iter()
    }

    pub fn leagues(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.league.as_str()).collect()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.records.first().map(|r| r.date)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.records.last().map(|r| r.date)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.league.as_str(),
                r.season.as_str(),
                &r.date.format("%Y-%m-%d").to_string(),
                r.home_team.as_str(),
                r.away_team.as_str(),
                &r.home_goals.to_string(),
                &r.away_goals.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a MatchRecord;
    type IntoIter = std::slice::Iter<'a, MatchRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// Loads a match CSV from disk. Rows are returned sorted.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let dataset = read_csv(file)?;
    log::info!("loaded {} matches from {}", dataset.len(), path.display());
    Ok(dataset)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    // a file with no header at all holds no matches
    if header.iter().all(|h| h.is_empty()) {
        return Ok(Dataset::from_records(Vec::new()));
    }
    let column = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| {
            Error::MalformedRow {
                row: 0,
                column: name.to_string(),
                message: "missing from header".to_string(),
            }
        })
    };
    let idx: Vec<usize> = CSV_HEADER.iter().map(|c| column(c)).collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // Data rows are numbered from 1; the header is row 0.
        let row_no = i + 1;
        let row = row.map_err(|e| Error::MalformedRow {
            row: row_no,
            column: "*".to_string(),
            message: e.to_string(),
        })?;
        let field = |k: usize| -> Result<&str> {
            row.get(idx[k]).ok_or_else(|| Error::MalformedRow {
                row: row_no,
                column: CSV_HEADER[k].to_string(),
                message: "missing field".to_string(),
            })
        };
        let bad = |k: usize, message: String| Error::MalformedRow {
            row: row_no,
            column: CSV_HEADER[k].to_string(),
            message,
        };
        let date_str = field(2)?;
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
            .map_err(|e| bad(2, format!("unparseable date `{date_str}`: {e}")))?;
        let goals = |k: usize| -> Result<u32> {
            let s = field(k)?;
            s.parse::<u32>()
                .map_err(|_| bad(k, format!("expected a non-negative integer, got `{s}`")))
        };
        let record = MatchRecord {
            league: field(0)?.to_string(),
            season: field(1)?.to_string(),
            date,
            home_team: field(3)?.to_string(),
            away_team: field(4)?.to_string(),
            home_goals: goals(5)?,
            away_goals: goals(6)?,
        };
        if record.home_team.is_empty() {
            return Err(bad(3, "empty team name".to_string()));
        }
        if record.home_team == record.away_team {
            return Err(bad(4, "home and away team are identical".to_string()));
        }
        records.push(record);
    }
    Ok(Dataset::from_records(records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub record: MatchRecord,
    pub copies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateAnomaly {
    pub record: MatchRecord,
    pub season_first_year: i32,
    pub season_last_year: i32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub duplicate_groups: Vec<DuplicateGroup>,
    pub date_anomalies: Vec<DateAnomaly>,
    /// Season labels that could not be read as a year range; their matches
    /// are not date-checked.
    pub unparsed_seasons: Vec<String>,
}

impl AnomalyReport {
    pub fn is_empty(&self) -> bool {
        self.duplicate_groups.is_empty()
            && self.date_anomalies.is_empty()
            && self.unparsed_seasons.is_empty()
    }
}

/// Reads a season label such as `2013-2014`, `2013/14`, `33-34` or `2016`
/// as an inclusive range of calendar years.
pub fn season_years(label: &str) -> Option<(i32, i32)> {
    fn year(s: &str, century_from: Option<i32>) -> Option<i32> {
        let s = s.trim();
        if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let v: i32 = s.parse().ok()?;
        match s.len() {
            4 => Some(v),
            2 => Some(match century_from {
                Some(first) => first - first % 100 + v,
                None => 2000 + v,
            }),
            _ => None,
        }
    }
    let parts: Vec<&str> = label.split(['-', '/']).collect();
    match parts.as_slice() {
        [single] => year(single, None).map(|y| (y, y)),
        [a, b] => {
            let first = year(a, None)?;
            let mut last = year(b, Some(first))?;
            if last < first {
                // e.g. 1999-00
                last += 100;
            }
            (last - first <= 1).then_some((first, last))
        }
        _ => None,
    }
}

/// Removes exact duplicates and reports matches dated more than twelve
/// months outside their season label's calendar years. Dates are never
/// altered.
pub fn clean(d: &Dataset) -> (Dataset, AnomalyReport) {
    let mut report = AnomalyReport::default();
    let mut kept: Vec<MatchRecord> = Vec::with_capacity(d.len());
    // Exact duplicates are adjacent because the sort key covers every field.
    let mut i = 0;
    let recs = d.records();
    while i < recs.len() {
        let mut j = i + 1;
        while j < recs.len() && recs[j] == recs[i] {
            j += 1;
        }
        if j - i > 1 {
            report.duplicate_groups.push(DuplicateGroup {
                record: recs[i].clone(),
                copies: j - i,
            });
        }
        kept.push(recs[i].clone());
        i = j;
    }

    let mut unparsed = BTreeSet::new();
    for r in &kept {
        match season_years(&r.season) {
            Some((first, last)) => {
                let start = NaiveDate::from_ymd_opt(first, 1, 1).expect("valid year");
                let end = NaiveDate::from_ymd_opt(last, 12, 31).expect("valid year");
                let lo = start - Months::new(12);
                let hi = end + Months::new(12);
                if r.date < lo || r.date > hi {
                    report.date_anomalies.push(DateAnomaly {
                        record: r.clone(),
                        season_first_year: first,
                        season_last_year: last,
                    });
                }
            }
            None => {
                unparsed.insert(r.season.clone());
            }
        }
    }
    report.unparsed_seasons = unparsed.into_iter().collect();
    (Dataset { records: kept }, report)
}

/// Quarter of the calendar year (1-4).
pub fn quarter(date: NaiveDate) -> u32 {
    (date.month() - 1) / 3 + 1
}

#[cfg(test)]
pub(crate) mod tests_support {
    /// The three artificial matches of the worked feature example, listed
    /// out of date order.
    pub(crate) const TABLE2: &str = "\
league,season,date,home_team,away_team,home_goals,away_goals
Country1,33-34,2033-08-26,team A,team D,0,0
Country1,33-34,2033-08-18,team A,team B,2,0
Country1,33-34,2033-08-21,team A,team C,2,1
";
}
