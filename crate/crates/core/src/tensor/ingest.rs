//! CSV ingestion: raw ids and timestamps to dense indices and time slots.

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{Dims, Entry, ObservedTensor};
use crate::error::{NtfError, Result};

/// How raw timestamps are grouped into slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Calendar months.
    Month,
    /// Seven-day buckets counted from the earliest date.
    Week,
    /// Fixed-width buckets over integer (unix) seconds.
    Seconds(u64),
    /// The time column already holds integer slot indices.
    Slot,
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "month" => Ok(Granularity::Month),
            "week" => Ok(Granularity::Week),
            "slot" => Ok(Granularity::Slot),
            other => {
                let width = other
                    .strip_prefix("seconds:")
                    .ok_or_else(|| format!("unknown granularity `{other}`"))?;
                match width.parse::<u64>() {
                    Ok(w) if w > 0 => Ok(Granularity::Seconds(w)),
                    _ => Err(format!("bad bucket width `{width}`")),
                }
            }
        }
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Granularity::Month => write!(f, "month"),
            Granularity::Week => write!(f, "week"),
            Granularity::Seconds(w) => write!(f, "seconds:{w}"),
            Granularity::Slot => write!(f, "slot"),
        }
    }
}

/// Resolved bucketing: granularity, the earliest bucket unit, and the slot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBucketing {
    pub granularity: Granularity,
    /// Bucket unit of the earliest timestamp (months since year 0, days since
    /// the common era, seconds, or raw slot number depending on granularity).
    pub origin: i64,
    pub slots: usize,
}

impl TimeBucketing {
    pub fn slot_of(&self, unit: i64) -> usize {
        let offset = unit - self.origin;
        debug_assert!(offset >= 0);
        match self.granularity {
            Granularity::Month | Granularity::Slot => offset as usize,
            Granularity::Week => (offset / 7) as usize,
            Granularity::Seconds(w) => (offset as u64 / w) as usize,
        }
    }
}

/// One input row before indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub time: String,
    pub value: f64,
}

/// Bijection between raw identifiers and dense indices, for users and items.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityVocab {
    pub users: Vec<String>,
    pub items: Vec<String>,
    #[serde(skip)]
    user_index: HashMap<String, usize>,
    #[serde(skip)]
    item_index: HashMap<String, usize>,
}

impl EntityVocab {
    fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, raw: &str) -> usize {
        if let Some(&idx) = index.get(raw) {
            return idx;
        }
        let idx = names.len();
        names.push(raw.to_owned());
        index.insert(raw.to_owned(), idx);
        idx
    }

    pub fn user_index(&self, raw: &str) -> Option<usize> {
        self.user_index.get(raw).copied()
    }

    pub fn item_index(&self, raw: &str) -> Option<usize> {
        self.item_index.get(raw).copied()
    }

    /// Rebuilds the lookup maps after deserialization.
    pub fn reindex(&mut self) {
        self.user_index = self.users.iter().cloned().zip(0..).collect();
        self.item_index = self.items.iter().cloned().zip(0..).collect();
    }
}

/// Converts a time string to the integer unit of `granularity`.
fn time_unit(raw: &str, granularity: Granularity) -> Result<i64, String> {
    let raw = raw.trim();
    let as_int = raw.parse::<i64>().ok();
    let as_date = || -> Result<NaiveDate, String> {
        if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
            return Ok(d);
        }
        NaiveDate::parse_from_str(&format!("{raw}-01"), "%Y-%m-%d")
            .map_err(|_| format!("unrecognized time `{raw}`"))
    };
    match granularity {
        Granularity::Slot => match as_int {
            Some(s) if s >= 0 => Ok(s),
            _ => Err(format!("expected a non-negative integer slot, got `{raw}`")),
        },
        Granularity::Seconds(_) => match as_int {
            Some(s) => Ok(s),
            None => Ok(as_date()?
                .and_hms_opt(0, 0, 0)
                .expect("midnight is valid")
                .and_utc()
                .timestamp()),
        },
        Granularity::Month => {
            let d = as_date()?;
            Ok(i64::from(d.year()) * 12 + i64::from(d.month0()))
        }
        Granularity::Week => Ok(i64::from(as_date()?.num_days_from_ce())),
    }
}

/// Builds an observed tensor from `(line number, record)` pairs. Vocabularies
/// number entities in first-appearance order.
pub fn ingest_records<I>(
    records: I,
    granularity: Granularity,
) -> Result<(ObservedTensor, EntityVocab, TimeBucketing)>
where
    I: IntoIterator<Item = (usize, RawRecord)>,
{
    let mut vocab = EntityVocab::default();
    let mut staged = Vec::new();
    for (line, rec) in records {
        let unit = time_unit(&rec.time, granularity)
            .map_err(|reason| NtfError::UnparseableRecord { line, reason })?;
        if !rec.value.is_finite() {
            return Err(NtfError::UnparseableRecord {
                line,
                reason: "value is not finite".into(),
            });
        }
        let i = EntityVocab::intern(&mut vocab.users, &mut vocab.user_index, &rec.user);
        let j = EntityVocab::intern(&mut vocab.items, &mut vocab.item_index, &rec.item);
        staged.push((i, j, unit, rec.value));
    }
    let origin = staged
        .iter()
        .map(|r| r.2)
        .min()
        .ok_or(NtfError::EmptyInput)?;
    let mut bucketing = TimeBucketing {
        granularity,
        origin,
        slots: 0,
    };
    let mut seen = HashSet::with_capacity(staged.len());
    let mut entries = Vec::with_capacity(staged.len());
    for (i, j, unit, value) in staged {
        let k = bucketing.slot_of(unit);
        if !seen.insert((i, j, k)) {
            return Err(NtfError::DuplicateEntry(i, j, k));
        }
        entries.push(Entry::new(i, j, k, value));
    }
    bucketing.slots = entries.iter().map(|e| e.k).max().map_or(0, |k| k + 1);
    let dims = Dims::new(vocab.users.len(), vocab.items.len(), bucketing.slots);
    let tensor = ObservedTensor::new(dims, entries)?;
    Ok((tensor, vocab, bucketing))
}

/// Reads `user,item,time,value` CSV (with header) and ingests it.
pub fn ingest_csv<R: Read>(
    reader: R,
    granularity: Granularity,
) -> Result<(ObservedTensor, EntityVocab, TimeBucketing)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["user", "item", "time", "value"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(NtfError::UnparseableRecord {
            line: 1,
            reason: format!(
                "expected header `user,item,time,value`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut records = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let line = n + 2;
        let row = row.map_err(|e| NtfError::UnparseableRecord {
            line,
            reason: e.to_string(),
        })?;
        if row.len() != 4 {
            return Err(NtfError::UnparseableRecord {
                line,
                reason: format!("expected 4 fields, got {}", row.len()),
            });
        }
        let value = row[3]
            .parse::<f64>()
            .map_err(|_| NtfError::UnparseableRecord {
                line,
                reason: format!("bad value `{}`", &row[3]),
            })?;
        records.push((
            line,
            RawRecord {
                user: row[0].to_owned(),
                item: row[1].to_owned(),
                time: row[2].to_owned(),
                value,
            },
        ));
    }
    ingest_records(records, granularity)
}
