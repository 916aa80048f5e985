//! Train / validation / test splits.
//!
//! Both protocols drop validation and test entries whose user or item never
//! occurs in the training set. Dropped counts are kept on the split and
//! logged.

use std::collections::HashSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dims, Entry, ObservedTensor};
use crate::error::{NtfError, Result};
use crate::rng;

/// Half-open range of time slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotWindow {
    pub start: usize,
    pub end: usize,
}

impl SlotWindow {
    pub fn new(start: usize, end: usize) -> Self {
        SlotWindow { start, end }
    }

    pub fn contains(&self, k: usize) -> bool {
        (self.start..self.end).contains(&k)
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

impl std::str::FromStr for SlotWindow {
    type Err = String;

    /// Parses `a..b` (half-open).
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("expected `start..end`, got `{s}`"))?;
        let start = a
            .trim()
            .parse()
            .map_err(|_| format!("bad window start `{a}`"))?;
        let end = b
            .trim()
            .parse()
            .map_err(|_| format!("bad window end `{b}`"))?;
        Ok(SlotWindow { start, end })
    }
}

impl std::fmt::Display for SlotWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: ObservedTensor,
    pub validation: ObservedTensor,
    pub test: ObservedTensor,
    /// Validation entries removed by entity filtering.
    pub filtered_validation: usize,
    /// Test entries removed by entity filtering.
    pub filtered_test: usize,
}

impl DatasetSplit {
    pub fn dims(&self) -> Dims {
        self.train.dims()
    }

    /// All (user, item) pairs seen in any of the three parts.
    pub fn observed_pairs(&self) -> HashSet<(usize, usize)> {
        let mut pairs = self.train.pair_set();
        pairs.extend(self.validation.pair_set());
        pairs.extend(self.test.pair_set());
        pairs
    }
}

struct EntityFilter {
    users: HashSet<usize>,
    items: HashSet<usize>,
}

impl EntityFilter {
    fn from_train(train: &[Entry]) -> Self {
        EntityFilter {
            users: train.iter().map(|e| e.i).collect(),
            items: train.iter().map(|e| e.j).collect(),
        }
    }

    /// Keeps entries whose user and item both occur in training; returns the kept set and the drop count.
    fn apply(&self, entries: Vec<Entry>) -> (Vec<Entry>, usize) {
        let before = entries.len();
        let kept: Vec<Entry> = entries
            .into_iter()
            .filter(|e| self.users.contains(&e.i) && self.items.contains(&e.j))
            .collect();
        let dropped = before - kept.len();
        (kept, dropped)
    }
}

fn sorted(dims: Dims, mut entries: Vec<Entry>) -> ObservedTensor {
    entries.sort_by_key(Entry::key);
    ObservedTensor::from_sorted_unchecked(dims, entries)
}

fn finish(
    dims: Dims,
    train: Vec<Entry>,
    validation: Vec<Entry>,
    test: Vec<Entry>,
) -> Result<DatasetSplit> {
    if train.is_empty() {
        return Err(NtfError::EmptyTrain);
    }
    let filter = EntityFilter::from_train(&train);
    let (validation, filtered_validation) = filter.apply(validation);
    let (test, filtered_test) = filter.apply(test);
    if filtered_validation > 0 || filtered_test > 0 {
        log::info!(
            "entity filtering removed {filtered_validation} validation and {filtered_test} test entries"
        );
    }
    if test.is_empty() {
        return Err(NtfError::EmptyTest);
    }
    Ok(DatasetSplit {
        train: sorted(dims, train),
        validation: sorted(dims, validation),
        test: sorted(dims, test),
        filtered_validation,
        filtered_test,
    })
}

/// Time-window split: train on `train_window` minus a uniformly drawn
/// validation sample, test on `test_window`.
pub fn split_by_window(
    tensor: &ObservedTensor,
    train_window: SlotWindow,
    test_window: SlotWindow,
    validation_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let slots = tensor.dims().slots;
    if train_window.start >= train_window.end || test_window.start >= test_window.end {
        return Err(NtfError::InvalidWindow("windows must be non-empty".into()));
    }
    if test_window.start < train_window.end {
        return Err(NtfError::InvalidWindow(format!(
            "test window {test_window} must start after train window {train_window}"
        )));
    }
    if test_window.end > slots {
        return Err(NtfError::InvalidWindow(format!(
            "test window {test_window} exceeds {slots} slots"
        )));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(NtfError::FractionOutOfRange {
            train: 1.0 - validation_fraction,
            validation: validation_fraction,
        });
    }

    let mut window: Vec<Entry> = tensor
        .entries()
        .iter()
        .filter(|e| train_window.contains(e.k))
        .copied()
        .collect();
    let test: Vec<Entry> = tensor
        .entries()
        .iter()
        .filter(|e| test_window.contains(e.k))
        .copied()
        .collect();
    let n_validation = (validation_fraction * window.len() as f64).round() as usize;
    window.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let train = window.split_off(n_validation);
    finish(tensor.dims(), train, window, test)
}

/// Uniform random partition into train / validation / test by fraction.
pub fn split_by_ratio(
    tensor: &ObservedTensor,
    train_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let valid = train_fraction > 0.0
        && validation_fraction >= 0.0
        && train_fraction + validation_fraction < 1.0;
    if !valid {
        return Err(NtfError::FractionOutOfRange {
            train: train_fraction,
            validation: validation_fraction,
        });
    }
    let n = tensor.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    let n_validation = ((validation_fraction * n as f64).round() as usize).min(n - n_train);

    let mut entries = tensor.entries().to_vec();
    entries.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let mut rest = entries.split_off(n_train);
    let test = rest.split_off(n_validation);
    finish(tensor.dims(), entries, rest, test)
}
