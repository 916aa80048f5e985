//! Sparse observed tensors over (user, item, time slot).

mod ingest;
mod io;
mod split;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{NtfError, Result};

pub use ingest::{ingest_csv, ingest_records, EntityVocab, Granularity, RawRecord, TimeBucketing};
pub use io::{
    read_tensor, read_tensor_from, write_tensor, write_tensor_to, TENSOR_MAGIC, TENSOR_VERSION,
};
pub use split::{split_by_ratio, split_by_window, DatasetSplit, SlotWindow};

/// Tensor extents: (users, items, time slots).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub users: usize,
    pub items: usize,
    pub slots: usize,
}

impl Dims {
    pub fn new(users: usize, items: usize, slots: usize) -> Self {
        Dims {
            users,
            items,
            slots,
        }
    }

    pub fn cells(&self) -> u128 {
        self.users as u128 * self.items as u128 * self.slots as u128
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.users, self.items, self.slots)
    }

    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        i < self.users && j < self.items && k < self.slots
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.users, self.items, self.slots)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

impl Entry {
    pub fn new(i: usize, j: usize, k: usize, value: f64) -> Self {
        Entry { i, j, k, value }
    }

    pub fn key(&self) -> (usize, usize, usize) {
        (self.i, self.j, self.k)
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.i, self.j)
    }
}

/// A set of observed cells kept in lexicographic (i, j, k) order with no
/// repeated coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedTensor {
    dims: Dims,
    entries: Vec<Entry>,
}

impl ObservedTensor {
    /// Validates bounds, sorts into canonical order and rejects duplicate coordinates.
    pub fn new(dims: Dims, mut entries: Vec<Entry>) -> Result<Self> {
        for e in &entries {
            if !dims.contains(e.i, e.j, e.k) {
                return Err(NtfError::EntryOutOfBounds {
                    i: e.i,
                    j: e.j,
                    k: e.k,
                    dims: dims.as_tuple(),
                });
            }
        }
        entries.sort_by_key(Entry::key);
        if let Some(w) = entries.windows(2).find(|w| w[0].key() == w[1].key()) {
            let (i, j, k) = w[0].key();
            return Err(NtfError::DuplicateEntry(i, j, k));
        }
        Ok(ObservedTensor { dims, entries })
    }

    pub fn empty(dims: Dims) -> Self {
        ObservedTensor {
            dims,
            entries: Vec::new(),
        }
    }

    /// Entries already known to be in canonical order within `dims`.
    pub(crate) fn from_sorted_unchecked(dims: Dims, entries: Vec<Entry>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].key() < w[1].key()));
        ObservedTensor { dims, entries }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        self.entries
            .binary_search_by_key(&(i, j, k), Entry::key)
            .ok()
            .map(|idx| self.entries[idx].value)
    }

    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        self.get(i, j, k).is_some()
    }

    /// Distinct (user, item) pairs observed at any slot.
    pub fn pair_set(&self) -> HashSet<(usize, usize)> {
        self.entries.iter().map(Entry::pair).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    /// Smallest and largest slot index present, if any.
    pub fn slot_span(&self) -> Option<(usize, usize)> {
        let min = self.entries.iter().map(|e| e.k).min()?;
        let max = self.entries.iter().map(|e| e.k).max()?;
        Some((min, max))
    }

    pub fn stats(&self) -> DatasetStats {
        stats(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub slots: usize,
    pub entries: usize,
    pub density: f64,
}

pub fn stats(tensor: &ObservedTensor) -> DatasetStats {
    let dims = tensor.dims();
    let cells = dims.cells();
    let density = if cells == 0 {
        0.0
    } else {
        tensor.len() as f64 / cells as f64
    };
    DatasetStats {
        users: dims.users,
        items: dims.items,
        slots: dims.slots,
        entries: tensor.len(),
        density,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_and_duplicates() {
        let dims = Dims::new(2, 2, 2);
        let t = ObservedTensor::new(
            dims,
            vec![
                Entry::new(1, 0, 0, 1.0),
                Entry::new(0, 1, 1, 2.0),
                Entry::new(0, 1, 0, 3.0),
            ],
        )
        .unwrap();
        let keys: Vec<_> = t.entries().iter().map(Entry::key).collect();
        assert_eq!(keys, vec![(0, 1, 0), (0, 1, 1), (1, 0, 0)]);
        assert_eq!(t.get(0, 1, 1), Some(2.0));
        assert_eq!(t.get(1, 1, 1), None);

        let dup = ObservedTensor::new(
            dims,
            vec![Entry::new(0, 0, 0, 1.0), Entry::new(0, 0, 0, 2.0)],
        );
        assert!(matches!(dup, Err(NtfError::DuplicateEntry(0, 0, 0))));
        let oob = ObservedTensor::new(dims, vec![Entry::new(0, 2, 0, 1.0)]);
        assert!(matches!(oob, Err(NtfError::EntryOutOfBounds { .. })));
    }

    #[test]
    fn density_examples() {
        let t = ObservedTensor::new(
            Dims::new(2, 2, 2),
            vec![
                Entry::new(0, 0, 0, 1.0),
                Entry::new(0, 1, 0, 1.0),
                Entry::new(1, 1, 1, 1.0),
            ],
        )
        .unwrap();
        assert_eq!(t.stats().density, 0.375);

        assert_eq!(
            ObservedTensor::empty(Dims::new(3, 3, 3)).stats().density,
            0.0
        );
        assert_eq!(
            ObservedTensor::empty(Dims::new(0, 3, 3)).stats().density,
            0.0
        );

        let dims = Dims::new(50, 40, 12);
        let entries: Vec<Entry> = (0..1200)
            .map(|n| Entry::new(n % 50, (n / 50) % 40, n / 2000, 1.0))
            .collect();
        let t = ObservedTensor::new(dims, entries).unwrap();
        assert_eq!(t.stats().density, 0.05);
    }
}
