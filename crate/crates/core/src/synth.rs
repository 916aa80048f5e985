//! Synthetic dynamic tensors with planted CP structure and temporal drift.
//!
//! Planted factors are Gaussian with variance `r^(-1/3)` per coordinate so a
//! noiseless cell value has unit variance. Time factors follow a Gaussian
//! random walk. Ratings are an affine map of the noisy value onto the rating
//! range (±3 population standard deviations span it), clipped. Link
//! positives are the top-scoring cells, at most one slot per (user, item).

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NtfError, Result};
use crate::linalg::Matrix;
use crate::metrics::Task;
use crate::model::{cp_predict, NtfModel};
use crate::nn::sigmoid;
use crate::rng;
use crate::tensor::{Dims, Entry, ObservedTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dims: Dims,
    pub rank: usize,
    pub density: f64,
    /// Random-walk step σ_T of the planted time factors.
    pub drift: f64,
    /// Observation noise σ_n, in planted (unit-variance) units.
    pub noise: f64,
    pub task: Task,
    pub rating_range: (f64, f64),
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(dims: Dims) -> Self {
        SynthConfig {
            dims,
            rank: 4,
            density: 0.05,
            drift: 0.05,
            noise: 0.05,
            task: Task::Rating,
            rating_range: (1.0, 5.0),
            seed: 0,
        }
    }

    /// Number of observed cells, `round(density · I·J·K)`.
    pub fn target_count(&self) -> usize {
        (self.density * self.dims.cells() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(NtfError::InvalidConfig(
                "planted rank must be at least 1".into(),
            ));
        }
        if !(self.drift >= 0.0 && self.noise >= 0.0) {
            return Err(NtfError::InvalidConfig(
                "drift and noise scales must be non-negative".into(),
            ));
        }
        if self.task == Task::Rating && !(self.rating_range.0 < self.rating_range.1) {
            return Err(NtfError::InvalidConfig(format!(
                "rating range {:?} is empty",
                self.rating_range
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) || self.target_count() < 1 {
            return Err(NtfError::DensityTooLow {
                density: self.density,
            });
        }
        if self.task == Task::Link && self.target_count() > self.dims.users * self.dims.items {
            return Err(NtfError::InvalidConfig(
                "link density exceeds one slot per (user, item) pair".into(),
            ));
        }
        Ok(())
    }
}

/// Maps planted values to the observed scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueScale {
    /// `clip(center + slope · x, min, max)`
    Rating {
        center: f64,
        slope: f64,
        min: f64,
        max: f64,
    },
    /// A cell is positive when `sigmoid(x + noise) ≥ cutoff`.
    Link { cutoff: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFactors {
    /// U*: (I × r)
    pub users: Matrix,
    /// V*: (J × r)
    pub items: Matrix,
    /// T*: (K × r)
    pub time: Matrix,
    pub scale: ValueScale,
}

impl PlantedFactors {
    /// Noiseless CP value of a cell, in planted units.
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        cp_predict(self.users.row(i), self.items.row(j), self.time.row(k))
            .expect("planted factors share a rank")
    }

    /// Planted value mapped to the observed scale, without noise or clipping
    /// (link tasks: 1 for planted positives of the noiseless score, else 0).
    pub fn observed_scale(&self, i: usize, j: usize, k: usize) -> f64 {
        let x = self.value(i, j, k);
        match self.scale {
            ValueScale::Rating { center, slope, .. } => center + slope * x,
            ValueScale::Link { cutoff } => f64::from(sigmoid(x) >= cutoff),
        }
    }

    /// Converts an error in the observed scale back to planted units.
    pub fn unit(&self) -> f64 {
        match self.scale {
            ValueScale::Rating { slope, .. } => slope,
            ValueScale::Link { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub tensor: ObservedTensor,
    pub factors: PlantedFactors,
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix {
    let normal = Normal::new(0.0, std).expect("finite standard deviation");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Draws a tensor and its planted factors; deterministic in `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let Dims {
        users,
        items,
        slots,
    } = config.dims;
    let r = config.rank;
    let mut rng = rng::stream(config.seed, rng::SYNTH);
    let a = (r as f64).powf(-1.0 / 6.0);
    let u = gaussian_matrix(users, r, a, &mut rng);
    let v = gaussian_matrix(items, r, a, &mut rng);
    let mut t = gaussian_matrix(slots, r, a, &mut rng);
    // Increments are always drawn so that scaling σ_T rescales one fixed path.
    let steps = gaussian_matrix(slots, r, 1.0, &mut rng);
    for k in 1..slots {
        for n in 0..r {
            t[(k, n)] = t[(k - 1, n)] + config.drift * steps[(k, n)];
        }
    }
    let mut factors = PlantedFactors {
        users: u,
        items: v,
        time: t,
        scale: ValueScale::Link { cutoff: 0.0 },
    };

    let cells = users * items * slots;
    let cell = |c: usize| (c / (items * slots), (c / slots) % items, c % slots);
    let noisy: Vec<f64> = (0..cells)
        .map(|c| {
            let (i, j, k) = cell(c);
            let e: f64 = StandardNormal.sample(&mut rng);
            factors.value(i, j, k) + config.noise * e
        })
        .collect();
    let count = config.target_count();

    let entries = match config.task {
        Task::Rating => {
            let clean: Vec<f64> = (0..cells)
                .map(|c| {
                    let (i, j, k) = cell(c);
                    factors.value(i, j, k)
                })
                .collect();
            let mean = clean.iter().sum::<f64>() / cells as f64;
            let std =
                (clean.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cells as f64).sqrt();
            let (min, max) = config.rating_range;
            let slope = (max - min) / (6.0 * std.max(1e-12));
            let center = 0.5 * (min + max) - slope * mean;
            factors.scale = ValueScale::Rating {
                center,
                slope,
                min,
                max,
            };
            let mut picked = index::sample(&mut rng, cells, count).into_vec();
            picked.sort_unstable();
            picked
                .into_iter()
                .map(|c| {
                    let (i, j, k) = cell(c);
                    Entry::new(i, j, k, (center + slope * noisy[c]).clamp(min, max))
                })
                .collect()
        }
        Task::Link => {
            let mut order: Vec<usize> = (0..cells).collect();
            order.sort_by(|&a, &b| noisy[b].total_cmp(&noisy[a]).then(a.cmp(&b)));
            let mut used = HashSet::new();
            let mut chosen = Vec::with_capacity(count);
            for c in order {
                let (i, j, _) = cell(c);
                if used.insert((i, j)) {
                    chosen.push(c);
                    if chosen.len() == count {
                        break;
                    }
                }
            }
            let cutoff = chosen.last().map_or(1.0, |&c| sigmoid(noisy[c]));
            factors.scale = ValueScale::Link { cutoff };
            chosen.sort_unstable();
            chosen
                .into_iter()
                .map(|c| {
                    let (i, j, k) = cell(c);
                    Entry::new(i, j, k, 1.0)
                })
                .collect()
        }
    };
    Ok(SynthData {
        tensor: ObservedTensor::from_sorted_unchecked(config.dims, entries),
        factors,
    })
}

/// RMSE, in planted units, between `predict` and the noiseless planted
/// values on `probes` cells drawn uniformly from those not in `exclude`.
pub fn oracle_error_with<F>(
    predict: F,
    factors: &PlantedFactors,
    dims: Dims,
    probes: usize,
    seed: u64,
    exclude: &HashSet<(usize, usize, usize)>,
) -> Result<f64>
where
    F: FnOnce(&[(usize, usize, usize)]) -> Result<Vec<f64>>,
{
    let mut rng = rng::stream(seed, rng::PROBES);
    let free = (dims.cells() as usize).saturating_sub(exclude.len());
    if probes == 0 || free == 0 {
        return Err(NtfError::EmptyInput);
    }
    let mut cells = Vec::with_capacity(probes);
    while cells.len() < probes {
        let c = (
            rng.random_range(0..dims.users),
            rng.random_range(0..dims.items),
            rng.random_range(0..dims.slots),
        );
        if !exclude.contains(&c) {
            cells.push(c);
        }
    }
    let predictions = predict(&cells)?;
    let unit = factors.unit();
    let sq: f64 = cells
        .iter()
        .zip(&predictions)
        .map(|(&(i, j, k), p)| {
            let d = (p - factors.observed_scale(i, j, k)) / unit;
            d * d
        })
        .sum();
    Ok((sq / probes as f64).sqrt())
}

/// [`oracle_error_with`] for a trained model.
pub fn oracle_error(
    model: &NtfModel,
    factors: &PlantedFactors,
    probes: usize,
    seed: u64,
    exclude: &HashSet<(usize, usize, usize)>,
) -> Result<f64> {
    oracle_error_with(
        |cells| model.predict_batch(cells),
        factors,
        model.config.dims,
        probes,
        seed,
        exclude,
    )
}
