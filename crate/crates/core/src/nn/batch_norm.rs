//! Batch normalization over the rows of a batch.
//!
//! Rows may carry integer-like weights: a row with weight `w` behaves exactly
//! as `w` identical rows would. The model uses this to run the temporal encoder
//! once per distinct time slot of a minibatch while keeping the statistics of
//! the full minibatch.

use serde::{Deserialize, Serialize};

use crate::error::{NtfError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub epsilon: f64,
    /// Weight of the old running statistic in each update.
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub mode: BnMode,
}

/// Per-column statistics of one training batch (population variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Values saved by a training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
    pub stats: BatchStats,
}

impl BatchNormParams {
    pub fn new(dim: usize, epsilon: f64, momentum: f64) -> Self {
        assert!(epsilon > 0.0, "batch norm epsilon must be positive");
        assert!(
            (0.0..1.0).contains(&momentum),
            "batch norm momentum must be in [0, 1)"
        );
        BatchNormParams {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            epsilon,
            momentum,
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            mode: BnMode::Training,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(NtfError::shape(format!("{} columns", self.dim()), x.cols()));
        }
        Ok(())
    }

    /// Normalizes with statistics of `x` itself. Does not touch running statistics.
    pub fn forward_train(&self, x: &Matrix, weights: Option<&[f64]>) -> Result<(Matrix, BnCache)> {
        self.check_width(x)?;
        if x.rows() == 0 {
            return Err(NtfError::EmptyBatchInTraining);
        }
        let weight = |r: usize| weights.map_or(1.0, |w| w[r]);
        let total: f64 = (0..x.rows()).map(weight).sum();
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for r in 0..x.rows() {
            let w = weight(r);
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += w * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut var = vec![0.0; d];
        for r in 0..x.rows() {
            let w = weight(r);
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += w * (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= total);
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();

        let mut xhat = Matrix::zeros(x.rows(), d);
        let mut y = Matrix::zeros(x.rows(), d);
        for r in 0..x.rows() {
            for c in 0..d {
                let h = (x[(r, c)] - mean[c]) * inv_std[c];
                xhat[(r, c)] = h;
                y[(r, c)] = self.gamma[c] * h + self.beta[c];
            }
        }
        Ok((
            y,
            BnCache {
                xhat,
                inv_std,
                stats: BatchStats { mean, var },
            },
        ))
    }

    /// Normalizes one row with the running statistics.
    pub fn normalize_inference(&self, row: &mut [f64]) {
        for (c, v) in row.iter_mut().enumerate() {
            let inv = 1.0 / (self.running_var[c] + self.epsilon).sqrt();
            *v = self.gamma[c] * (*v - self.running_mean[c]) * inv + self.beta[c];
        }
    }

    pub fn forward_inference(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let mut y = x.clone();
        for r in 0..y.rows() {
            self.normalize_inference(y.row_mut(r));
        }
        Ok(y)
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for c in 0..self.dim() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * stats.mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * stats.var[c];
        }
    }

    /// Backward pass of [`forward_train`](Self::forward_train). `dy` holds the
    /// summed upstream gradient of every row (over its duplicates when weighted).
    /// Gamma and beta gradients are added into `grads`.
    pub fn backward(
        &self,
        cache: &BnCache,
        dy: &Matrix,
        weights: Option<&[f64]>,
        grads: &mut BatchNormParams,
    ) -> Matrix {
        let weight = |r: usize| weights.map_or(1.0, |w| w[r]);
        let rows = dy.rows();
        let total: f64 = (0..rows).map(weight).sum();
        let d = self.dim();
        let mut sum_dy = vec![0.0; d];
        let mut sum_dy_xhat = vec![0.0; d];
        for r in 0..rows {
            for c in 0..d {
                sum_dy[c] += dy[(r, c)];
                sum_dy_xhat[c] += dy[(r, c)] * cache.xhat[(r, c)];
            }
        }
        for c in 0..d {
            grads.beta[c] += sum_dy[c];
            grads.gamma[c] += sum_dy_xhat[c];
        }
        let mut dx = Matrix::zeros(rows, d);
        for r in 0..rows {
            let w = weight(r);
            for c in 0..d {
                dx[(r, c)] = self.gamma[c]
                    * cache.inv_std[c]
                    * (dy[(r, c)]
                        - w * sum_dy[c] / total
                        - w * cache.xhat[(r, c)] * sum_dy_xhat[c] / total);
            }
        }
        dx
    }
}

/// Mode-dependent batch normalization. In training mode the batch statistics
/// are used and folded into the running statistics.
pub fn batch_norm(bn: &mut BatchNormParams, batch: &Matrix) -> Result<Matrix> {
    match bn.mode {
        BnMode::Training => {
            let (y, cache) = bn.forward_train(batch, None)?;
            bn.update_running(&cache.stats);
            Ok(y)
        }
        BnMode::Inference => bn.forward_inference(batch),
    }
}
