//! The neural tensor factorization model.
//!
//! A prediction for cell (i, j, k) gathers the user row `U_i`, the item row
//! `V_j` and an encoded time embedding `T̂_k`, then decodes the triple with an
//! MLP or a three-way inner product. `T̂_k` is produced by running an LSTM over
//! the raw slot embeddings `T_{k−s}, …, T_{k−1}` (zero rows before slot 0) and
//! projecting the last hidden state, so it never reads `T_k` or any later row.

mod checkpoint;
mod config;
mod params;

use std::collections::BTreeMap;

use rand::Rng;

pub use checkpoint::{
    read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, TimeEncoder, Variant};
pub use params::NtfParams;

use crate::error::{NtfError, Result};
use crate::linalg::{axpy, Matrix};
use crate::nn::{
    lstm_step_backward, lstm_step_batch, sigmoid, Activation, BatchStats, BnCache, CandidateNorm,
    StepCache,
};
use crate::tensor::Entry;

/// Σ_l u_l · v_l · t_l
pub fn cp_predict(u: &[f64], v: &[f64], t: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.len() != t.len() {
        return Err(NtfError::shape(
            format!("three vectors of length {}", u.len()),
            format!("{}, {}", v.len(), t.len()),
        ));
    }
    Ok(u.iter().zip(v).zip(t).map(|((a, b), c)| a * b * c).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtfModel {
    pub config: ModelConfig,
    pub params: NtfParams,
}

/// Training-mode evaluation of one minibatch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// ½ Σ (x − x̂)² in loss space.
    pub loss: f64,
    pub grads: NtfParams,
    /// Batch statistics per LSTM step, then the projection (when batch norm is on).
    pub bn_stats: Vec<BatchStats>,
}

enum EncodeMode<'a> {
    Train(&'a [f64]),
    Inference,
}

struct EncoderTrace {
    steps: Vec<StepCache>,
    h_last: Matrix,
    proj_pre: Matrix,
    proj_bn: Option<BnCache>,
    t_hat: Matrix,
}

struct DecodeTrace {
    /// Layer inputs: the concatenation, then each hidden activation.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    raw: f64,
    out: f64,
}

impl NtfModel {
    pub fn new(config: ModelConfig, params: NtfParams) -> Result<Self> {
        config.validate()?;
        let expected = NtfParams::zeros(&config);
        let shapes = |p: &NtfParams| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
        if shapes(&expected) != shapes(&params) {
            return Err(NtfError::shape(
                "parameters matching the configuration",
                "mismatched tensors",
            ));
        }
        Ok(NtfModel { config, params })
    }

    /// Every learnable weight zero (batch norm scales stay at 1).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = NtfParams::zeros(&config);
        Ok(NtfModel { config, params })
    }

    /// Random initialization. The decoder's output bias starts at `target_mean`
    /// (given in the original value scale) when supplied.
    pub fn init<R: Rng>(
        config: ModelConfig,
        rng: &mut R,
        target_mean: Option<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = NtfParams::init(&config, rng);
        if let Some(mean) = target_mean {
            let m = config.to_loss_space(mean);
            params.head.b[0] = match config.output_activation {
                Activation::Sigmoid => {
                    let p = m.clamp(0.01, 0.99);
                    (p / (1.0 - p)).ln()
                }
                _ => m,
            };
        }
        Ok(NtfModel { config, params })
    }

    fn check_index(&self, i: usize, j: usize, k: usize) -> Result<()> {
        let d = self.config.dims;
        if i >= d.users || j >= d.items || k > d.slots {
            return Err(NtfError::IndexOutOfRange {
                i,
                j,
                k,
                dims: d.as_tuple(),
            });
        }
        Ok(())
    }

    /// Raw embedding row of slot `slot`, or zeros for a padding position.
    fn time_row(&self, slot: isize) -> &[f64] {
        static EMPTY: [f64; 0] = [];
        if slot < 0 {
            &EMPTY
        } else {
            self.params.time.row(slot as usize)
        }
    }

    fn encode_slots(&self, slots: &[usize], mode: EncodeMode<'_>) -> Result<EncoderTrace> {
        let cfg = &self.config;
        let l = cfg.embedding;
        let rows = slots.len();
        if cfg.encoder == TimeEncoder::LastRow {
            let mut t_hat = Matrix::zeros(rows, l);
            for (r, &k) in slots.iter().enumerate() {
                let row = self.time_row(k as isize - 1);
                if !row.is_empty() {
                    t_hat.row_mut(r).copy_from_slice(row);
                }
            }
            return Ok(EncoderTrace {
                steps: Vec::new(),
                h_last: Matrix::zeros(0, 0),
                proj_pre: Matrix::zeros(0, 0),
                proj_bn: None,
                t_hat,
            });
        }

        let d = cfg.hidden_state;
        let s = cfg.steps as isize;
        let mut h = Matrix::zeros(rows, d);
        let mut c = Matrix::zeros(rows, d);
        let mut steps = Vec::with_capacity(cfg.steps);
        for t in 0..s {
            let mut x = Matrix::zeros(rows, l);
            for (r, &k) in slots.iter().enumerate() {
                let row = self.time_row(k as isize - s + t);
                if !row.is_empty() {
                    x.row_mut(r).copy_from_slice(row);
                }
            }
            let norm = match (self.params.lstm_bn.get(t as usize), &mode) {
                (None, _) => CandidateNorm::None,
                (Some(bn), EncodeMode::Train(w)) => CandidateNorm::Train(bn, Some(w)),
                (Some(bn), EncodeMode::Inference) => CandidateNorm::Inference(bn),
            };
            let step = lstm_step_batch(&self.params.lstm, &x, &h, &c, norm)?;
            h = step.h.clone();
            c = step.c.clone();
            steps.push(step);
        }

        let mut proj_pre = Matrix::zeros(rows, l);
        for r in 0..rows {
            self.params
                .projection
                .forward_into(h.row(r), proj_pre.row_mut(r));
        }
        let (mut t_hat, proj_bn) = match (&self.params.projection_bn, &mode) {
            (None, _) => (proj_pre.clone(), None),
            (Some(bn), EncodeMode::Train(w)) => {
                let (y, cache) = bn.forward_train(&proj_pre, Some(w))?;
                (y, Some(cache))
            }
            (Some(bn), EncodeMode::Inference) => (bn.forward_inference(&proj_pre)?, None),
        };
        cfg.projection_activation.apply_slice(t_hat.as_mut_slice());
        Ok(EncoderTrace {
            steps,
            h_last: h,
            proj_pre,
            proj_bn,
            t_hat,
        })
    }

    /// Encoded time embedding `T̂_k` (inference mode). `k = K` is allowed and
    /// gives the embedding for the first unseen slot.
    pub fn encode_time(&self, k: usize) -> Result<Vec<f64>> {
        if k > self.config.dims.slots {
            return Err(NtfError::SlotOutOfRange {
                k,
                max: self.config.dims.slots,
            });
        }
        Ok(self
            .encode_slots(&[k], EncodeMode::Inference)?
            .t_hat
            .row(0)
            .to_vec())
    }

    fn decode_trace(&self, variant: Variant, u: &[f64], v: &[f64], t_hat: &[f64]) -> DecodeTrace {
        let cfg = &self.config;
        let raw;
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        match variant {
            Variant::Dot => {
                raw = u
                    .iter()
                    .zip(v)
                    .zip(t_hat)
                    .map(|((a, b), c)| a * b * c)
                    .sum();
            }
            Variant::Mlp => {
                let mut x = Vec::with_capacity(3 * cfg.embedding);
                x.extend_from_slice(u);
                x.extend_from_slice(v);
                x.extend_from_slice(t_hat);
                for layer in &self.params.hidden {
                    let mut z = vec![0.0; layer.output_dim()];
                    layer.forward_into(&x, &mut z);
                    let mut a = z.clone();
                    cfg.hidden_activation.apply_slice(&mut a);
                    inputs.push(x);
                    pre.push(z);
                    x = a;
                }
                let mut out = [0.0];
                self.params.head.forward_into(&x, &mut out);
                inputs.push(x);
                raw = out[0];
            }
        }
        let out = match cfg.output_activation {
            Activation::Sigmoid => sigmoid(raw),
            _ => raw,
        };
        DecodeTrace {
            inputs,
            pre,
            raw,
            out,
        }
    }

    /// MLP decoder on explicit embeddings, returned in the original value scale.
    pub fn decode(&self, u: &[f64], v: &[f64], t_hat: &[f64]) -> Result<f64> {
        let l = self.config.embedding;
        if u.len() != l || v.len() != l || t_hat.len() != l {
            return Err(NtfError::shape(
                format!("embeddings of length {l}"),
                format!("{}, {}, {}", u.len(), v.len(), t_hat.len()),
            ));
        }
        Ok(self
            .config
            .from_loss_space(self.decode_trace(Variant::Mlp, u, v, t_hat).out))
    }

    /// x̂_{i,j,k} in the original value scale (inference mode).
    pub fn predict(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        self.check_index(i, j, k)?;
        let t_hat = self.encode_time(k)?;
        let trace = self.decode_trace(
            self.config.variant,
            self.params.users.row(i),
            self.params.items.row(j),
            &t_hat,
        );
        Ok(self.config.from_loss_space(trace.out))
    }

    /// Batched [`predict`](Self::predict); each distinct slot is encoded once.
    pub fn predict_batch(&self, triples: &[(usize, usize, usize)]) -> Result<Vec<f64>> {
        for &(i, j, k) in triples {
            self.check_index(i, j, k)?;
        }
        let mut slot_row = BTreeMap::new();
        for &(_, _, k) in triples {
            let next = slot_row.len();
            slot_row.entry(k).or_insert(next);
        }
        let mut slots = vec![0; slot_row.len()];
        for (&k, &r) in &slot_row {
            slots[r] = k;
        }
        let enc = self.encode_slots(&slots, EncodeMode::Inference)?;
        Ok(triples
            .iter()
            .map(|&(i, j, k)| {
                let t_hat = enc.t_hat.row(slot_row[&k]);
                let trace = self.decode_trace(
                    self.config.variant,
                    self.params.users.row(i),
                    self.params.items.row(j),
                    t_hat,
                );
                self.config.from_loss_space(trace.out)
            })
            .collect())
    }

    /// Smallest `|z|` over the MLP hidden pre-activations of a training-mode
    /// pass on `batch` (infinite without hidden layers). ReLU has a kink at
    /// zero, so finite-difference checks want this well above the step size.
    pub fn hidden_margin(&self, batch: &[Entry]) -> Result<f64> {
        if self.config.variant == Variant::Dot || self.params.hidden.is_empty() {
            return Ok(f64::INFINITY);
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for e in batch {
            self.check_index(e.i, e.j, e.k)?;
            *counts.entry(e.k).or_default() += 1;
        }
        let slots: Vec<usize> = counts.keys().copied().collect();
        let weights: Vec<f64> = counts.values().map(|&n| n as f64).collect();
        let enc = self.encode_slots(&slots, EncodeMode::Train(&weights))?;
        let mut margin = f64::INFINITY;
        for e in batch {
            let r = slots.binary_search(&e.k).expect("slot collected above");
            let trace = self.decode_trace(
                Variant::Mlp,
                self.params.users.row(e.i),
                self.params.items.row(e.j),
                enc.t_hat.row(r),
            );
            margin = trace
                .pre
                .iter()
                .flatten()
                .fold(margin, |m, z| m.min(z.abs()));
        }
        Ok(margin)
    }

    /// Training-mode loss and gradients for a minibatch. Pure: batch-norm
    /// running statistics are returned in [`BatchGradient::bn_stats`] rather
    /// than applied.
    pub fn loss_and_grad(&self, batch: &[Entry]) -> Result<BatchGradient> {
        if batch.is_empty() {
            return Err(NtfError::EmptyBatch);
        }
        for e in batch {
            self.check_index(e.i, e.j, e.k)?;
        }
        let cfg = &self.config;
        let l = cfg.embedding;

        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for e in batch {
            *counts.entry(e.k).or_default() += 1;
        }
        let slots: Vec<usize> = counts.keys().copied().collect();
        let weights: Vec<f64> = counts.values().map(|&n| n as f64).collect();
        let row_of: BTreeMap<usize, usize> =
            slots.iter().enumerate().map(|(r, &k)| (k, r)).collect();

        let enc = self.encode_slots(&slots, EncodeMode::Train(&weights))?;
        let mut grads = self.params.zeros_like();
        let mut d_t_hat = Matrix::zeros(slots.len(), l);
        let mut loss = 0.0;

        for e in batch {
            let r = row_of[&e.k];
            let u = self.params.users.row(e.i);
            let v = self.params.items.row(e.j);
            let t_hat = enc.t_hat.row(r);
            let trace = self.decode_trace(cfg.variant, u, v, t_hat);
            let residual = trace.out - cfg.to_loss_space(e.value);
            loss += 0.5 * residual * residual;
            let d_raw = residual * cfg.output_activation.derivative(trace.raw, trace.out);

            match cfg.variant {
                Variant::Dot => {
                    for n in 0..l {
                        grads.users[(e.i, n)] += d_raw * v[n] * t_hat[n];
                        grads.items[(e.j, n)] += d_raw * u[n] * t_hat[n];
                        d_t_hat[(r, n)] += d_raw * u[n] * v[n];
                    }
                }
                Variant::Mlp => {
                    let depth = self.params.hidden.len();
                    let mut dx = vec![0.0; cfg.head_input()];
                    self.params.head.backward(
                        &trace.inputs[depth],
                        &[d_raw],
                        &mut grads.head,
                        Some(&mut dx),
                    );
                    for layer in (0..depth).rev() {
                        let dz: Vec<f64> = dx
                            .iter()
                            .zip(&trace.pre[layer])
                            .zip(&trace.inputs[layer + 1])
                            .map(|((g, &z), &a)| g * cfg.hidden_activation.derivative(z, a))
                            .collect();
                        let mut d_in = vec![0.0; self.params.hidden[layer].input_dim()];
                        self.params.hidden[layer].backward(
                            &trace.inputs[layer],
                            &dz,
                            &mut grads.hidden[layer],
                            Some(&mut d_in),
                        );
                        dx = d_in;
                    }
                    axpy(1.0, &dx[..l], grads.users.row_mut(e.i));
                    axpy(1.0, &dx[l..2 * l], grads.items.row_mut(e.j));
                    axpy(1.0, &dx[2 * l..], d_t_hat.row_mut(r));
                }
            }
        }

        let bn_stats = self.encoder_backward(&slots, &weights, &enc, &d_t_hat, &mut grads);
        Ok(BatchGradient {
            loss,
            grads,
            bn_stats,
        })
    }

    fn encoder_backward(
        &self,
        slots: &[usize],
        weights: &[f64],
        enc: &EncoderTrace,
        d_t_hat: &Matrix,
        grads: &mut NtfParams,
    ) -> Vec<BatchStats> {
        let cfg = &self.config;
        if cfg.encoder == TimeEncoder::LastRow {
            for (r, &k) in slots.iter().enumerate() {
                if k > 0 {
                    axpy(1.0, d_t_hat.row(r), grads.time.row_mut(k - 1));
                }
            }
            return Vec::new();
        }

        let rows = slots.len();
        let l = cfg.embedding;
        let d = cfg.hidden_state;
        // through the projection activation
        let mut d_proj = Matrix::zeros(rows, l);
        for r in 0..rows {
            for n in 0..l {
                let y = enc.t_hat[(r, n)];
                let z = match &enc.proj_bn {
                    Some(cache) => self
                        .params
                        .projection_bn
                        .as_ref()
                        .map_or(0.0, |bn| bn.gamma[n] * cache.xhat[(r, n)] + bn.beta[n]),
                    None => enc.proj_pre[(r, n)],
                };
                d_proj[(r, n)] = d_t_hat[(r, n)] * cfg.projection_activation.derivative(z, y);
            }
        }
        if let (Some(bn), Some(cache), Some(bn_grads)) = (
            &self.params.projection_bn,
            &enc.proj_bn,
            grads.projection_bn.as_mut(),
        ) {
            d_proj = bn.backward(cache, &d_proj, Some(weights), bn_grads);
        }
        let mut dh = Matrix::zeros(rows, d);
        for r in 0..rows {
            self.params.projection.backward(
                enc.h_last.row(r),
                d_proj.row(r),
                &mut grads.projection,
                Some(dh.row_mut(r)),
            );
        }

        let s = cfg.steps as isize;
        let mut dc = Matrix::zeros(rows, d);
        for t in (0..cfg.steps).rev() {
            let (norm, bn_grads) = match self.params.lstm_bn.get(t) {
                Some(bn) => (
                    CandidateNorm::Train(bn, Some(weights)),
                    grads.lstm_bn.get_mut(t),
                ),
                None => (CandidateNorm::None, None),
            };
            let step = lstm_step_backward(
                &self.params.lstm,
                &enc.steps[t],
                &dh,
                &dc,
                norm,
                &mut grads.lstm,
                bn_grads,
            );
            for (r, &k) in slots.iter().enumerate() {
                let slot = k as isize - s + t as isize;
                if slot >= 0 {
                    axpy(1.0, step.dx.row(r), grads.time.row_mut(slot as usize));
                }
            }
            dh = step.dh_prev;
            dc = step.dc_prev;
        }

        enc.steps
            .iter()
            .filter_map(|st| st.bn.as_ref().map(|b| b.stats.clone()))
            .chain(enc.proj_bn.as_ref().map(|b| b.stats.clone()))
            .collect()
    }

    /// Folds one batch's statistics into the running statistics.
    pub fn apply_bn_stats(&mut self, stats: &[BatchStats]) {
        let targets = self
            .params
            .lstm_bn
            .iter_mut()
            .chain(&mut self.params.projection_bn);
        for (bn, st) in targets.zip(stats) {
            bn.update_running(st);
        }
    }

    /// ½ Σ (x − x̂)² of a batch in training mode, without gradients.
    pub fn batch_loss(&self, batch: &[Entry]) -> Result<f64> {
        Ok(self.loss_and_grad(batch)?.loss)
    }
}

#[cfg(test)]
mod tests;
