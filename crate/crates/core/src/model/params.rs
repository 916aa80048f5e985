//! Learnable state of the model and its flat-tensor views.

use rand::Rng;

use super::config::{ModelConfig, TimeEncoder};
use crate::linalg::Matrix;
use crate::nn::{BatchNormParams, DenseParams, LstmParams, ParamBlock, CANDIDATE, GATES};

const GATE_NAMES: [&str; GATES] = ["i", "o", "f", "c"];

/// Every parameter tensor of the model. Gradients use the same struct.
#[derive(Debug, Clone, PartialEq)]
pub struct NtfParams {
    /// U: (I × L)
    pub users: Matrix,
    /// V: (J × L)
    pub items: Matrix,
    /// T: (K × L)
    pub time: Matrix,
    pub lstm: LstmParams,
    /// One batch norm per LSTM step on the candidate pre-activation.
    pub lstm_bn: Vec<BatchNormParams>,
    /// W_T: (L × d_s)
    pub projection: DenseParams,
    pub projection_bn: Option<BatchNormParams>,
    pub hidden: Vec<DenseParams>,
    pub head: DenseParams,
}

impl NtfParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let l = config.embedding;
        let dims = config.dims;
        let bn = |d: usize| BatchNormParams::new(d, config.bn_epsilon, config.bn_momentum);
        let mut widths_in = 3 * l;
        let hidden = config
            .hidden_widths
            .iter()
            .map(|&w| {
                let layer = DenseParams::zeros(widths_in, w);
                widths_in = w;
                layer
            })
            .collect();
        let uses_bn = config.batch_norm && config.encoder == TimeEncoder::Lstm;
        NtfParams {
            users: Matrix::zeros(dims.users, l),
            items: Matrix::zeros(dims.items, l),
            time: Matrix::zeros(dims.slots, l),
            lstm: LstmParams::zeros(l, config.hidden_state),
            lstm_bn: if uses_bn {
                (0..config.steps).map(|_| bn(config.hidden_state)).collect()
            } else {
                Vec::new()
            },
            projection: DenseParams::zeros(config.hidden_state, l),
            projection_bn: uses_bn.then(|| bn(l)),
            hidden,
            head: DenseParams::zeros(config.head_input(), 1),
        }
    }

    /// Glorot weights, zero biases, forget-gate bias 1, embeddings uniform in ±0.05.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut p = NtfParams::zeros(config);
        for m in [&mut p.users, &mut p.items, &mut p.time] {
            for x in m.as_mut_slice() {
                *x = rng.random_range(-0.05..=0.05);
            }
        }
        p.lstm = LstmParams::init(config.embedding, config.hidden_state, 1.0, rng);
        p.projection = DenseParams::init(config.hidden_state, config.embedding, rng);
        let mut input = 3 * config.embedding;
        for (layer, &w) in p.hidden.iter_mut().zip(&config.hidden_widths) {
            *layer = DenseParams::init(input, w, rng);
            input = w;
        }
        p.head = DenseParams::init(config.head_input(), 1, rng);
        p
    }

    /// Same shapes, all learnable values zero (a gradient buffer).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// A bias feeding straight into a batch norm is cancelled by the mean
    /// subtraction, so it stays at zero and is not a learnable tensor.
    fn has_candidate_bias(&self) -> bool {
        self.lstm_bn.is_empty()
    }

    fn has_projection_bias(&self) -> bool {
        self.projection_bn.is_none()
    }

    /// Learnable tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.users.as_slice(),
            self.items.as_slice(),
            self.time.as_slice(),
        ];
        for g in 0..GATES {
            out.push(self.lstm.w[g].as_slice());
            out.push(self.lstm.v[g].as_slice());
            if g != CANDIDATE || self.has_candidate_bias() {
                out.push(&self.lstm.b[g]);
            }
        }
        for bn in &self.lstm_bn {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out.push(self.projection.w.as_slice());
        if self.has_projection_bias() {
            out.push(&self.projection.b);
        }
        if let Some(bn) = &self.projection_bn {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        for layer in &self.hidden {
            out.push(layer.w.as_slice());
            out.push(&layer.b);
        }
        out.push(self.head.w.as_slice());
        out.push(&self.head.b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let candidate_bias = self.has_candidate_bias();
        let projection_bias = self.has_projection_bias();
        let mut out: Vec<&mut [f64]> = vec![
            self.users.as_mut_slice(),
            self.items.as_mut_slice(),
            self.time.as_mut_slice(),
        ];
        for (g, ((w, v), b)) in self
            .lstm
            .w
            .iter_mut()
            .zip(self.lstm.v.iter_mut())
            .zip(self.lstm.b.iter_mut())
            .enumerate()
        {
            out.push(w.as_mut_slice());
            out.push(v.as_mut_slice());
            if g != CANDIDATE || candidate_bias {
                out.push(b);
            }
        }
        for bn in &mut self.lstm_bn {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(self.projection.w.as_mut_slice());
        if projection_bias {
            out.push(&mut self.projection.b);
        }
        if let Some(bn) = &mut self.projection_bn {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        for layer in &mut self.hidden {
            out.push(layer.w.as_mut_slice());
            out.push(&mut layer.b);
        }
        out.push(self.head.w.as_mut_slice());
        out.push(&mut self.head.b);
        out
    }

    /// Names matching [`tensors`](Self::tensors).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = vec!["U".into(), "V".into(), "T".into()];
        for (n, g) in GATE_NAMES.iter().enumerate() {
            out.push(format!("lstm.W_{g}"));
            out.push(format!("lstm.V_{g}"));
            if n != CANDIDATE || self.has_candidate_bias() {
                out.push(format!("lstm.b_{g}"));
            }
        }
        for t in 0..self.lstm_bn.len() {
            out.push(format!("lstm.bn{t}.gamma"));
            out.push(format!("lstm.bn{t}.beta"));
        }
        out.push("projection.W".into());
        if self.has_projection_bias() {
            out.push("projection.b".into());
        }
        if self.projection_bn.is_some() {
            out.push("projection.bn.gamma".into());
            out.push("projection.bn.beta".into());
        }
        for l in 0..self.hidden.len() {
            out.push(format!("mlp{l}.W"));
            out.push(format!("mlp{l}.b"));
        }
        out.push("head.W".into());
        out.push("head.b".into());
        out
    }

    /// Batch-norm running statistics (not learned) in checkpoint order.
    pub fn running_stats(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for bn in self.lstm_bn.iter().chain(&self.projection_bn) {
            out.push(&bn.running_mean);
            out.push(&bn.running_var);
        }
        out
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for bn in self.lstm_bn.iter_mut().chain(&mut self.projection_bn) {
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
        out
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        self.tensor_names()
            .into_iter()
            .zip(self.tensors())
            .map(|(name, values)| ParamBlock {
                name,
                values: values.to_vec(),
            })
            .collect()
    }

    /// Overwrites learnable values from blocks produced by [`blocks`](Self::blocks).
    pub fn load_blocks(&mut self, blocks: &[ParamBlock]) {
        for (dst, src) in self.tensors_mut().into_iter().zip(blocks) {
            dst.copy_from_slice(&src.values);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}
