use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{NtfError, Result};
use crate::nn::Activation;
use crate::tensor::Dims;

/// Decoder applied to `[U_i; V_j; T̂_k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Multi-layer perceptron over the concatenated embeddings.
    Mlp,
    /// Three-way inner product (CP decoder).
    Dot,
}

/// How the time embedding of slot `k` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEncoder {
    /// LSTM over the previous `s` slot embeddings, then a projection layer.
    Lstm,
    /// Ablation: the raw embedding row of slot `k − 1` (zero for `k = 0`).
    LastRow,
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mlp" => Ok(Variant::Mlp),
            "dot" => Ok(Variant::Dot),
            other => Err(format!("unknown variant `{other}` (expected mlp or dot)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Mlp => "mlp",
            Variant::Dot => "dot",
        })
    }
}

impl FromStr for TimeEncoder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lstm" => Ok(TimeEncoder::Lstm),
            "last_row" => Ok(TimeEncoder::LastRow),
            other => Err(format!(
                "unknown encoder `{other}` (expected lstm or last_row)"
            )),
        }
    }
}

impl std::fmt::Display for TimeEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TimeEncoder::Lstm => "lstm",
            TimeEncoder::LastRow => "last_row",
        })
    }
}

/// Architecture of an [`NtfModel`](super::NtfModel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: Dims,
    /// Embedding size L.
    pub embedding: usize,
    /// Number of previous slots fed to the LSTM.
    pub steps: usize,
    /// LSTM hidden state dimension.
    pub hidden_state: usize,
    /// Widths of the MLP hidden layers; empty means a single affine head.
    pub hidden_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub projection_activation: Activation,
    /// `Identity` or `Sigmoid`; a sigmoid head is rescaled to `value_range`.
    pub output_activation: Activation,
    pub variant: Variant,
    pub encoder: TimeEncoder,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub value_range: (f64, f64),
}

impl ModelConfig {
    /// Defaults: L = 32, s = 5, d_s = 32, six hidden layers of width L.
    pub fn new(dims: Dims) -> Self {
        ModelConfig {
            dims,
            embedding: 32,
            steps: 5,
            hidden_state: 32,
            hidden_widths: vec![32; 6],
            hidden_activation: Activation::Relu,
            projection_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            variant: Variant::Mlp,
            encoder: TimeEncoder::Lstm,
            batch_norm: true,
            bn_momentum: 0.99,
            bn_epsilon: 0.001,
            value_range: (0.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NtfError::InvalidConfig(m));
        if self.embedding == 0 || self.hidden_state == 0 {
            return bad("embedding size and hidden state dimension must be positive".into());
        }
        if self.steps == 0 {
            return bad("number of time steps must be at least 1".into());
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if !matches!(
            self.output_activation,
            Activation::Identity | Activation::Sigmoid
        ) {
            return bad(format!(
                "output activation must be identity or sigmoid, got {}",
                self.output_activation
            ));
        }
        if self.output_activation == Activation::Sigmoid
            && !(self.value_range.0 < self.value_range.1)
        {
            return bad(format!("value range {:?} is empty", self.value_range));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("batch norm needs epsilon > 0 and momentum in [0, 1)".into());
        }
        Ok(())
    }

    /// Width of the last hidden layer (the concatenation width when there are none).
    pub fn head_input(&self) -> usize {
        self.hidden_widths
            .last()
            .copied()
            .unwrap_or(3 * self.embedding)
    }

    /// Maps a value in the target scale to the space the loss is computed in.
    pub fn to_loss_space(&self, value: f64) -> f64 {
        match self.output_activation {
            Activation::Sigmoid => {
                let (lo, hi) = self.value_range;
                (value - lo) / (hi - lo)
            }
            _ => value,
        }
    }

    /// Inverse of [`to_loss_space`](Self::to_loss_space).
    pub fn from_loss_space(&self, out: f64) -> f64 {
        match self.output_activation {
            Activation::Sigmoid => {
                let (lo, hi) = self.value_range;
                lo + (hi - lo) * out
            }
            _ => out,
        }
    }
}
