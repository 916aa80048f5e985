//! Flat run configuration shared by every CLI subcommand.
//!
//! Values come from the built-in defaults, then an optional `key = value`
//! file (`#` starts a comment), then command-line flags.

use std::path::Path;

use crate::error::{NtfError, Result};
use crate::metrics::Task;
use crate::model::{TimeEncoder, Variant};
use crate::nn::Activation;
use crate::synth::SynthConfig;
use crate::tensor::{
    split_by_ratio, split_by_window, DatasetSplit, Dims, Granularity, ObservedTensor, SlotWindow,
};
use crate::train::TrainConfig;

/// How the observed tensor is divided into train / validation / test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Uniform random fractions over all entries.
    Ratio,
    /// Train on a slot window, test on a later one.
    Window,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ratio" => Ok(SplitMode::Ratio),
            "window" => Ok(SplitMode::Window),
            other => Err(format!(
                "unknown split `{other}` (expected ratio or window)"
            )),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Ratio => "ratio",
            SplitMode::Window => "window",
        })
    }
}

/// Every recognised key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "global random seed"),
    ("task", "rating or link"),
    ("dims", "synthetic tensor size IxJxK"),
    ("rank", "planted CP rank of synthetic data"),
    ("density", "fraction of observed synthetic cells"),
    ("drift", "random-walk step of planted time factors"),
    ("noise", "observation noise of synthetic data"),
    ("rating_min", "lower end of the rating scale"),
    ("rating_max", "upper end of the rating scale"),
    (
        "granularity",
        "time bucketing for ingest: month, week, slot or seconds:N",
    ),
    ("split", "ratio or window"),
    ("train_fraction", "training share of a ratio split"),
    (
        "validation_fraction",
        "validation share (of all entries, or of the train window)",
    ),
    (
        "train_window",
        "train slots a..b of a window split (default 0..K-1)",
    ),
    (
        "test_window",
        "test slots a..b of a window split (default K-1..K)",
    ),
    ("L", "embedding size"),
    ("s", "number of previous slots fed to the LSTM"),
    ("d_s", "LSTM hidden state dimension"),
    ("hidden_layers", "number of MLP hidden layers"),
    ("hidden_width", "width of each hidden layer (0 means L)"),
    ("activation", "hidden activation: relu, sigmoid or tanh"),
    ("projection_activation", "activation of the time projection"),
    (
        "output_activation",
        "identity, sigmoid or auto (identity for rating, sigmoid for link)",
    ),
    ("variant", "mlp or dot decoder"),
    ("encoder", "lstm or last_row time encoder"),
    (
        "batch_norm",
        "batch norm in the time encoder: true or false",
    ),
    ("bn_momentum", "running-statistics momentum"),
    ("bn_epsilon", "batch norm epsilon"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_epsilon", "Adam epsilon"),
    ("batch_size", "minibatch size"),
    ("max_epochs", "epoch limit"),
    ("patience", "early-stopping patience in epochs (0 disables)"),
    ("negative_ratio", "training negatives per positive (link)"),
    ("test_negative_ratio", "test negatives per positive (link)"),
    ("threshold", "score threshold for precision/recall/F1"),
    ("probes", "cells probed by the synthetic oracle error"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Task,
    pub dims: Dims,
    pub rank: usize,
    pub density: f64,
    pub drift: f64,
    pub noise: f64,
    pub rating_min: f64,
    pub rating_max: f64,
    pub granularity: Granularity,
    pub split: SplitMode,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub train_window: Option<SlotWindow>,
    pub test_window: Option<SlotWindow>,
    pub embedding: usize,
    pub steps: usize,
    pub hidden_state: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub projection_activation: Activation,
    pub output_activation: Option<Activation>,
    pub variant: Variant,
    pub encoder: TimeEncoder,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub negative_ratio: usize,
    pub test_negative_ratio: usize,
    pub threshold: f64,
    pub probes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            task: Task::Rating,
            dims: Dims::new(50, 40, 12),
            rank: 4,
            density: 0.05,
            drift: 0.05,
            noise: 0.05,
            rating_min: 1.0,
            rating_max: 5.0,
            granularity: Granularity::Month,
            split: SplitMode::Ratio,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            train_window: None,
            test_window: None,
            embedding: 32,
            steps: 5,
            hidden_state: 32,
            hidden_layers: 6,
            hidden_width: 0,
            activation: Activation::Relu,
            projection_activation: Activation::Tanh,
            output_activation: None,
            variant: Variant::Mlp,
            encoder: TimeEncoder::Lstm,
            batch_norm: true,
            bn_momentum: 0.99,
            bn_epsilon: 0.001,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            negative_ratio: 2,
            test_negative_ratio: 2,
            threshold: 0.5,
            probes: 10_000,
        }
    }
}

fn parse_dims(s: &str) -> Result<Dims, String> {
    let parts: Vec<&str> = s.split('x').collect();
    match parts.as_slice() {
        [i, j, k] => {
            let n = |p: &str| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("bad dimension `{p}`"))
            };
            Ok(Dims::new(n(i)?, n(j)?, n(k)?))
        }
        _ => Err(format!("expected IxJxK, got `{s}`")),
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| NtfError::InvalidValue {
            key: key.to_owned(),
            reason: format!("`{value}`: {e}"),
        })
}

fn parse_with<T>(key: &str, value: &str, f: impl FnOnce(&str) -> Result<T, String>) -> Result<T> {
    f(value.trim()).map_err(|reason| NtfError::InvalidValue {
        key: key.to_owned(),
        reason,
    })
}

fn optional_window(key: &str, value: &str) -> Result<Option<SlotWindow>> {
    match value.trim() {
        "" | "auto" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl RunConfig {
    /// Defaults of the `gradcheck` command: a small model whose gradients
    /// stay well above finite-difference round-off (d_s = L = 4, two hidden
    /// layers, a 6×5×8 tensor).
    pub fn gradcheck_default() -> Self {
        RunConfig {
            dims: Dims::new(6, 5, 8),
            embedding: 4,
            steps: 3,
            hidden_state: 4,
            hidden_layers: 2,
            ..RunConfig::default()
        }
    }

    pub fn is_key(key: &str) -> bool {
        KEYS.iter().any(|(k, _)| *k == key)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "task" => self.task = parse(key, value)?,
            "dims" => self.dims = parse_with(key, value, parse_dims)?,
            "rank" => self.rank = parse(key, value)?,
            "density" => self.density = parse(key, value)?,
            "drift" => self.drift = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "rating_min" => self.rating_min = parse(key, value)?,
            "rating_max" => self.rating_max = parse(key, value)?,
            "granularity" => self.granularity = parse(key, value)?,
            "split" => self.split = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "train_window" => self.train_window = optional_window(key, value)?,
            "test_window" => self.test_window = optional_window(key, value)?,
            "L" => self.embedding = parse(key, value)?,
            "s" => self.steps = parse(key, value)?,
            "d_s" => self.hidden_state = parse(key, value)?,
            "hidden_layers" => self.hidden_layers = parse(key, value)?,
            "hidden_width" => self.hidden_width = parse(key, value)?,
            "activation" => self.activation = parse(key, value)?,
            "projection_activation" => self.projection_activation = parse(key, value)?,
            "output_activation" => {
                self.output_activation = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "variant" => self.variant = parse(key, value)?,
            "encoder" => self.encoder = parse(key, value)?,
            "batch_norm" => self.batch_norm = parse(key, value)?,
            "bn_momentum" => self.bn_momentum = parse(key, value)?,
            "bn_epsilon" => self.bn_epsilon = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "negative_ratio" => self.negative_ratio = parse(key, value)?,
            "test_negative_ratio" => self.test_negative_ratio = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "probes" => self.probes = parse(key, value)?,
            other => return Err(NtfError::UnknownParameter(other.to_owned())),
        }
        Ok(())
    }

    /// Textual value of a key, in a form [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let window =
            |w: &Option<SlotWindow>| w.map_or_else(|| "auto".to_owned(), |w| w.to_string());
        Ok(match key {
            "seed" => self.seed.to_string(),
            "task" => self.task.to_string(),
            "dims" => self.dims.to_string(),
            "rank" => self.rank.to_string(),
            "density" => self.density.to_string(),
            "drift" => self.drift.to_string(),
            "noise" => self.noise.to_string(),
            "rating_min" => self.rating_min.to_string(),
            "rating_max" => self.rating_max.to_string(),
            "granularity" => self.granularity.to_string(),
            "split" => self.split.to_string(),
            "train_fraction" => self.train_fraction.to_string(),
            "validation_fraction" => self.validation_fraction.to_string(),
            "train_window" => window(&self.train_window),
            "test_window" => window(&self.test_window),
            "L" => self.embedding.to_string(),
            "s" => self.steps.to_string(),
            "d_s" => self.hidden_state.to_string(),
            "hidden_layers" => self.hidden_layers.to_string(),
            "hidden_width" => self.hidden_width.to_string(),
            "activation" => self.activation.to_string(),
            "projection_activation" => self.projection_activation.to_string(),
            "output_activation" => self
                .output_activation
                .map_or_else(|| "auto".to_owned(), |a| a.to_string()),
            "variant" => self.variant.to_string(),
            "encoder" => self.encoder.to_string(),
            "batch_norm" => self.batch_norm.to_string(),
            "bn_momentum" => self.bn_momentum.to_string(),
            "bn_epsilon" => self.bn_epsilon.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_epsilon" => self.adam_epsilon.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "negative_ratio" => self.negative_ratio.to_string(),
            "test_negative_ratio" => self.test_negative_ratio.to_string(),
            "threshold" => self.threshold.to_string(),
            "probes" => self.probes.to_string(),
            other => return Err(NtfError::UnknownParameter(other.to_owned())),
        })
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| NtfError::InvalidValue {
                key: format!("line {}", n + 1),
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a config file. An unreadable file is a usage error.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| NtfError::InvalidValue {
            key: "config".into(),
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        self.apply_text(&text)
    }

    /// Every key as `key = value`, one per line, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            dims: self.dims,
            rank: self.rank,
            density: self.density,
            drift: self.drift,
            noise: self.noise,
            task: self.task,
            rating_range: (self.rating_min, self.rating_max),
            seed: self.seed,
        }
    }

    pub fn train_config(&self, dims: Dims) -> TrainConfig {
        let mut c = TrainConfig::new(dims, self.task);
        let m = &mut c.model;
        m.embedding = self.embedding;
        m.steps = self.steps;
        m.hidden_state = self.hidden_state;
        let width = if self.hidden_width == 0 {
            self.embedding
        } else {
            self.hidden_width
        };
        m.hidden_widths = vec![width; self.hidden_layers];
        m.hidden_activation = self.activation;
        m.projection_activation = self.projection_activation;
        if let Some(a) = self.output_activation {
            m.output_activation = a;
        }
        m.variant = self.variant;
        m.encoder = self.encoder;
        m.batch_norm = self.batch_norm;
        m.bn_momentum = self.bn_momentum;
        m.bn_epsilon = self.bn_epsilon;
        m.value_range = match self.task {
            Task::Rating => (self.rating_min, self.rating_max),
            Task::Link => (0.0, 1.0),
        };
        c.adam.learning_rate = self.lr;
        c.adam.beta1 = self.beta1;
        c.adam.beta2 = self.beta2;
        c.adam.epsilon = self.adam_epsilon;
        c.batch_size = self.batch_size;
        c.max_epochs = self.max_epochs;
        c.patience = self.patience;
        c.seed = self.seed;
        c.negative_ratio = self.negative_ratio;
        c
    }

    /// Splits `tensor` as configured; window defaults forecast the last slot.
    pub fn split(&self, tensor: &ObservedTensor) -> Result<DatasetSplit> {
        match self.split {
            SplitMode::Ratio => split_by_ratio(
                tensor,
                self.train_fraction,
                self.validation_fraction,
                self.seed,
            ),
            SplitMode::Window => {
                let k = tensor.dims().slots;
                let train = self
                    .train_window
                    .unwrap_or(SlotWindow::new(0, k.saturating_sub(1)));
                let test = self
                    .test_window
                    .unwrap_or(SlotWindow::new(k.saturating_sub(1), k));
                split_by_window(tensor, train, test, self.validation_fraction, self.seed)
            }
        }
    }
}
