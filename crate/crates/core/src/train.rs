//! Minibatch training: squared loss, Adam, negative sampling, early stopping
//! and resumable checkpoints.
//!
//! Every epoch draws from its own random streams (indexed by the epoch
//! number), so a run resumed from a checkpoint continues exactly as the
//! uninterrupted run would have.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::ops::Range;
use std::time::Instant;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NtfError, Result};
use crate::metrics::{auc, rating_metrics, Task};
use crate::model::{Checkpoint, ModelConfig, NtfModel};
use crate::nn::Activation;
use crate::optim::{adam_step, AdamHyper, AdamState};
use crate::rng;
use crate::tensor::{DatasetSplit, Dims, Entry};

/// ½ Σ (x − x̂)², summed over the batch.
pub fn squared_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(NtfError::LengthMismatch(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(NtfError::EmptyBatch);
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| 0.5 * (t - p) * (t - p))
        .sum())
}

/// One shuffled pass over `entries` cut into batches of `batch_size` (the
/// last one may be short). Each batch is in canonical (i, j, k) order.
pub fn sample_minibatches<R: Rng>(
    entries: &[Entry],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<Entry>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut shuffled = entries.to_vec();
    shuffled.shuffle(rng);
    shuffled
        .chunks(batch_size)
        .map(|chunk| {
            let mut batch = chunk.to_vec();
            batch.sort_by_key(Entry::key);
            batch
        })
        .collect()
}

/// `count` distinct cells with slot in `slots` whose (user, item) pair is
/// not in `observed`, uniformly at random.
pub fn sample_negatives<R: Rng>(
    observed: &HashSet<(usize, usize)>,
    count: usize,
    dims: Dims,
    slots: Range<usize>,
    rng: &mut R,
) -> Result<Vec<(usize, usize, usize)>> {
    let slots = slots.start..slots.end.min(dims.slots);
    let observed_in_dims = observed
        .iter()
        .filter(|&&(i, j)| i < dims.users && j < dims.items)
        .count();
    let free_pairs = (dims.users * dims.items).saturating_sub(observed_in_dims);
    let available = free_pairs * slots.len();
    if count > available {
        return Err(NtfError::InsufficientNegatives {
            requested: count,
            available,
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }

    if count * 2 <= available {
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let cell = (
                rng.random_range(0..dims.users),
                rng.random_range(0..dims.items),
                rng.random_range(slots.clone()),
            );
            if !observed.contains(&(cell.0, cell.1)) && chosen.insert(cell) {
                out.push(cell);
            }
        }
        return Ok(out);
    }

    // Dense regime: enumerate every candidate, then pick without replacement.
    let candidates = (0..dims.users)
        .flat_map(|i| (0..dims.items).map(move |j| (i, j)))
        .filter(|p| !observed.contains(p))
        .flat_map(|(i, j)| slots.clone().map(move |k| (i, j, k)));
    let mut out = candidates.choose_multiple(rng, count);
    out.shuffle(rng);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamHyper,
    pub task: Task,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without validation improvement; 0 disables.
    pub patience: usize,
    pub seed: u64,
    /// Negatives per positive (link task only).
    pub negative_ratio: usize,
}

impl TrainConfig {
    /// Defaults for `task`: identity head for ratings, sigmoid head for links.
    pub fn new(dims: Dims, task: Task) -> Self {
        let mut model = ModelConfig::new(dims);
        if task == Task::Link {
            model.output_activation = Activation::Sigmoid;
        }
        TrainConfig {
            model,
            adam: AdamHyper::default(),
            task,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            negative_ratio: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NtfError::InvalidConfig(
                "batch size must be at least 1".into(),
            ));
        }
        if self.task == Task::Link && self.negative_ratio == 0 {
            return Err(NtfError::InvalidConfig(
                "negative ratio must be at least 1 for link prediction".into(),
            ));
        }
        self.adam.validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean ½ (x − x̂)² per training example, in training mode.
    pub loss: f64,
    /// Validation RMSE (rating) or AUC (link); NaN without a validation set.
    pub val_metric: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

/// Columns of the history CSV. Wall-clock times go to a separate file so
/// the history itself is reproducible byte for byte.
pub const HISTORY_HEADER: [&str; 3] = ["epoch", "loss", "val_metric"];

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn val_metrics(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_metric).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(HISTORY_HEADER)?;
        for e in &self.epochs {
            out.serialize((e.epoch, e.loss, e.val_metric))?;
        }
        out.flush()?;
        Ok(())
    }

    /// `epoch,seconds` rows.
    pub fn write_timing_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "seconds"])?;
        for e in &self.epochs {
            out.serialize((e.epoch, e.seconds))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a history written by [`write_csv`](Self::write_csv); `seconds` is NaN.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header != HISTORY_HEADER {
            return Err(NtfError::SchemaMismatch(format!(
                "history columns {header:?}, expected {HISTORY_HEADER:?}"
            )));
        }
        let mut epochs = Vec::new();
        for row in reader.deserialize() {
            let (epoch, loss, val_metric): (usize, f64, f64) = row?;
            epochs.push(EpochRecord {
                epoch,
                loss,
                val_metric,
                seconds: f64::NAN,
            });
        }
        Ok(TrainHistory {
            epochs,
            best_epoch: None,
        })
    }
}

enum Validation {
    None,
    Rating {
        triples: Vec<(usize, usize, usize)>,
        targets: Vec<f64>,
    },
    Link {
        triples: Vec<(usize, usize, usize)>,
        labels: Vec<bool>,
    },
}

fn slot_range(entries: &[Entry]) -> Range<usize> {
    let lo = entries.iter().map(|e| e.k).min().unwrap_or(0);
    let hi = entries.iter().map(|e| e.k).max().map_or(0, |k| k + 1);
    lo..hi
}

/// Stream index of the fixed validation negatives (epochs use 0, 1, …).
const VALIDATION_NEGATIVES: u64 = u64::MAX;

/// Resumable training loop over one split.
pub struct Trainer<'a> {
    split: &'a DatasetSplit,
    config: TrainConfig,
    model: NtfModel,
    optimizer: AdamState,
    epochs_done: usize,
    history: TrainHistory,
    best: Option<(f64, NtfModel)>,
    stale: usize,
    known_pairs: HashSet<(usize, usize)>,
    train_slots: Range<usize>,
    validation: Validation,
}

impl<'a> Trainer<'a> {
    /// Fresh model initialized from the seed's init stream.
    pub fn new(split: &'a DatasetSplit, mut config: TrainConfig) -> Result<Self> {
        config.model.dims = split.dims();
        config.validate()?;
        let target_mean = match config.task {
            Task::Rating => {
                let values = split.train.values();
                values.iter().sum::<f64>() / values.len().max(1) as f64
            }
            Task::Link => 1.0 / (1.0 + config.negative_ratio as f64),
        };
        let model = NtfModel::init(
            config.model.clone(),
            &mut rng::stream(config.seed, rng::INIT),
            Some(target_mean),
        )?;
        let optimizer = AdamState::for_tensors(&model.params.tensors());
        Trainer::assemble(split, config, model, optimizer, 0)
    }

    /// Continues from a checkpoint written by [`checkpoint`](Self::checkpoint).
    pub fn resume(
        split: &'a DatasetSplit,
        mut config: TrainConfig,
        ckpt: Checkpoint,
    ) -> Result<Self> {
        config.model.dims = split.dims();
        config.validate()?;
        if ckpt.model.config != config.model {
            return Err(NtfError::InvalidConfig(
                "checkpoint architecture differs from the configuration".into(),
            ));
        }
        let optimizer = ckpt
            .optimizer
            .unwrap_or_else(|| AdamState::for_tensors(&ckpt.model.params.tensors()));
        Trainer::assemble(split, config, ckpt.model, optimizer, ckpt.epochs_done)
    }

    fn assemble(
        split: &'a DatasetSplit,
        config: TrainConfig,
        model: NtfModel,
        optimizer: AdamState,
        epochs_done: usize,
    ) -> Result<Self> {
        if split.train.is_empty() {
            return Err(NtfError::EmptyTrain);
        }
        let mut known_pairs = split.train.pair_set();
        known_pairs.extend(split.validation.pair_set());
        let validation = if split.validation.is_empty() {
            Validation::None
        } else {
            let positives = split.validation.entries();
            match config.task {
                Task::Rating => Validation::Rating {
                    triples: positives.iter().map(Entry::key).collect(),
                    targets: positives.iter().map(|e| e.value).collect(),
                },
                Task::Link => {
                    let mut rng =
                        rng::indexed_stream(config.seed, rng::NEGATIVES, VALIDATION_NEGATIVES);
                    let count = config.negative_ratio * positives.len();
                    let negatives = sample_negatives(
                        &known_pairs,
                        count,
                        split.dims(),
                        slot_range(positives),
                        &mut rng,
                    )?;
                    let mut triples: Vec<_> = positives.iter().map(Entry::key).collect();
                    let mut labels = vec![true; triples.len()];
                    labels.resize(triples.len() + negatives.len(), false);
                    triples.extend(negatives);
                    Validation::Link { triples, labels }
                }
            }
        };
        Ok(Trainer {
            split,
            train_slots: slot_range(split.train.entries()),
            config,
            model,
            optimizer,
            epochs_done,
            history: TrainHistory::default(),
            best: None,
            stale: 0,
            known_pairs,
            validation,
        })
    }

    pub fn model(&self) -> &NtfModel {
        &self.model
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Current (not best) parameters with optimizer state, for resuming.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            epochs_done: self.epochs_done,
        }
    }

    /// Training examples of one epoch: the train entries plus, for links, fresh negatives.
    fn epoch_examples(&self, epoch: u64) -> Result<Vec<Entry>> {
        let mut examples = self.split.train.entries().to_vec();
        if self.config.task == Task::Link {
            let mut rng = rng::indexed_stream(self.config.seed, rng::NEGATIVES, epoch);
            let count = self.config.negative_ratio * examples.len();
            let negatives = sample_negatives(
                &self.known_pairs,
                count,
                self.split.dims(),
                self.train_slots.clone(),
                &mut rng,
            )?;
            examples.extend(
                negatives
                    .into_iter()
                    .map(|(i, j, k)| Entry::new(i, j, k, 0.0)),
            );
        }
        Ok(examples)
    }

    fn update(&mut self, batch: &[Entry]) -> Result<f64> {
        let step = self.model.loss_and_grad(batch)?;
        if !step.loss.is_finite() {
            return Err(NtfError::NonFiniteLoss);
        }
        let names = self.model.params.tensor_names();
        let grads = step.grads.tensors();
        let mut params = self.model.params.tensors_mut();
        adam_step(
            &mut params,
            &grads,
            &mut self.optimizer,
            &self.config.adam,
            Some(&names),
        )?;
        self.model.apply_bn_stats(&step.bn_stats);
        Ok(step.loss)
    }

    fn validation_metric(&self) -> Result<f64> {
        match &self.validation {
            Validation::None => Ok(f64::NAN),
            Validation::Rating { triples, targets } => {
                Ok(rating_metrics(&self.model.predict_batch(triples)?, targets)?.rmse)
            }
            Validation::Link { triples, labels } => {
                auc(&self.model.predict_batch(triples)?, labels)
            }
        }
    }

    fn improves(&self, metric: f64) -> bool {
        match &self.best {
            None => true,
            Some((best, _)) => match self.config.task {
                _ if metric.is_nan() => true,
                Task::Rating => metric < *best,
                Task::Link => metric > *best,
            },
        }
    }

    /// Runs one epoch and records it.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epochs_done;
        let started = Instant::now();
        let diverged = |e: NtfError| match e {
            NtfError::NonFiniteLoss | NtfError::NonFiniteGradient(_) => NtfError::Diverged {
                epoch,
                source: Box::new(e),
            },
            other => other,
        };
        let examples = self.epoch_examples(epoch as u64)?;
        let mut rng = rng::indexed_stream(self.config.seed, rng::BATCHING, epoch as u64);
        let mut total = 0.0;
        for batch in sample_minibatches(&examples, self.config.batch_size, &mut rng) {
            total += self.update(&batch).map_err(diverged)?;
        }
        let val_metric = self.validation_metric()?;
        self.epochs_done += 1;
        let record = EpochRecord {
            epoch,
            loss: total / examples.len() as f64,
            val_metric,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch} loss {:.6} val {:.6}",
            record.loss,
            record.val_metric
        );
        if self.improves(val_metric) {
            self.best = Some((val_metric, self.model.clone()));
            self.history.best_epoch = Some(epoch);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.history.epochs.push(record);
        Ok(record)
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_done >= self.config.max_epochs
            || (self.config.patience > 0 && self.stale >= self.config.patience)
    }

    /// Trains until early stopping or the epoch limit.
    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.should_stop() {
            self.run_epoch()?;
        }
        let last = self.checkpoint();
        let model = self.best.map_or_else(|| self.model.clone(), |(_, m)| m);
        Ok(TrainOutcome {
            model,
            history: self.history,
            last,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: NtfModel,
    pub history: TrainHistory,
    /// State after the final epoch, for resuming.
    pub last: Checkpoint,
}

/// Trains a fresh model on `split`; returns the best-validation model.
pub fn train(split: &DatasetSplit, config: TrainConfig) -> Result<(NtfModel, TrainHistory)> {
    let outcome = Trainer::new(split, config)?.run()?;
    Ok((outcome.model, outcome.history))
}
