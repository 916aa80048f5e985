//! Rating and link-prediction metrics, and link test-set assembly.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{NtfError, Result};
use crate::model::NtfModel;
use crate::rng;
use crate::tensor::{DatasetSplit, Dims, Entry};
use crate::train::sample_negatives;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Rating,
    Link,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rating" => Ok(Task::Rating),
            "link" => Ok(Task::Link),
            other => Err(format!("unknown task `{other}` (expected rating or link)")),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Rating => "rating",
            Task::Link => "link",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
    pub threshold: f64,
}

/// Serializes as one flat JSON object with a `task` field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum MetricsReport {
    Rating(RatingMetrics),
    Link(LinkMetrics),
}

impl MetricsReport {
    pub fn task(&self) -> Task {
        match self {
            MetricsReport::Rating(_) => Task::Rating,
            MetricsReport::Link(_) => Task::Link,
        }
    }

    /// `(name, value)` pairs in a fixed order, for CSV output.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        match self {
            MetricsReport::Rating(m) => vec![("rmse", m.rmse), ("mae", m.mae), ("n", m.n as f64)],
            MetricsReport::Link(m) => vec![
                ("precision", m.precision),
                ("recall", m.recall),
                ("f1", m.f1),
                ("auc", m.auc),
                ("positives", m.positives as f64),
                ("negatives", m.negatives as f64),
                ("threshold", m.threshold),
            ],
        }
    }
}

/// RMSE and MAE over prediction/target pairs.
pub fn rating_metrics(predictions: &[f64], targets: &[f64]) -> Result<RatingMetrics> {
    if predictions.len() != targets.len() {
        return Err(NtfError::LengthMismatch(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(NtfError::EmptyInput);
    }
    let n = predictions.len() as f64;
    let (mut sq, mut abs) = (0.0, 0.0);
    for (p, t) in predictions.iter().zip(targets) {
        let r = p - t;
        sq += r * r;
        abs += r.abs();
    }
    Ok(RatingMetrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        n: predictions.len(),
    })
}

/// Precision, recall and F1 with `score >= threshold` predicted positive.
pub fn classification_metrics(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<(f64, f64, f64)> {
    if scores.len() != labels.len() {
        return Err(NtfError::LengthMismatch(scores.len(), labels.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fn_ == 0 {
        return Err(NtfError::NoPositives);
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = tp as f64 / (tp + fn_) as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Exact Mann-Whitney counts behind an AUC value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AucCounts {
    /// Twice the number of positive/negative pairs won by the positive,
    /// with ties counting one (half a win).
    pub twice_wins: u64,
    pub positives: u64,
    pub negatives: u64,
}

impl AucCounts {
    pub fn auc(&self) -> f64 {
        self.twice_wins as f64 / (2 * self.positives * self.negatives) as f64
    }
}

/// Rank-statistic pair counts: sort once, give tied scores their average rank.
pub fn auc_counts(scores: &[f64], labels: &[bool]) -> Result<AucCounts> {
    if scores.len() != labels.len() {
        return Err(NtfError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&y| y).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(NtfError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of the positives; a tie group occupying 1-based
    // ranks a+1..=b has average rank (a+1+b)/2.
    let mut twice_rank_sum = 0u64;
    let mut a = 0;
    while a < order.len() {
        let mut b = a + 1;
        while b < order.len() && scores[order[b]].total_cmp(&scores[order[a]]).is_eq() {
            b += 1;
        }
        let pos_in_group = order[a..b].iter().filter(|&&n| labels[n]).count() as u64;
        twice_rank_sum += pos_in_group * (a + 1 + b) as u64;
        a = b;
    }
    Ok(AucCounts {
        twice_wins: twice_rank_sum - positives * (positives + 1),
        positives,
        negatives,
    })
}

pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(auc_counts(scores, labels)?.auc())
}

/// All link metrics for one scored test set.
pub fn link_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<LinkMetrics> {
    let counts = auc_counts(scores, labels)?;
    let (precision, recall, f1) = classification_metrics(scores, labels, threshold)?;
    Ok(LinkMetrics {
        precision,
        recall,
        f1,
        auc: counts.auc(),
        positives: counts.positives as usize,
        negatives: counts.negatives as usize,
        threshold,
    })
}

/// Labeled link-prediction test cells: positives first, then negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTestSet {
    pub triples: Vec<(usize, usize, usize)>,
    pub labels: Vec<bool>,
}

/// Test positives plus `ratio` times as many unobserved cells drawn from
/// `slots`, avoiding every pair in `observed`.
pub fn build_link_testset(
    observed: &HashSet<(usize, usize)>,
    positives: &[Entry],
    ratio: usize,
    dims: Dims,
    slots: Range<usize>,
    seed: u64,
) -> Result<LinkTestSet> {
    let mut rng = rng::stream(seed, rng::EVAL);
    let negatives = sample_negatives(observed, ratio * positives.len(), dims, slots, &mut rng)?;
    let mut triples: Vec<_> = positives.iter().map(Entry::key).collect();
    let mut labels = vec![true; triples.len()];
    labels.resize(triples.len() + negatives.len(), false);
    triples.extend(negatives);
    Ok(LinkTestSet { triples, labels })
}

/// Test-set metrics of `model` on `split`. Link negatives are drawn from the
/// slots spanned by the test positives and avoid every observed pair.
pub fn evaluate(
    model: &NtfModel,
    split: &DatasetSplit,
    task: Task,
    negative_ratio: usize,
    threshold: f64,
    seed: u64,
) -> Result<MetricsReport> {
    let test = split.test.entries();
    match task {
        Task::Rating => {
            let predictions =
                model.predict_batch(&test.iter().map(Entry::key).collect::<Vec<_>>())?;
            let targets: Vec<f64> = test.iter().map(|e| e.value).collect();
            Ok(MetricsReport::Rating(rating_metrics(
                &predictions,
                &targets,
            )?))
        }
        Task::Link => {
            let lo = test.iter().map(|e| e.k).min().ok_or(NtfError::EmptyTest)?;
            let hi = test.iter().map(|e| e.k).max().ok_or(NtfError::EmptyTest)? + 1;
            let set = build_link_testset(
                &split.observed_pairs(),
                test,
                negative_ratio,
                split.dims(),
                lo..hi,
                seed,
            )?;
            let scores = model.predict_batch(&set.triples)?;
            Ok(MetricsReport::Link(link_metrics(
                &scores,
                &set.labels,
                threshold,
            )?))
        }
    }
}
