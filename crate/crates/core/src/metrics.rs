//! Diagnostics: accuracy, pseudo-label quality, calibration.
//!
//! This is the only module allowed to read a pool's hidden ground truth, and
//! it only ever reads it — metric outputs are sinks, nothing here feeds a
//! training path.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{forward_logits, softmax, ModelParams};
use crate::ssfl::PseudoItem;

/// Pseudo-label accuracy over a client's selection, with an explicit flag
/// for the empty-selection convention (reported as 0.0).
pub fn pseudo_label_accuracy(selection: &[PseudoItem], hidden_truth: &[usize]) -> (f64, bool) {
    if selection.is_empty() {
        return (0.0, true);
    }
    let correct = selection
        .iter()
        .filter(|p| p.label == hidden_truth[p.index])
        .count();
    (correct as f64 / selection.len() as f64, false)
}

/// Fraction of the sampled clients' pools that received pseudo-labels.
pub fn utilization_ratio(selected: &[usize], pool_sizes: &[usize]) -> f64 {
    let total: usize = pool_sizes.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let sel: usize = selected.iter().sum();
    sel as f64 / total as f64
}

/// `K x K` counts, row = true class, column = assigned pseudo-label.
pub fn confusion_matrix(
    selection: &[PseudoItem],
    hidden_truth: &[usize],
    classes: usize,
) -> Vec<u64> {
    let mut m = vec![0u64; classes * classes];
    for p in selection {
        m[hidden_truth[p.index] * classes + p.label] += 1;
    }
    m
}

/// The `n` largest off-diagonal confusion entries as
/// `((true, pseudo), count)`, ties broken by index order.
pub fn top_misclassified_pairs(
    confusion: &[u64],
    classes: usize,
    n: usize,
) -> Vec<((usize, usize), u64)> {
    let mut pairs: Vec<((usize, usize), u64)> = (0..classes)
        .flat_map(|t| (0..classes).map(move |p| ((t, p), confusion[t * classes + p])))
        .filter(|((t, p), c)| t != p && *c > 0)
        .collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.truncate(n);
    pairs
}

/// One calibration bin of the reliability diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lower_edge: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Expected calibration error with equal-width confidence bins
/// (`[lo, hi)`, last bin closed). Returns the per-bin statistics used for
/// reliability diagrams and confidence histograms; empty bins report their
/// midpoint as mean confidence.
pub fn ece(predictions: &[(f64, bool)], bins: usize) -> Result<(f64, Vec<BinStat>)> {
    if predictions.is_empty() {
        return Err(Error::Empty("calibration predictions"));
    }
    if bins == 0 {
        return Err(Error::Config("ece needs at least one bin".into()));
    }
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for &(conf, ok) in predictions {
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::Numeric(format!(
                "confidence {conf} outside [0, 1]"
            )));
        }
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        conf_sum[b] += conf;
        correct[b] += usize::from(ok);
        count[b] += 1;
    }
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let mut stats = Vec::with_capacity(bins);
    for b in 0..bins {
        let lower = b as f64 / bins as f64;
        if count[b] == 0 {
            stats.push(BinStat {
                lower_edge: lower,
                mean_confidence: (b as f64 + 0.5) / bins as f64,
                accuracy: 0.0,
                count: 0,
            });
            continue;
        }
        let mean_conf = conf_sum[b] / count[b] as f64;
        let acc = correct[b] as f64 / count[b] as f64;
        total += count[b] as f64 / n * (acc - mean_conf).abs();
        stats.push(BinStat {
            lower_edge: lower,
            mean_confidence: mean_conf,
            accuracy: acc,
            count: count[b],
        });
    }
    Ok((total, stats))
}

/// Full held-out evaluation of a model.
#[derive(Debug, Clone)]
pub struct TestEval {
    pub accuracy: f64,
    /// Per-class recall; `None` for classes absent from the test set.
    pub classwise: Vec<Option<f64>>,
    /// `(max softmax, correct)` per test sample, for calibration metrics.
    pub predictions: Vec<(f64, bool)>,
}

pub fn evaluate_model(params: &ModelParams, test: &LabeledDataset) -> Result<TestEval> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let classes = test.classes;
    let mut per_class_total = vec![0usize; classes];
    let mut per_class_correct = vec![0usize; classes];
    let mut predictions = Vec::with_capacity(test.len());
    let mut correct_total = 0usize;
    for (x, &y) in test.features.iter().zip(&test.labels) {
        let probs = softmax(&forward_logits(params, x)?)?;
        let mut pred = 0;
        for i in 1..classes {
            if probs[i] > probs[pred] {
                pred = i;
            }
        }
        let ok = pred == y;
        per_class_total[y] += 1;
        per_class_correct[y] += usize::from(ok);
        correct_total += usize::from(ok);
        predictions.push((probs[pred], ok));
    }
    let classwise = per_class_total
        .iter()
        .zip(&per_class_correct)
        .map(|(&t, &c)| (t > 0).then(|| c as f64 / t as f64))
        .collect();
    Ok(TestEval {
        accuracy: correct_total as f64 / test.len() as f64,
        classwise,
        predictions,
    })
}

/// Per-round mean losses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossMeans {
    pub server: f64,
    pub pseudo: f64,
    pub unpseudo: f64,
    pub mixup: f64,
}

/// Everything recorded about one communication round. Serialized as one
/// line-delimited record per round by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// False when the test metrics were carried forward from the last
    /// evaluation cadence point.
    pub evaluated: bool,
    pub test_accuracy: f64,
    pub classwise_accuracy: Vec<Option<f64>>,
    pub pl_accuracy: f64,
    /// True when no client pseudo-labeled anything this round.
    pub pl_empty: bool,
    pub utilization_ratio: f64,
    pub wrong_label_ratio: f64,
    /// Row-major `K x K`, row = true class, column = pseudo-label.
    pub confusion: Vec<u64>,
    pub ece: f64,
    pub bin_stats: Vec<BinStat>,
    pub losses: LossMeans,
    /// Total pseudo-labels across sampled clients.
    pub pseudo_selected: u64,
    /// Total consistency-set size across sampled clients.
    pub unpseudo_selected: u64,
    /// Total pool size across sampled clients.
    pub unlabeled_total: u64,
    /// How many sampled clients were in warm-up this round.
    pub warmup_clients: usize,
}
