//! Client-side pseudo-label selection and unlabeled losses.
//!
//! Once per round a client evaluates its pool with the received global
//! snapshot ([`evaluate_unlabeled`]): one weakly augmented view per sample
//! yields the soft prediction, its confidence and argmax, and the energy
//! score. Every downstream quantity of the round (class-difficulty counts,
//! adaptive thresholds, hybrid selection, soft targets) is computed from
//! this single table so they are mutually consistent.
//!
//! Selection has two regimes. While a client is warming up (most of its pool
//! still below the global confidence threshold) the adaptive per-class
//! thresholds collapse toward zero and everything is pseudo-labeled; no
//! sample is routed to the consistency set. Outside warm-up a sample is
//! pseudo-labeled only if its confidence clears the per-class threshold
//! *and* its energy is below the energy threshold; everything else carries
//! its soft prediction into the consistency set.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::data::{strong_augment, weak_augment, AugmentConfig};
use crate::error::Result;
use crate::nn::{forward_logits, softmax, LossSample, LossTerm, ModelParams};
use crate::seed;

/// Temperature and threshold for the energy-based in-distribution gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConfig {
    pub temperature: f64,
    pub threshold: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            threshold: f64::INFINITY,
        }
    }
}

/// `-T * log sum_i exp(z_i / T)`, evaluated max-shifted so logits of any
/// magnitude stay finite. Low values mean the sample looks in-distribution.
pub fn energy_score(logits: &[f64], temperature: f64) -> f64 {
    debug_assert!(temperature > 0.0);
    if logits.is_empty() {
        return f64::INFINITY;
    }
    let max = logits
        .iter()
        .map(|&z| z / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z / temperature - max).exp()).sum();
    -temperature * (max + sum.ln())
}

/// Per-sample snapshot statistics from the single labeling pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    /// Soft prediction on the weak view.
    pub probs: Vec<f64>,
    /// Highest predicted probability.
    pub confidence: f64,
    /// Argmax class (ties broken toward the lowest index).
    pub predicted: usize,
    /// Energy score of the weak-view logits.
    pub energy: f64,
}

/// The RNG used for sample `index`'s weak view within a labeling pass.
///
/// Exposed so independent re-implementations (oracles, cross-checks) can
/// reproduce the exact augmented inputs.
pub fn view_rng(pass_seed: u64, index: usize) -> ChaCha8Rng {
    seed::child_rng(pass_seed, "weak-view", index as u64, 0)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Evaluate the global snapshot on every sample's weak view.
pub fn evaluate_unlabeled(
    params: &ModelParams,
    samples: &[Vec<f64>],
    augment: &AugmentConfig,
    temperature: f64,
    pass_seed: u64,
) -> Result<Vec<SampleEval>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = view_rng(pass_seed, i);
            let view = weak_augment(x, augment, &mut rng);
            let logits = forward_logits(params, &view)?;
            let probs = softmax(&logits)?;
            let predicted = argmax(&probs);
            Ok(SampleEval {
                confidence: probs[predicted],
                predicted,
                energy: energy_score(&logits, temperature),
                probs,
            })
        })
        .collect()
}

/// Per-class counts of confidently predicted samples, plus the count that
/// cleared no threshold at all.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDifficulty {
    /// For each class, how many samples exceed the global confidence
    /// threshold with that argmax.
    pub confident: Vec<u64>,
    /// Samples below the global threshold.
    pub rest: u64,
    /// Pool size; always `sum(confident) + rest`.
    pub total: u64,
}

impl ClassDifficulty {
    pub fn confident_total(&self) -> u64 {
        self.confident.iter().sum()
    }
}

/// Count confident predictions per class at the global threshold.
pub fn class_difficulty(evals: &[SampleEval], confidence_threshold: f64, classes: usize) -> ClassDifficulty {
    let mut confident = vec![0u64; classes];
    let mut rest = 0u64;
    for e in evals {
        if e.confidence > confidence_threshold {
            confident[e.predicted] += 1;
        } else {
            rest += 1;
        }
    }
    ClassDifficulty {
        confident,
        rest,
        total: evals.len() as u64,
    }
}

/// The nonlinear map applied to the normalized difficulty before scaling the
/// global threshold; convex on [0, 1] with fixed points at 0 and 1, so the
/// per-class threshold rises slowly until a class is nearly saturated.
pub fn threshold_map(x: f64) -> f64 {
    x / (2.0 - x)
}

/// Per-class confidence thresholds derived from difficulty counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveThresholds {
    /// Normalized difficulty in [0, 1] per class.
    pub normalized: Vec<f64>,
    /// Threshold applied to a sample predicted as each class.
    pub per_class: Vec<f64>,
    /// The global threshold the per-class values scale.
    pub global: f64,
    /// True while the below-threshold mass dominates the confident mass.
    pub warmup_active: bool,
}

/// Adaptive warm-up thresholds.
///
/// While fewer samples clear the global threshold than fail it, counts are
/// normalized by the failing mass — thresholds start near zero and rise as
/// the model grows confident. Afterwards counts are normalized by the
/// best-learned class.
pub fn adaptive_thresholds(difficulty: &ClassDifficulty, global: f64) -> AdaptiveThresholds {
    let confident_total = difficulty.confident_total();
    let warmup_active = confident_total < difficulty.rest;
    let denom = if warmup_active {
        difficulty.rest as f64
    } else {
        // Reachable with zero denominator only for an empty pool, which the
        // round loop rejects earlier; fall back to all-zero thresholds.
        difficulty.confident.iter().copied().max().unwrap_or(0) as f64
    };
    let normalized: Vec<f64> = difficulty
        .confident
        .iter()
        .map(|&c| if denom > 0.0 { c as f64 / denom } else { 0.0 })
        .collect();
    let per_class = normalized.iter().map(|&b| threshold_map(b) * global).collect();
    AdaptiveThresholds {
        normalized,
        per_class,
        global,
        warmup_active,
    }
}

/// Constant thresholds at the global value for every class (the
/// fixed-threshold baseline); never reports warm-up.
pub fn fixed_thresholds(classes: usize, global: f64) -> AdaptiveThresholds {
    AdaptiveThresholds {
        normalized: vec![1.0; classes],
        per_class: vec![global; classes],
        global,
        warmup_active: false,
    }
}

/// A sample admitted to the pseudo-labeled set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoItem {
    /// Index into the client's sample list.
    pub index: usize,
    /// Hard label assigned by the global snapshot.
    pub label: usize,
}

/// A sample routed to the consistency set, carrying its soft prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpseudoItem {
    pub index: usize,
    pub target: Vec<f64>,
}

/// Disjoint selection outcome for one client and round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub pseudo: Vec<PseudoItem>,
    pub unpseudo: Vec<UnpseudoItem>,
}

/// Split the pool into pseudo-labeled and consistency sets. A sample is
/// pseudo-labeled iff its confidence exceeds the threshold of its predicted
/// class *and* its energy is below the energy threshold; the two sets cover
/// the pool exactly.
pub fn select_hybrid(
    evals: &[SampleEval],
    thresholds: &AdaptiveThresholds,
    energy: &EnergyConfig,
) -> Selection {
    debug_assert!(!thresholds.warmup_active, "hybrid selection is a post-warm-up rule");
    let mut out = Selection::default();
    for (i, e) in evals.iter().enumerate() {
        if e.confidence > thresholds.per_class[e.predicted] && e.energy < energy.threshold {
            out.pseudo.push(PseudoItem {
                index: i,
                label: e.predicted,
            });
        } else {
            out.unpseudo.push(UnpseudoItem {
                index: i,
                target: e.probs.clone(),
            });
        }
    }
    out
}

/// Warm-up selection: confidence test only, no energy gate, and no
/// consistency set.
pub fn select_warmup(evals: &[SampleEval], thresholds: &AdaptiveThresholds) -> Selection {
    let mut out = Selection::default();
    for (i, e) in evals.iter().enumerate() {
        if e.confidence > thresholds.per_class[e.predicted] {
            out.pseudo.push(PseudoItem {
                index: i,
                label: e.predicted,
            });
        }
    }
    out
}

/// Mixing-ratio hyperparameter for sample interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupConfig {
    pub alpha: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self { alpha: 0.75 }
    }
}

/// An interpolated sample carrying both source labels and the drawn ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub input: Vec<f64>,
    pub ratio: f64,
    pub label_a: usize,
    pub label_b: usize,
}

/// Interpolate two pseudo-labeled samples with `ratio ~ Beta(alpha, alpha)`,
/// used exactly as drawn (no folding toward 0.5).
pub fn mixup_pair<R: Rng>(
    primary: (&[f64], usize),
    partner: (&[f64], usize),
    config: &MixupConfig,
    rng: &mut R,
) -> MixedSample {
    let beta = Beta::new(config.alpha, config.alpha).expect("alpha > 0");
    let ratio = beta.sample(rng);
    mixup_with_ratio(primary, partner, ratio)
}

pub fn mixup_with_ratio(
    primary: (&[f64], usize),
    partner: (&[f64], usize),
    ratio: f64,
) -> MixedSample {
    let input = primary
        .0
        .iter()
        .zip(partner.0)
        .map(|(&a, &b)| ratio * a + (1.0 - ratio) * b)
        .collect();
    MixedSample {
        input,
        ratio,
        label_a: primary.1,
        label_b: partner.1,
    }
}

/// Mean cross entropy of strong-augmented predictions against hard
/// pseudo-labels. Empty batches contribute zero.
pub fn pseudo_loss<R: Rng>(
    params: &ModelParams,
    batch: &[(Vec<f64>, usize)],
    augment: &AugmentConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let items: Vec<LossSample> = batch
        .iter()
        .map(|(x, label)| LossSample::cross_entropy(strong_augment(x, augment, rng), *label))
        .collect();
    crate::nn::batch_loss(params, &items)
}

/// Mean KL divergence from the stored soft targets to the strong-augmented
/// predictions. Empty batches contribute zero.
pub fn unpseudo_loss<R: Rng>(
    params: &ModelParams,
    batch: &[(Vec<f64>, Vec<f64>)],
    augment: &AugmentConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let items: Vec<LossSample> = batch
        .iter()
        .map(|(x, target)| LossSample::kl(strong_augment(x, augment, rng), target.clone()))
        .collect();
    crate::nn::batch_loss(params, &items)
}

/// Mean ratio-weighted two-term cross entropy on weak-augmented interpolated
/// inputs. Empty batches contribute zero.
pub fn mixup_loss<R: Rng>(
    params: &ModelParams,
    batch: &[MixedSample],
    augment: &AugmentConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let items: Vec<LossSample> = batch
        .iter()
        .map(|m| LossSample {
            input: weak_augment(&m.input, augment, rng),
            terms: mix_terms(m),
        })
        .collect();
    crate::nn::batch_loss(params, &items)
}

pub(crate) fn mix_terms(m: &MixedSample) -> Vec<LossTerm> {
    vec![
        LossTerm::CrossEntropy {
            label: m.label_a,
            weight: m.ratio,
        },
        LossTerm::CrossEntropy {
            label: m.label_b,
            weight: 1.0 - m.ratio,
        },
    ]
}

/// The round's unlabeled objective: plain sum of the three components (the
/// consistency term is identically zero during warm-up).
pub fn total_unlabeled_loss(pseudo: f64, unpseudo: f64, mixup: f64) -> f64 {
    pseudo + unpseudo + mixup
}
