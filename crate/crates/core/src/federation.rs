//! The communication-round loop.
//!
//! Each round: the server fine-tunes the global weights on its labeled set
//! (weak-augmented cross entropy), refreshes static normalization statistics
//! when enabled, samples a client subset, runs every sampled client's local
//! update against the immutable snapshot (on a worker pool — per-client
//! seeds make the result independent of pool size), aggregates the returned
//! weights by data size, and applies the server-side momentum step. Metrics
//! are collected into one [`RoundReport`] per round.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{strong_augment, weak_augment, AugmentConfig, FedDatasets, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, LossMeans, RoundReport};
use crate::nn::{
    backward, sgd_step, CosineSchedule, Gradients, LossSample, ModelParams, SgdState, NORM_EPS,
};
use crate::seed;
use crate::ssfl::{
    self, adaptive_thresholds, class_difficulty, evaluate_unlabeled, fixed_thresholds,
    select_hybrid, select_warmup, EnergyConfig, MixupConfig, Selection,
};

/// Which client-side mechanisms a run enables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodMode {
    /// Adaptive warm-up thresholds + energy gate + consistency set.
    Catchfed,
    /// Adaptive warm-up thresholds only.
    CawtOnly,
    /// Fixed threshold + consistency set.
    UnpseudoOnly,
    /// Adaptive warm-up thresholds + consistency set (no energy gate).
    CawtUnpseudo,
    /// Fixed threshold + energy gate.
    HybridOnly,
    /// Fixed confidence threshold, pseudo + mixup losses only.
    FixedBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodFlags {
    pub adaptive: bool,
    pub consistency: bool,
    pub energy_gate: bool,
}

impl MethodMode {
    pub fn flags(self) -> MethodFlags {
        let (adaptive, consistency, energy_gate) = match self {
            MethodMode::Catchfed => (true, true, true),
            MethodMode::CawtOnly => (true, false, false),
            MethodMode::UnpseudoOnly => (false, true, false),
            MethodMode::CawtUnpseudo => (true, true, false),
            MethodMode::HybridOnly => (false, false, true),
            MethodMode::FixedBaseline => (false, false, false),
        };
        MethodFlags {
            adaptive,
            consistency,
            energy_gate,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodMode::Catchfed => "catchfed",
            MethodMode::CawtOnly => "cawt_only",
            MethodMode::UnpseudoOnly => "unpseudo_only",
            MethodMode::CawtUnpseudo => "cawt_unpseudo",
            MethodMode::HybridOnly => "hybrid_only",
            MethodMode::FixedBaseline => "fixed_baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "catchfed" => Ok(MethodMode::Catchfed),
            "cawt_only" => Ok(MethodMode::CawtOnly),
            "unpseudo_only" => Ok(MethodMode::UnpseudoOnly),
            "cawt_unpseudo" => Ok(MethodMode::CawtUnpseudo),
            "hybrid_only" => Ok(MethodMode::HybridOnly),
            "fixed_baseline" => Ok(MethodMode::FixedBaseline),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected catchfed, cawt_only, unpseudo_only, \
                 cawt_unpseudo, hybrid_only or fixed_baseline)"
            ))),
        }
    }
}

/// How client updates are weighted during aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Proportional to the client's unlabeled pool size.
    DataSize,
    Uniform,
}

/// Server training budget per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerPasses {
    /// Full shuffled passes over the labeled set.
    Epochs(usize),
    /// A fixed number of mini-batch steps.
    Iterations(usize),
}

/// All knobs of a federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rounds: usize,
    pub clients: usize,
    /// Fraction of clients sampled each round.
    pub participation: f64,
    pub server_passes: ServerPasses,
    pub server_batch: usize,
    /// Local steps per client per round (outside warm-up).
    pub train_iter: usize,
    /// Local steps while a client is in warm-up.
    pub warmup_iter: usize,
    pub client_batch: usize,
    /// Consistency batch size as a multiple of the pseudo batch size.
    pub unpseudo_ratio: f64,
    pub confidence_threshold: f64,
    pub energy_threshold: f64,
    pub temperature: f64,
    pub mixup_alpha: f64,
    pub method: MethodMode,
    pub hidden: Vec<usize>,
    pub feature_norm: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub min_lr_factor: f64,
    pub aggregation: WeightScheme,
    pub aggregation_momentum: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rounds: 60,
            clients: 20,
            participation: 0.25,
            server_passes: ServerPasses::Epochs(3),
            server_batch: 10,
            train_iter: 30,
            warmup_iter: 30,
            client_batch: 10,
            unpseudo_ratio: 1.0,
            confidence_threshold: 0.95,
            energy_threshold: -5.0,
            temperature: 1.0,
            mixup_alpha: 0.75,
            method: MethodMode::Catchfed,
            hidden: vec![64, 64],
            feature_norm: false,
            learning_rate: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            min_lr_factor: 1e-4,
            aggregation: WeightScheme::DataSize,
            aggregation_momentum: 0.5,
            eval_every: 1,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.clients == 0 {
            problems.push("clients must be >= 1".to_string());
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            problems.push("participation must be in (0, 1]".to_string());
        } else if ((self.clients as f64) * self.participation).floor() < 1.0 {
            problems.push("participation must sample at least one client".to_string());
        }
        if self.server_batch == 0 {
            problems.push("server_batch must be >= 1".to_string());
        }
        if self.client_batch == 0 {
            problems.push("client_batch must be >= 1".to_string());
        }
        if self.unpseudo_ratio.is_nan() || self.unpseudo_ratio < 0.0 {
            problems.push("unpseudo_ratio must be >= 0".to_string());
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            problems.push("confidence_threshold must be in (0, 1)".to_string());
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            problems.push("temperature must be > 0".to_string());
        }
        if self.mixup_alpha.is_nan() || self.mixup_alpha <= 0.0 {
            problems.push("mixup_alpha must be > 0".to_string());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            problems.push("learning_rate must be > 0".to_string());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push("momentum must be in [0, 1)".to_string());
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            problems.push("weight_decay must be >= 0".to_string());
        }
        if self.min_lr_factor.is_nan() || self.min_lr_factor < 0.0 {
            problems.push("min_lr_factor must be >= 0".to_string());
        }
        if !(0.0..=1.0).contains(&self.aggregation_momentum) {
            problems.push("aggregation_momentum must be in [0, 1]".to_string());
        }
        if self.eval_every == 0 {
            problems.push("eval_every must be >= 1".to_string());
        }
        if self.energy_threshold.is_nan() {
            problems.push("energy_threshold must not be NaN".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule {
            base_lr: self.learning_rate,
            total_rounds: self.rounds,
            min_factor: self.min_lr_factor,
        }
    }
}

/// Server-side state carried across rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub params: ModelParams,
    /// Aggregation momentum buffer (previous global update).
    pub velocity: ModelParams,
    pub round: usize,
    pub labeled: LabeledDataset,
    pub schedule: CosineSchedule,
}

impl ServerState {
    pub fn new(params: ModelParams, labeled: LabeledDataset, schedule: CosineSchedule) -> Self {
        let velocity = params.zeros_like();
        Self {
            params,
            velocity,
            round: 0,
            labeled,
            schedule,
        }
    }
}

/// One mini-batch CE step over weak-augmented labeled samples.
fn server_step<R: Rng>(
    params: &mut ModelParams,
    opt: &mut SgdState,
    labeled: &LabeledDataset,
    batch_idx: &[usize],
    augment: &AugmentConfig,
    rng: &mut R,
) -> Result<f64> {
    let items: Vec<LossSample> = batch_idx
        .iter()
        .map(|&i| {
            LossSample::cross_entropy(
                weak_augment(&labeled.features[i], augment, rng),
                labeled.labels[i],
            )
        })
        .collect();
    let (loss, grads) = backward(params, &items)?;
    sgd_step(params, opt, &grads);
    Ok(loss)
}

/// Fine-tune the global weights on the server's labeled set. Returns the
/// mean training loss across steps (zero when no step ran).
pub fn server_update(
    state: &mut ServerState,
    config: &RunConfig,
    augment: &AugmentConfig,
) -> Result<f64> {
    if state.labeled.is_empty() {
        return Err(Error::Empty("server labeled set"));
    }
    let lr = state.schedule.lr_at(state.round.saturating_sub(1));
    let mut opt = SgdState::new(&state.params, lr, config.momentum, config.weight_decay);
    let mut rng = seed::child_rng(config.seed, "server", state.round as u64, 0);
    let n = state.labeled.len();
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    match config.server_passes {
        ServerPasses::Epochs(epochs) => {
            for _ in 0..epochs {
                let mut idx: Vec<usize> = (0..n).collect();
                rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
                for batch in idx.chunks(config.server_batch.min(n)) {
                    loss_sum +=
                        server_step(&mut state.params, &mut opt, &state.labeled, batch, augment, &mut rng)?;
                    steps += 1;
                }
            }
        }
        ServerPasses::Iterations(iters) => {
            let mut sampler = BatchSampler::new(n, config.server_batch.min(n));
            for _ in 0..iters {
                let batch = sampler.next_batch(&mut rng);
                loss_sum +=
                    server_step(&mut state.params, &mut opt, &state.labeled, &batch, augment, &mut rng)?;
                steps += 1;
            }
        }
    }
    Ok(if steps > 0 { loss_sum / steps as f64 } else { 0.0 })
}

/// Recompute the static normalization statistics layer by layer with one
/// pass over the server's labeled set. No-op for models without
/// normalization.
pub fn update_sbn_stats(state: &mut ServerState) -> Result<()> {
    if state.params.layers.iter().all(|l| l.norm.is_none()) {
        return Ok(());
    }
    if state.labeled.is_empty() {
        return Err(Error::Empty("server labeled set"));
    }
    let n = state.labeled.len() as f64;
    // Activations must flow through the already-updated statistics of the
    // layers below, so process in order.
    let mut activations: Vec<Vec<f64>> = state.labeled.features.clone();
    let n_layers = state.params.layers.len();
    for l in 0..n_layers {
        let layer = &state.params.layers[l];
        let pre: Vec<Vec<f64>> = activations
            .iter()
            .map(|x| {
                (0..layer.out_dim)
                    .map(|o| {
                        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + layer.bias[o]
                    })
                    .collect()
            })
            .collect();
        if l + 1 == n_layers {
            break;
        }
        let layer = &mut state.params.layers[l];
        if let Some(norm) = &mut layer.norm {
            for o in 0..layer.out_dim {
                let mean = pre.iter().map(|z| z[o]).sum::<f64>() / n;
                let var = pre.iter().map(|z| (z[o] - mean) * (z[o] - mean)).sum::<f64>() / n;
                norm.mean[o] = mean;
                norm.variance[o] = var;
            }
        }
        let layer = &state.params.layers[l];
        activations = pre
            .iter()
            .map(|z| {
                (0..layer.out_dim)
                    .map(|o| match &layer.norm {
                        Some(norm) => {
                            let s = (z[o] - norm.mean[o]) / (norm.variance[o] + NORM_EPS).sqrt();
                            (norm.scale[o] * s + norm.shift[o]).max(0.0)
                        }
                        None => z[o].max(0.0),
                    })
                    .collect()
            })
            .collect();
    }
    Ok(())
}

/// Uniform sample (without replacement) of `floor(clients * participation)`
/// client ids, ascending; deterministic in `(seed, round)`.
pub fn sample_clients(clients: usize, participation: f64, round: usize, seed: u64) -> Vec<usize> {
    let count = (((clients as f64) * participation).floor() as usize)
        .max(1)
        .min(clients);
    let mut rng = seed::child_rng(seed, "client-sample", round as u64, 0);
    let mut ids: Vec<usize> = rand::seq::index::sample(&mut rng, clients, count).into_vec();
    ids.sort_unstable();
    ids
}

/// What a client returns from its local round.
#[derive(Debug, Clone)]
pub struct ClientResult {
    pub client_id: usize,
    pub params: ModelParams,
    /// Raw aggregation weight before normalization.
    pub weight: f64,
    /// Pool size, for utilization accounting.
    pub pool_size: usize,
    /// The round's selection (sample indices + assigned labels/targets);
    /// scored against hidden truth by the orchestrator, never locally.
    pub selection: Selection,
    pub warmup: bool,
    /// Mean per-iteration losses (pseudo, consistency, mixup).
    pub losses: LossMeans,
}

/// Uniform-without-replacement batch iterator with wrap-around reshuffle.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    fresh: bool,
}

impl BatchSampler {
    fn new(len: usize, batch: usize) -> Self {
        Self {
            order: (0..len).collect(),
            cursor: 0,
            batch: batch.min(len),
            fresh: true,
        }
    }

    fn next_batch<R: Rng>(&mut self, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.fresh || self.cursor >= self.order.len() {
                rand::seq::SliceRandom::shuffle(self.order.as_mut_slice(), rng);
                self.cursor = 0;
                self.fresh = false;
            }
            let take = (self.batch - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

/// One client's local round: label the pool with the snapshot, build the
/// selection sets, then run local SGD over the combined unlabeled objective.
///
/// Ablation modes alter the pieces: without adaptive thresholds the global
/// threshold applies to every class and warm-up never triggers; without the
/// energy gate the threshold is effectively infinite; without the
/// consistency term the failing samples are dropped.
pub fn client_update(
    global: &ModelParams,
    samples: &[Vec<f64>],
    config: &RunConfig,
    augment: &AugmentConfig,
    round: usize,
    client_id: usize,
    learning_rate: f64,
) -> Result<ClientResult> {
    if samples.is_empty() {
        return Err(Error::Empty("client pool"));
    }
    let flags = config.method.flags();
    let classes = global.classes();
    let pass_seed = seed::child_seed(config.seed, "labeling", round as u64, client_id as u64);
    let evals = evaluate_unlabeled(global, samples, augment, config.temperature, pass_seed)?;

    let thresholds = if flags.adaptive {
        adaptive_thresholds(
            &class_difficulty(&evals, config.confidence_threshold, classes),
            config.confidence_threshold,
        )
    } else {
        fixed_thresholds(classes, config.confidence_threshold)
    };

    let selection = if thresholds.warmup_active {
        select_warmup(&evals, &thresholds)
    } else {
        let energy = EnergyConfig {
            temperature: config.temperature,
            threshold: if flags.energy_gate {
                config.energy_threshold
            } else {
                f64::INFINITY
            },
        };
        let mut sel = select_hybrid(&evals, &thresholds, &energy);
        if !flags.consistency {
            sel.unpseudo.clear();
        }
        sel
    };
    drop(evals);

    let weight = match config.aggregation {
        WeightScheme::DataSize => samples.len() as f64,
        WeightScheme::Uniform => 1.0,
    };
    let base_result = |params: ModelParams, losses: LossMeans| ClientResult {
        client_id,
        params,
        weight,
        pool_size: samples.len(),
        selection: selection.clone(),
        warmup: thresholds.warmup_active,
        losses,
    };

    let n_pseudo = selection.pseudo.len();
    let n_unpseudo = selection.unpseudo.len();
    if n_pseudo == 0 && n_unpseudo == 0 {
        // Nothing selected anywhere: return the snapshot untouched.
        return Ok(base_result(global.clone(), LossMeans::default()));
    }

    let mut rng = seed::child_rng(config.seed, "client-train", round as u64, client_id as u64);
    let mut params = global.clone();
    let mut opt = SgdState::new(&params, learning_rate, config.momentum, config.weight_decay);
    let mixup = MixupConfig {
        alpha: config.mixup_alpha,
    };

    // The interpolation partner pool is resampled (with replacement) from the
    // pseudo set once per round.
    let mix_source: Vec<usize> = (0..n_pseudo)
        .map(|_| rng.random_range(0..n_pseudo.max(1)))
        .collect();

    let iterations = if thresholds.warmup_active {
        config.warmup_iter
    } else {
        config.train_iter
    };
    let mut pseudo_sampler = BatchSampler::new(n_pseudo, config.client_batch);
    let mut mix_sampler = BatchSampler::new(n_pseudo, config.client_batch);
    let unpseudo_batch = ((config.unpseudo_ratio * config.client_batch as f64).ceil() as usize)
        .min(n_unpseudo);
    let mut unpseudo_sampler = BatchSampler::new(n_unpseudo, unpseudo_batch);

    let mut loss_acc = LossMeans::default();
    for _ in 0..iterations {
        let mut total_grads: Option<Gradients> = None;
        let add = |g: Gradients, acc: &mut Option<Gradients>| match acc {
            Some(total) => total.add(&g),
            None => *acc = Some(g),
        };

        if n_pseudo > 0 {
            let batch = pseudo_sampler.next_batch(&mut rng);
            let items: Vec<LossSample> = batch
                .iter()
                .map(|&b| {
                    let item = &selection.pseudo[b];
                    LossSample::cross_entropy(
                        strong_augment(&samples[item.index], augment, &mut rng),
                        item.label,
                    )
                })
                .collect();
            let (loss, grads) = backward(&params, &items)?;
            loss_acc.pseudo += loss;
            add(grads, &mut total_grads);

            let partner_batch = mix_sampler.next_batch(&mut rng);
            let items: Vec<LossSample> = batch
                .iter()
                .zip(&partner_batch)
                .map(|(&b, &m)| {
                    let primary = &selection.pseudo[b];
                    let partner = &selection.pseudo[mix_source[m]];
                    let mixed = ssfl::mixup_pair(
                        (&samples[primary.index], primary.label),
                        (&samples[partner.index], partner.label),
                        &mixup,
                        &mut rng,
                    );
                    LossSample {
                        input: weak_augment(&mixed.input, augment, &mut rng),
                        terms: ssfl::mix_terms(&mixed),
                    }
                })
                .collect();
            let (loss, grads) = backward(&params, &items)?;
            loss_acc.mixup += loss;
            add(grads, &mut total_grads);
        }

        if n_unpseudo > 0 && unpseudo_batch > 0 {
            let batch = unpseudo_sampler.next_batch(&mut rng);
            let items: Vec<LossSample> = batch
                .iter()
                .map(|&b| {
                    let item = &selection.unpseudo[b];
                    LossSample::kl(
                        strong_augment(&samples[item.index], augment, &mut rng),
                        item.target.clone(),
                    )
                })
                .collect();
            let (loss, grads) = backward(&params, &items)?;
            loss_acc.unpseudo += loss;
            add(grads, &mut total_grads);
        }

        if let Some(grads) = total_grads {
            sgd_step(&mut params, &mut opt, &grads);
        }
    }

    if iterations > 0 {
        let n = iterations as f64;
        loss_acc.pseudo /= n;
        loss_acc.unpseudo /= n;
        loss_acc.mixup /= n;
    }
    Ok(base_result(params, loss_acc))
}

/// Weighted convex combination of the client models, anchored at the first
/// result (by ascending client id) so combining identical models is exact:
/// `base + sum_i w_i * (params_i - base)` with normalized weights.
pub fn aggregate(results: &[ClientResult]) -> Result<ModelParams> {
    if results.is_empty() {
        return Err(Error::Empty("aggregation input"));
    }
    let mut order: Vec<&ClientResult> = results.iter().collect();
    order.sort_by_key(|r| r.client_id);
    let total: f64 = order.iter().map(|r| r.weight.max(0.0)).sum();
    let weights: Vec<f64> = if total > 0.0 {
        order.iter().map(|r| r.weight.max(0.0) / total).collect()
    } else {
        vec![1.0 / order.len() as f64; order.len()]
    };
    let mut out = order[0].params.clone();
    let base = order[0].params.clone();
    for (r, &w) in order.iter().zip(&weights) {
        let mut delta = r.params.clone();
        delta.zip_apply(&base, |d, b| *d -= b);
        out.zip_apply(&delta, |o, d| *o += w * d);
    }
    Ok(out)
}

/// Server-side momentum on the aggregated update:
/// `new = aggregated + beta * velocity; velocity = new - old`.
/// With zero velocity (round one) or `beta = 0` this is exactly the plain
/// aggregate.
pub fn momentum_aggregate(state: &mut ServerState, aggregated: ModelParams, beta: f64) {
    let old = state.params.clone();
    let mut new = aggregated;
    new.zip_apply(&state.velocity, |n, v| *n += beta * v);
    let mut velocity = new.clone();
    velocity.zip_apply(&old, |v, o| *v -= o);
    state.velocity = velocity;
    state.params = new;
}

/// Run the full training loop; returns the final global weights and one
/// report per round.
pub fn run_training(config: &RunConfig, data: &FedDatasets) -> Result<(ModelParams, Vec<RoundReport>)> {
    config.validate()?;
    if data.clients.len() != config.clients {
        return Err(Error::Config(format!(
            "config expects {} clients, datasets provide {}",
            config.clients,
            data.clients.len()
        )));
    }
    if data.clients.iter().any(|c| c.is_empty()) {
        return Err(Error::Config("every client needs at least one sample".into()));
    }
    let augment = AugmentConfig::default();
    run_training_with_augment(config, data, &augment)
}

/// [`run_training`] with an explicit augmentation configuration.
pub fn run_training_with_augment(
    config: &RunConfig,
    data: &FedDatasets,
    augment: &AugmentConfig,
) -> Result<(ModelParams, Vec<RoundReport>)> {
    config.validate()?;
    augment.validate()?;
    let dims: Vec<usize> = std::iter::once(data.server_labeled.dims())
        .chain(config.hidden.iter().copied())
        .chain(std::iter::once(data.server_labeled.classes))
        .collect();
    let params = ModelParams::init(
        &dims,
        config.feature_norm,
        seed::child_seed(config.seed, "init", 0, 0),
    )?;
    let mut state = ServerState::new(params, data.server_labeled.clone(), config.schedule());
    let mut reports: Vec<RoundReport> = Vec::with_capacity(config.rounds);

    for round in 1..=config.rounds {
        state.round = round;
        let server_loss = server_update(&mut state, config, augment).map_err(|e| e.in_round(round))?;
        update_sbn_stats(&mut state).map_err(|e| e.in_round(round))?;

        let sampled = sample_clients(config.clients, config.participation, round, config.seed);
        let lr = state.schedule.lr_at(round - 1);
        let snapshot = state.params.clone();
        let mut results: Vec<ClientResult> = sampled
            .par_iter()
            .map(|&cid| {
                client_update(
                    &snapshot,
                    data.clients[cid].samples(),
                    config,
                    augment,
                    round,
                    cid,
                    lr,
                )
                .map_err(|e| e.in_client(round, cid))
            })
            .collect::<Result<_>>()?;
        results.sort_by_key(|r| r.client_id);

        let aggregated = aggregate(&results).map_err(|e| e.in_round(round))?;
        momentum_aggregate(&mut state, aggregated, config.aggregation_momentum);
        if !state.params.is_finite() {
            return Err(Error::Numeric("global weights became non-finite".into()).in_round(round));
        }

        let report = build_report(
            round,
            config,
            &state.params,
            data,
            &results,
            server_loss,
            reports.last(),
        )
        .map_err(|e| e.in_round(round))?;
        reports.push(report);
    }
    Ok((state.params, reports))
}

fn build_report(
    round: usize,
    config: &RunConfig,
    params: &ModelParams,
    data: &FedDatasets,
    results: &[ClientResult],
    server_loss: f64,
    previous: Option<&RoundReport>,
) -> Result<RoundReport> {
    let classes = data.server_labeled.classes;

    // Pseudo-label quality, micro-averaged across the sampled clients.
    let mut selected_total = 0u64;
    let mut unpseudo_total = 0u64;
    let mut pool_total = 0u64;
    let mut correct_total = 0u64;
    let mut confusion = vec![0u64; classes * classes];
    let mut warmup_clients = 0usize;
    let mut losses = LossMeans {
        server: server_loss,
        ..LossMeans::default()
    };
    for r in results {
        let truth = data.clients[r.client_id].hidden_truth();
        selected_total += r.selection.pseudo.len() as u64;
        unpseudo_total += r.selection.unpseudo.len() as u64;
        pool_total += r.pool_size as u64;
        warmup_clients += usize::from(r.warmup);
        correct_total += r
            .selection
            .pseudo
            .iter()
            .filter(|p| p.label == truth[p.index])
            .count() as u64;
        for (cell, add) in confusion
            .iter_mut()
            .zip(metrics::confusion_matrix(&r.selection.pseudo, truth, classes))
        {
            *cell += add;
        }
        losses.pseudo += r.losses.pseudo;
        losses.unpseudo += r.losses.unpseudo;
        losses.mixup += r.losses.mixup;
    }
    if !results.is_empty() {
        let n = results.len() as f64;
        losses.pseudo /= n;
        losses.unpseudo /= n;
        losses.mixup /= n;
    }
    let pl_empty = selected_total == 0;
    let pl_accuracy = if pl_empty {
        0.0
    } else {
        correct_total as f64 / selected_total as f64
    };
    let wrong_label_ratio = if pl_empty { 0.0 } else { 1.0 - pl_accuracy };
    let utilization_ratio = if pool_total == 0 {
        0.0
    } else {
        selected_total as f64 / pool_total as f64
    };

    let evaluate_now =
        round.is_multiple_of(config.eval_every) || round == config.rounds || previous.is_none();
    let (evaluated, test_accuracy, classwise_accuracy, ece_value, bin_stats) = if evaluate_now {
        let eval = metrics::evaluate_model(params, &data.test)?;
        let (e, bins) = metrics::ece(&eval.predictions, 15)?;
        (true, eval.accuracy, eval.classwise, e, bins)
    } else {
        let prev = previous.expect("carry-forward requires a previous report");
        (
            false,
            prev.test_accuracy,
            prev.classwise_accuracy.clone(),
            prev.ece,
            prev.bin_stats.clone(),
        )
    };

    Ok(RoundReport {
        round,
        evaluated,
        test_accuracy,
        classwise_accuracy,
        pl_accuracy,
        pl_empty,
        utilization_ratio,
        wrong_label_ratio,
        confusion,
        ece: ece_value,
        bin_stats,
        losses,
        pseudo_selected: selected_total,
        unpseudo_selected: unpseudo_total,
        unlabeled_total: pool_total,
        warmup_clients,
    })
}
