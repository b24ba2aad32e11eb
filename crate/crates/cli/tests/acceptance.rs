//! Acceptance suite: one test per criterion, each printing a `[PASS]` line
//! with the measured margin. Run with
//! `cargo test -p catchfed-cli --test acceptance -- --nocapture`.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use catchfed_cli::config::ExperimentConfig;
use catchfed_cli::runner::{run_experiment, RunManifest};
use catchfed_core::data::{
    dirichlet_partition, gen_blobs, split_server_labels, weak_augment, AugmentConfig,
    PartitionMode, PartitionSpec,
};
use catchfed_core::federation::MethodMode;
use catchfed_core::metrics::ece;
use catchfed_core::nn::{
    backward, batch_loss, forward_logits, softmax, Gradients, LossSample, LossTerm, ModelParams,
};
use catchfed_core::seed::{child_rng, child_seed};
use catchfed_core::ssfl::{
    adaptive_thresholds, class_difficulty, energy_score, evaluate_unlabeled, select_hybrid,
    select_warmup, ClassDifficulty, EnergyConfig,
};

// --- criterion 1: gradient oracle -------------------------------------------

fn jitter_params(params: &mut ModelParams, rng: &mut impl Rng) {
    // Zero-initialized biases can leave pre-activations exactly on the ReLU
    // kink, where a central difference and the subgradient legitimately
    // disagree; nudge every parameter off it.
    for layer in &mut params.layers {
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v += rng.random_range(-0.3..0.3);
        }
        if let Some(norm) = &mut layer.norm {
            for v in norm
                .mean
                .iter_mut()
                .chain(norm.scale.iter_mut())
                .chain(norm.shift.iter_mut())
            {
                *v += rng.random_range(-0.3..0.3);
            }
            for v in norm.variance.iter_mut() {
                *v = rng.random_range(0.5..1.5);
            }
        }
    }
}

fn grad_entry(grads: &Gradients, layer: usize, slot: usize, dims: (usize, usize, usize)) -> f64 {
    let (n_w, n_b, n_norm) = dims;
    let g = &grads.layers[layer];
    if slot < n_w {
        g.weights[slot]
    } else if slot < n_w + n_b {
        g.bias[slot - n_w]
    } else if slot < n_w + n_b + n_norm {
        g.scale[slot - n_w - n_b]
    } else {
        g.shift[slot - n_w - n_b - n_norm]
    }
}

fn perturb(params: &mut ModelParams, layer: usize, slot: usize, dims: (usize, usize, usize), h: f64) {
    let (n_w, n_b, n_norm) = dims;
    let l = &mut params.layers[layer];
    let v = if slot < n_w {
        &mut l.weights[slot]
    } else if slot < n_w + n_b {
        &mut l.bias[slot - n_w]
    } else if slot < n_w + n_b + n_norm {
        &mut l.norm.as_mut().unwrap().scale[slot - n_w - n_b]
    } else {
        &mut l.norm.as_mut().unwrap().shift[slot - n_w - n_b - n_norm]
    };
    *v += h;
}

#[test]
fn criterion_01_gradient_oracle() {
    let start = Instant::now();
    let mut rng = child_rng(90_001, "acceptance-grad", 0, 0);
    let h = 1e-4;
    let mut entries_checked = 0usize;
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        // Up to 3 hidden layers, widths up to 32, batches up to 16.
        let depth = rng.random_range(1..=3usize);
        let mut dims = vec![rng.random_range(2..=8usize)];
        for _ in 0..depth.saturating_sub(1) {
            let wide: usize = if rng.random::<f64>() < 0.1 { 32 } else { rng.random_range(2..=12) };
            dims.push(wide);
        }
        dims.push(rng.random_range(2..=6usize));
        let norm = rng.random::<bool>() && dims.len() > 2;
        let mut params = ModelParams::init(&dims, norm, 1_000 + case).unwrap();
        jitter_params(&mut params, &mut rng);

        let classes = *dims.last().unwrap();
        let input_dim = dims[0];
        let batch_size = rng.random_range(1..=8usize);
        let batch: Vec<LossSample> = (0..batch_size)
            .map(|_| {
                let input: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
                let mut terms = vec![LossTerm::CrossEntropy {
                    label: rng.random_range(0..classes),
                    weight: rng.random_range(0.2..1.5),
                }];
                if rng.random::<bool>() {
                    let raw: Vec<f64> =
                        (0..classes).map(|_| rng.random_range(-2.0..2.0)).collect();
                    terms.push(LossTerm::KlDivergence {
                        target: softmax(&raw).unwrap(),
                        weight: rng.random_range(0.2..1.5),
                    });
                }
                LossSample { input, terms }
            })
            .collect();

        let (_, grads) = backward(&params, &batch).unwrap();
        for l in 0..params.layers.len() {
            let n_w = params.layers[l].weights.len();
            let n_b = params.layers[l].bias.len();
            let n_norm = params.layers[l].norm.as_ref().map_or(0, |n| n.scale.len());
            let dims3 = (n_w, n_b, n_norm);
            for slot in 0..n_w + n_b + 2 * n_norm {
                let mut probe = params.clone();
                perturb(&mut probe, l, slot, dims3, h);
                let up = batch_loss(&probe, &batch).unwrap();
                perturb(&mut probe, l, slot, dims3, -2.0 * h);
                let down = batch_loss(&probe, &batch).unwrap();
                let numeric = (up - down) / (2.0 * h);
                let analytic = grad_entry(&grads, l, slot, dims3);
                let err = (numeric - analytic).abs();
                let tol = 1e-7_f64.max(1e-4 * numeric.abs().max(analytic.abs()));
                assert!(
                    err <= tol,
                    "case {case} layer {l} slot {slot}: numeric {numeric} vs analytic {analytic}"
                );
                worst = worst.max(err / tol);
                entries_checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "gradient oracle took {elapsed:?}, budget is 30 s"
    );
    println!(
        "[PASS] criterion 1: gradient oracle — {entries_checked} entries over 50 cases within \
         rel 1e-4 (worst err/tol {worst:.3e}) in {elapsed:.2?}"
    );
}

// --- criterion 2: energy score ----------------------------------------------

/// Independent evaluation of the energy definition: direct exponentials with
/// compensated (Kahan) summation where safe, explicit shift otherwise.
fn energy_oracle(logits: &[f64], temperature: f64) -> f64 {
    let kahan = |values: &mut dyn Iterator<Item = f64>| -> f64 {
        let mut sum = 0.0_f64;
        let mut c = 0.0_f64;
        for v in values {
            let y = v - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum
    };
    let max_scaled = logits
        .iter()
        .map(|&z| z / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_scaled.abs() < 600.0 {
        let sum = kahan(&mut logits.iter().map(|&z| (z / temperature).exp()));
        -temperature * sum.ln()
    } else {
        let sum = kahan(&mut logits.iter().map(|&z| (z / temperature - max_scaled).exp()));
        -temperature * (max_scaled + sum.ln())
    }
}

#[test]
fn criterion_02_energy_score_oracle() {
    let mut rng = child_rng(90_002, "acceptance-energy", 0, 0);
    let mut worst = 0.0_f64;
    for i in 0..1000 {
        let k = rng.random_range(1..=12usize);
        let scale = [1.0, 10.0, 1e3][i % 3];
        let temperature = rng.random_range(0.5..2.0);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-scale..scale)).collect();

        let got = energy_score(&logits, temperature);
        let expect = energy_oracle(&logits, temperature);
        let err = (got - expect).abs();
        assert!(err <= 1e-9, "energy mismatch: {got} vs {expect} on {logits:?}");
        worst = worst.max(err);

        let shift: f64 = rng.random_range(-500.0..500.0);
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let cov_err = (energy_score(&shifted, temperature) - (got - shift)).abs();
        assert!(cov_err <= 1e-9, "shift covariance violated by {cov_err}");
        worst = worst.max(cov_err);
    }
    println!(
        "[PASS] criterion 2: energy score matches the direct evaluation on 1000 vectors \
         (worst abs err {worst:.3e}); shift covariance holds"
    );
}

// --- criterion 3: selection oracle -------------------------------------------

#[test]
fn criterion_03_selection_oracle() {
    let augment = AugmentConfig::default();
    let mut rng = child_rng(90_003, "acceptance-select", 0, 0);
    for instance in 0..20u64 {
        let classes = 3 + (instance as usize % 4);
        let dims = 4 + (instance as usize % 3);
        let params = ModelParams::init(&[dims, 10, classes], false, 2_000 + instance).unwrap();
        let blob = gen_blobs(classes, dims, 200 / classes + 1, 2.5, 1.2, 3_000 + instance);
        let samples: Vec<Vec<f64>> = blob.features.into_iter().take(200).collect();
        let tau: f64 = rng.random_range(0.3..0.95);
        let energy_threshold: f64 = rng.random_range(-4.0..2.0);
        let pass_seed = child_seed(90_003, "labeling", instance, 0);

        let evals = evaluate_unlabeled(&params, &samples, &augment, 1.0, pass_seed).unwrap();
        let difficulty = class_difficulty(&evals, tau, classes);
        let thresholds = adaptive_thresholds(&difficulty, tau);

        // Brute force: reconstruct each view, evaluate independently, apply
        // the rules sample by sample.
        struct Row {
            confidence: f64,
            predicted: usize,
            energy: f64,
        }
        let rows: Vec<Row> = samples
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let view = weak_augment(
                    x,
                    &augment,
                    &mut catchfed_core::ssfl::view_rng(pass_seed, i),
                );
                let logits = forward_logits(&params, &view).unwrap();
                let probs = softmax(&logits).unwrap();
                let mut predicted = 0;
                for k in 1..classes {
                    if probs[k] > probs[predicted] {
                        predicted = k;
                    }
                }
                Row {
                    confidence: probs[predicted],
                    predicted,
                    energy: energy_oracle(&logits, 1.0),
                }
            })
            .collect();

        let mut expect_confident = vec![0u64; classes];
        let mut expect_rest = 0u64;
        for r in &rows {
            if r.confidence > tau {
                expect_confident[r.predicted] += 1;
            } else {
                expect_rest += 1;
            }
        }
        let expect = ClassDifficulty {
            confident: expect_confident.clone(),
            rest: expect_rest,
            total: samples.len() as u64,
        };
        assert_eq!(difficulty, expect, "instance {instance}");

        if thresholds.warmup_active {
            let selection = select_warmup(&evals, &thresholds);
            let expected: Vec<(usize, usize)> = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.confidence > thresholds.per_class[r.predicted])
                .map(|(i, r)| (i, r.predicted))
                .collect();
            let got: Vec<(usize, usize)> =
                selection.pseudo.iter().map(|p| (p.index, p.label)).collect();
            assert_eq!(got, expected, "instance {instance} warm-up selection");
            assert!(selection.unpseudo.is_empty());
        } else {
            let selection = select_hybrid(
                &evals,
                &thresholds,
                &EnergyConfig {
                    temperature: 1.0,
                    threshold: energy_threshold,
                },
            );
            let expected: Vec<(usize, usize)> = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    r.confidence > thresholds.per_class[r.predicted]
                        && r.energy < energy_threshold
                })
                .map(|(i, r)| (i, r.predicted))
                .collect();
            let got: Vec<(usize, usize)> =
                selection.pseudo.iter().map(|p| (p.index, p.label)).collect();
            assert_eq!(got, expected, "instance {instance} hybrid selection");

            // Exact disjoint cover of the pool.
            let mut seen = vec![false; samples.len()];
            for p in &selection.pseudo {
                seen[p.index] = true;
            }
            for u in &selection.unpseudo {
                assert!(!seen[u.index], "index in both sets");
                seen[u.index] = true;
            }
            assert!(seen.iter().all(|&s| s), "selection must cover the pool");
        }
    }
    println!(
        "[PASS] criterion 3: hybrid and warm-up selection reproduce the per-sample brute-force \
         filter exactly on 20 instances; the two sets partition the pool"
    );
}

// --- criterion 4: adaptive threshold analytic cases --------------------------

#[test]
fn criterion_04_adaptive_threshold_analytic_cases() {
    let hand = adaptive_thresholds(
        &ClassDifficulty {
            confident: vec![30, 10],
            rest: 20,
            total: 60,
        },
        0.95,
    );
    assert!(!hand.warmup_active);
    assert!((hand.per_class[0] - 0.95).abs() < 1e-12, "{}", hand.per_class[0]);
    assert!((hand.per_class[1] - 0.19).abs() < 1e-12, "{}", hand.per_class[1]);

    let degenerate = adaptive_thresholds(
        &ClassDifficulty {
            confident: vec![0; 6],
            rest: 120,
            total: 120,
        },
        0.95,
    );
    assert!(degenerate.warmup_active);
    assert!(degenerate.per_class.iter().all(|&t| t == 0.0));
    println!(
        "[PASS] criterion 4: hand-evaluated thresholds reproduced to 1e-12 \
         ([30,10]/20 -> [0.95, 0.19]; all-zero counts -> warm-up with zero thresholds)"
    );
}

// --- criteria 5-7: training-level claims --------------------------------------

fn default_config(method: MethodMode) -> ExperimentConfig {
    ExperimentConfig {
        method,
        ..ExperimentConfig::default()
    }
}

fn run_seeds(cfg: &ExperimentConfig, dir: &std::path::Path) -> Vec<RunManifest> {
    cfg.seeds
        .iter()
        .map(|&s| run_experiment(cfg, s, dir).expect("run failed"))
        .collect()
}

struct SharedRuns {
    catchfed: Vec<RunManifest>,
    baseline: Vec<RunManifest>,
    no_energy_gate: Vec<RunManifest>,
    _dir: tempfile::TempDir,
}

fn shared_runs() -> &'static SharedRuns {
    static RUNS: OnceLock<SharedRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let catchfed = run_seeds(&default_config(MethodMode::Catchfed), &dir.path().join("c"));
        let baseline = run_seeds(
            &default_config(MethodMode::FixedBaseline),
            &dir.path().join("b"),
        );
        let mut no_gate = default_config(MethodMode::Catchfed);
        no_gate.energy_threshold = f64::INFINITY;
        let no_energy_gate = run_seeds(&no_gate, &dir.path().join("g"));
        SharedRuns {
            catchfed,
            baseline,
            no_energy_gate,
            _dir: dir,
        }
    })
}

#[test]
fn criterion_05_warmup_round_one_utilization() {
    let dir = tempfile::tempdir().unwrap();
    for seed in [1u64, 2, 3] {
        let mut adaptive = default_config(MethodMode::Catchfed);
        adaptive.rounds = 1;
        adaptive.seeds = vec![seed];
        let m = run_experiment(&adaptive, seed, &dir.path().join(format!("a{seed}"))).unwrap();
        assert!(
            m.summary.final_utilization_ratio >= 0.99,
            "catchfed round-1 utilization {} < 0.99 (seed {seed})",
            m.summary.final_utilization_ratio
        );

        let mut fixed = default_config(MethodMode::FixedBaseline);
        fixed.rounds = 1;
        fixed.seeds = vec![seed];
        let m = run_experiment(&fixed, seed, &dir.path().join(format!("f{seed}"))).unwrap();
        assert!(
            m.summary.final_utilization_ratio <= 0.05,
            "baseline round-1 utilization {} > 0.05 (seed {seed})",
            m.summary.final_utilization_ratio
        );
    }
    println!(
        "[PASS] criterion 5: round-1 utilization >= 0.99 (adaptive warm-up) and <= 0.05 \
         (fixed threshold) across 3 seeds"
    );
}

#[test]
fn criterion_06_directional_accuracy_gap() {
    let start = Instant::now();
    let runs = shared_runs();
    let mean = |ms: &[RunManifest], f: fn(&RunManifest) -> f64| -> f64 {
        ms.iter().map(f).sum::<f64>() / ms.len() as f64
    };
    let catchfed_best = mean(&runs.catchfed, |m| m.summary.best_accuracy);
    let baseline_best = mean(&runs.baseline, |m| m.summary.best_accuracy);
    assert!(
        catchfed_best >= baseline_best + 0.02,
        "mean best accuracy {catchfed_best:.4} vs baseline {baseline_best:.4}: \
         gap below 2 percentage points"
    );
    let catchfed_pl = mean(&runs.catchfed, |m| m.summary.final_pl_accuracy);
    let baseline_pl = mean(&runs.baseline, |m| m.summary.final_pl_accuracy);
    assert!(
        catchfed_pl >= baseline_pl,
        "final pseudo-label accuracy {catchfed_pl:.4} vs baseline {baseline_pl:.4}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "budget 10 min, took {elapsed:?}");
    println!(
        "[PASS] criterion 6: mean best accuracy {catchfed_best:.4} vs baseline \
         {baseline_best:.4} (gap {:+.1} pp >= 2 pp); final pseudo-label accuracy \
         {catchfed_pl:.4} >= {baseline_pl:.4}; runtime {elapsed:.1?}",
        (catchfed_best - baseline_best) * 100.0
    );
}

#[test]
fn criterion_07_hybrid_gate_label_quality() {
    let runs = shared_runs();
    let gated: f64 = runs
        .catchfed
        .iter()
        .map(|m| m.summary.final_wrong_label_ratio)
        .sum::<f64>()
        / runs.catchfed.len() as f64;
    let ungated: f64 = runs
        .no_energy_gate
        .iter()
        .map(|m| m.summary.final_wrong_label_ratio)
        .sum::<f64>()
        / runs.no_energy_gate.len() as f64;
    assert!(
        gated <= ungated + 1e-12,
        "wrong-label ratio with the energy gate {gated:.4} vs without {ungated:.4}"
    );
    println!(
        "[PASS] criterion 7: final wrong-label ratio with the energy gate {gated:.4} <= \
         {ungated:.4} without it (3-seed mean)"
    );
}

// --- criterion 8: calibration oracle ------------------------------------------

#[test]
fn criterion_08_ece_oracle() {
    let bins = 15;
    let mut rng = child_rng(90_008, "acceptance-ece", 0, 0);
    for case in 0..100 {
        let n = rng.random_range(50..400usize);
        let preds: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.random::<f64>(), rng.random::<bool>()))
            .collect();
        let (got, stats) = ece(&preds, bins).unwrap();

        // Brute-force route: explicit edge comparisons.
        let mut expect = 0.0;
        for b in 0..bins {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            let members: Vec<&(f64, bool)> = preds
                .iter()
                .filter(|(c, _)| *c >= lo && (*c < hi || (b == bins - 1 && *c <= hi)))
                .collect();
            if members.is_empty() {
                continue;
            }
            let conf: f64 =
                members.iter().map(|(c, _)| c).sum::<f64>() / members.len() as f64;
            let acc = members.iter().filter(|(_, ok)| *ok).count() as f64 / members.len() as f64;
            expect += members.len() as f64 / n as f64 * (acc - conf).abs();
        }
        assert!(
            (got - expect).abs() <= 1e-12,
            "case {case}: {got} vs brute-force {expect}"
        );
        assert_eq!(stats.iter().map(|s| s.count).sum::<usize>(), n);
    }

    // Perfectly calibrated construction: dyadic confidences whose bin
    // accuracy equals the bin confidence exactly.
    let mut preds = Vec::new();
    for (conf, correct_of_four) in [(0.25, 1), (0.5, 2), (0.75, 3)] {
        for i in 0..60 {
            preds.push((conf, i % 4 < correct_of_four));
        }
    }
    let (zero, _) = ece(&preds, bins).unwrap();
    assert_eq!(zero, 0.0, "perfectly calibrated set must give exactly 0");
    println!(
        "[PASS] criterion 8: binned calibration error matches the brute-force oracle to 1e-12 \
         on 100 random sets; the perfectly calibrated construction yields exactly 0"
    );
}

// --- criterion 9: aggregation algebra -----------------------------------------

#[test]
fn criterion_09_aggregation_algebra() {
    use catchfed_core::data::LabeledDataset;
    use catchfed_core::federation::{aggregate, momentum_aggregate, ClientResult, ServerState};
    use catchfed_core::metrics::LossMeans;
    use catchfed_core::nn::CosineSchedule;
    use catchfed_core::ssfl::Selection;

    let mk = |id: usize, w: f64, p: &ModelParams| ClientResult {
        client_id: id,
        params: p.clone(),
        weight: w,
        pool_size: 1,
        selection: Selection::default(),
        warmup: false,
        losses: LossMeans::default(),
    };
    let dummy_labeled = LabeledDataset {
        features: vec![vec![0.0, 0.0]],
        labels: vec![0],
        classes: 2,
    };
    let mut rng = child_rng(90_009, "acceptance-agg", 0, 0);
    for case in 0..10u64 {
        let params = ModelParams::init(&[2, 3, 2], false, 4_000 + case).unwrap();
        let weights: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..5.0)).collect();

        // Identical params, arbitrary positive weights: exact identity.
        let results: Vec<ClientResult> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| mk(i, w, &params))
            .collect();
        assert_eq!(aggregate(&results).unwrap(), params);

        // Round one of momentum aggregation (zero velocity buffer) equals
        // the plain aggregate exactly.
        let others: Vec<ModelParams> = (0..3)
            .map(|i| ModelParams::init(&[2, 3, 2], false, 5_000 + case * 10 + i).unwrap())
            .collect();
        let mixed: Vec<ClientResult> = others
            .iter()
            .enumerate()
            .map(|(i, p)| mk(i, weights[i], p))
            .collect();
        let plain = aggregate(&mixed).unwrap();
        let mut state = ServerState::new(
            params.clone(),
            dummy_labeled.clone(),
            CosineSchedule::new(0.03, 10),
        );
        momentum_aggregate(&mut state, plain.clone(), 0.5);
        assert_eq!(state.params, plain, "round-1 momentum must equal the plain aggregate");

        // With beta 0 the momentum step reduces to plain aggregation even
        // with a warm velocity buffer.
        momentum_aggregate(&mut state, params.clone(), 0.5); // warm the buffer
        momentum_aggregate(&mut state, plain.clone(), 0.0);
        assert_eq!(state.params, plain, "beta=0 must reduce to plain aggregation");
    }
    println!(
        "[PASS] criterion 9: aggregation identity, round-1 momentum and beta=0 reduction hold \
         exactly on 10 random cases"
    );
}

// --- criterion 10: byte-level determinism --------------------------------------

#[test]
fn criterion_10_determinism_across_worker_pools() {
    let mut cfg = default_config(MethodMode::Catchfed);
    cfg.seeds = vec![1];
    let dir = tempfile::tempdir().unwrap();

    let run_in_pool = |threads: usize, sub: &str| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let path = dir.path().join(sub);
        pool.install(|| run_experiment(&cfg, 1, &path).unwrap());
        std::fs::read(path.join("seed_1").join("rounds.jsonl")).unwrap()
    };

    let single = run_in_pool(1, "single");
    let pooled = run_in_pool(4, "pooled");
    assert_eq!(single, pooled, "round logs differ across worker-pool sizes");
    let again = run_in_pool(4, "again");
    assert_eq!(single, again, "round logs differ across repeated runs");
    assert!(!single.is_empty());
    println!(
        "[PASS] criterion 10: round logs are byte-identical across repeated runs and worker \
         pools of size 1 and 4 ({} bytes)",
        single.len()
    );
}

// --- criterion 11: partition properties ----------------------------------------

#[test]
fn criterion_11_dirichlet_partition_properties() {
    // Exact cover and disjointness on 50 random configurations.
    let mut rng = child_rng(90_011, "acceptance-dir", 0, 0);
    for case in 0..50u64 {
        let classes = rng.random_range(3..=8usize);
        let clients = rng.random_range(2..=10usize);
        let alpha = 10f64.powf(rng.random_range(-1.3..6.0));
        let blob = gen_blobs(classes, 3, rng.random_range(20..60usize), 2.0, 1.0, 6_000 + case);
        let (_, pool) = split_server_labels(&blob, classes, 6_500 + case).unwrap();
        let parts = dirichlet_partition(
            &pool,
            &PartitionSpec {
                clients,
                mode: PartitionMode::Dirichlet { alpha },
                seed: 7_000 + case,
            },
        )
        .unwrap();
        assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), pool.len());
        let mut seen = std::collections::BTreeSet::new();
        for p in &parts {
            assert!(!p.is_empty());
            for x in p.samples() {
                let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                assert!(seen.insert(key), "sample assigned to two clients");
            }
        }
    }

    // Near-IID limit: alpha 1e6 keeps every client's class histogram within
    // 5% total variation of the global proportions (large pool).
    let blob = gen_blobs(6, 3, 300, 2.0, 1.0, 8_000);
    let (_, pool) = split_server_labels(&blob, 6, 8_001).unwrap();
    for s in 0..20u64 {
        let parts = dirichlet_partition(
            &pool,
            &PartitionSpec {
                clients: 5,
                mode: PartitionMode::Dirichlet { alpha: 1e6 },
                seed: 9_000 + s,
            },
        )
        .unwrap();
        for p in &parts {
            let mut hist = [0.0f64; 6];
            for &y in p.hidden_truth() {
                hist[y] += 1.0;
            }
            let n: f64 = hist.iter().sum();
            let tv: f64 = hist.iter().map(|&c| (c / n - 1.0 / 6.0).abs()).sum::<f64>() / 2.0;
            assert!(tv < 0.05, "total variation {tv} at alpha=1e6");
        }
    }

    // Mean per-client label entropy grows strictly with alpha.
    let mean_entropy = |alpha: f64| -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for s in 0..20u64 {
            let parts = dirichlet_partition(
                &pool,
                &PartitionSpec {
                    clients: 5,
                    mode: PartitionMode::Dirichlet { alpha },
                    seed: 10_000 + s,
                },
            )
            .unwrap();
            for p in &parts {
                let mut hist = [0.0f64; 6];
                for &y in p.hidden_truth() {
                    hist[y] += 1.0;
                }
                let n: f64 = hist.iter().sum();
                acc += -hist
                    .iter()
                    .filter(|&&c| c > 0.0)
                    .map(|&c| (c / n) * (c / n).ln())
                    .sum::<f64>();
                count += 1;
            }
        }
        acc / count as f64
    };
    let e01 = mean_entropy(0.1);
    let e03 = mean_entropy(0.3);
    let e_inf = mean_entropy(1e6);
    assert!(
        e01 < e03 && e03 < e_inf,
        "entropy not strictly increasing: {e01} {e03} {e_inf}"
    );
    println!(
        "[PASS] criterion 11: exact cover/disjointness on 50 configs; alpha=1e6 within 5% TV \
         of global proportions; label entropy strictly increasing in alpha \
         ({e01:.3} < {e03:.3} < {e_inf:.3})"
    );
}
