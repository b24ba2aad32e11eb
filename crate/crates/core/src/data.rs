//! Synthetic datasets, server/client splits, and vector-space augmentations.
//!
//! The simulator replaces image benchmarks with Gaussian blob classification:
//! `K` clusters with random unit-norm centers scaled by a separation factor.
//! Labels exist on the server only; the per-client pools keep their ground
//! truth as `hidden_truth`, which is readable exclusively by the metrics
//! layer — selection and training code only ever receives the feature view
//! via [`UnlabeledDataset::samples`].

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::seed;

/// Feature vectors with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Feature vectors whose labels are kept aside for evaluation only.
///
/// Training code receives `samples()`; `hidden_truth()` exists so the
/// metrics layer can score pseudo-labels, and must never feed a training
/// path.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    features: Vec<Vec<f64>>,
    hidden_truth: Vec<usize>,
    classes: usize,
}

impl UnlabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, hidden_truth: Vec<usize>, classes: usize) -> Result<Self> {
        if features.len() != hidden_truth.len() {
            return Err(Error::Shape {
                context: "unlabeled dataset truth",
                expected: features.len(),
                actual: hidden_truth.len(),
            });
        }
        Ok(Self {
            features,
            hidden_truth,
            classes,
        })
    }

    /// The training-visible view.
    pub fn samples(&self) -> &[Vec<f64>] {
        &self.features
    }

    /// Ground truth for scoring. Metrics only.
    pub fn hidden_truth(&self) -> &[usize] {
        &self.hidden_truth
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

/// How a pool is divided across clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMode {
    Iid,
    /// Per-class client proportions drawn from a symmetric Dirichlet; small
    /// concentrations produce strong label skew.
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub clients: usize,
    pub mode: PartitionMode,
    pub seed: u64,
}

/// Gaussian-noise stand-ins for weak/strong input augmentation. Strong
/// additionally zeroes a random fraction of coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub weak_noise_std: f64,
    pub strong_noise_std: f64,
    pub strong_mask_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_noise_std: 0.05,
            strong_noise_std: 0.2,
            strong_mask_fraction: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.weak_noise_std.is_nan() || self.weak_noise_std < 0.0 {
            problems.push("weak_noise_std must be >= 0");
        }
        if self.strong_noise_std.is_nan() || self.strong_noise_std < self.weak_noise_std {
            problems.push("strong_noise_std must be >= weak_noise_std");
        }
        if !(0.0..1.0).contains(&self.strong_mask_fraction) {
            problems.push("strong_mask_fraction must be in [0, 1)");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Everything a federated run consumes: server labels, per-client pools and
/// a held-out test set that is never partitioned.
#[derive(Debug, Clone)]
pub struct FedDatasets {
    pub server_labeled: LabeledDataset,
    pub clients: Vec<UnlabeledDataset>,
    pub test: LabeledDataset,
}

/// Full description of a synthetic federated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    pub separation: f64,
    pub spread: f64,
    pub labeled: usize,
    pub test_fraction: f64,
    pub clients: usize,
    pub partition: PartitionMode,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.classes < 2 {
            problems.push("classes must be >= 2".to_string());
        }
        if self.dims < 2 {
            problems.push("dims must be >= 2".to_string());
        }
        if self.per_class < 1 {
            problems.push("per_class must be >= 1".to_string());
        }
        if self.separation.is_nan() || self.separation <= 0.0 {
            problems.push("separation must be > 0".to_string());
        }
        if self.spread.is_nan() || self.spread < 0.0 {
            problems.push("spread must be >= 0".to_string());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            problems.push("test_fraction must be in [0, 1)".to_string());
        }
        if self.clients < 1 {
            problems.push("clients must be >= 1".to_string());
        }
        if let PartitionMode::Dirichlet { alpha } = self.partition {
            if alpha.is_nan() || alpha <= 0.0 {
                problems.push("alpha must be > 0".to_string());
            }
        }
        if self.labeled == 0 || !self.labeled.is_multiple_of(self.classes) {
            problems.push(format!(
                "labeled ({}) must be a positive multiple of classes ({})",
                self.labeled, self.classes
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// `K` Gaussian clusters: centers are random unit vectors scaled by
/// `separation`, samples add isotropic noise of standard deviation `spread`.
/// Samples are laid out class-by-class; downstream splits shuffle.
pub fn gen_blobs(
    classes: usize,
    dims: usize,
    per_class: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> LabeledDataset {
    let mut rng = seed::child_rng(seed, "blobs", 0, 0);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut centers = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut c: Vec<f64> = (0..dims).map(|_| unit.sample(&mut rng)).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        c.iter_mut().for_each(|v| *v *= separation / norm);
        centers.push(c);
    }
    let mut features = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let sample: Vec<f64> = center
                .iter()
                .map(|&c| c + spread * unit.sample(&mut rng))
                .collect();
            features.push(sample);
            labels.push(k);
        }
    }
    LabeledDataset {
        features,
        labels,
        classes,
    }
}

fn indices_by_class(labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    by_class
}

fn gather_labeled(src: &LabeledDataset, idx: &[usize]) -> LabeledDataset {
    LabeledDataset {
        features: idx.iter().map(|&i| src.features[i].clone()).collect(),
        labels: idx.iter().map(|&i| src.labels[i]).collect(),
        classes: src.classes,
    }
}

/// Class-balanced draw of `n_labeled` samples (`n_labeled / K` per class)
/// for the server; everything else becomes the unlabeled pool, keeping its
/// ground truth hidden.
pub fn split_server_labels(
    full: &LabeledDataset,
    n_labeled: usize,
    seed: u64,
) -> Result<(LabeledDataset, UnlabeledDataset)> {
    if !n_labeled.is_multiple_of(full.classes) {
        return Err(Error::Config(format!(
            "labeled count {} is not a multiple of the class count {}",
            n_labeled, full.classes
        )));
    }
    let per_class = n_labeled / full.classes;
    let mut rng = seed::child_rng(seed, "label-split", 0, 0);
    let mut server_idx = Vec::with_capacity(n_labeled);
    let mut pool_idx = Vec::new();
    for mut class_idx in indices_by_class(&full.labels, full.classes) {
        if class_idx.len() < per_class {
            return Err(Error::Config(format!(
                "class has only {} samples, need {} labeled",
                class_idx.len(),
                per_class
            )));
        }
        class_idx.shuffle(&mut rng);
        server_idx.extend_from_slice(&class_idx[..per_class]);
        pool_idx.extend_from_slice(&class_idx[per_class..]);
    }
    let server = gather_labeled(full, &server_idx);
    let pool = UnlabeledDataset::new(
        pool_idx.iter().map(|&i| full.features[i].clone()).collect(),
        pool_idx.iter().map(|&i| full.labels[i]).collect(),
        full.classes,
    )?;
    Ok((server, pool))
}

/// Stratified held-out split: roughly `fraction` of each class goes to the
/// second returned set.
pub fn split_test(
    full: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> (LabeledDataset, LabeledDataset) {
    let mut rng = seed::child_rng(seed, "test-split", 0, 0);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for mut class_idx in indices_by_class(&full.labels, full.classes) {
        class_idx.shuffle(&mut rng);
        let n_test = (fraction * class_idx.len() as f64).round() as usize;
        let n_test = n_test.min(class_idx.len());
        test_idx.extend_from_slice(&class_idx[..n_test]);
        train_idx.extend_from_slice(&class_idx[n_test..]);
    }
    (gather_labeled(full, &train_idx), gather_labeled(full, &test_idx))
}

fn gather_unlabeled(pool: &UnlabeledDataset, idx: &[usize]) -> UnlabeledDataset {
    UnlabeledDataset {
        features: idx.iter().map(|&i| pool.features[i].clone()).collect(),
        hidden_truth: idx.iter().map(|&i| pool.hidden_truth[i]).collect(),
        classes: pool.classes,
    }
}

/// Random equal-size split (sizes differ by at most one).
pub fn iid_partition(pool: &UnlabeledDataset, spec: &PartitionSpec) -> Result<Vec<UnlabeledDataset>> {
    if spec.clients == 0 {
        return Err(Error::Config("clients must be >= 1".into()));
    }
    if pool.len() < spec.clients {
        return Err(Error::Config(format!(
            "pool of {} samples cannot cover {} clients",
            pool.len(),
            spec.clients
        )));
    }
    let mut rng = seed::child_rng(spec.seed, "iid-partition", 0, 0);
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut rng);
    let base = pool.len() / spec.clients;
    let extra = pool.len() % spec.clients;
    let mut out = Vec::with_capacity(spec.clients);
    let mut cursor = 0;
    for c in 0..spec.clients {
        let size = base + usize::from(c < extra);
        out.push(gather_unlabeled(pool, &idx[cursor..cursor + size]));
        cursor += size;
    }
    Ok(out)
}

/// Label-skewed split: for every class, client proportions are drawn from a
/// symmetric Dirichlet and converted to counts by largest-remainder
/// rounding, so the clients exactly cover the pool. Draws where some client
/// ends up empty are retried (fresh proportions) up to 100 times.
pub fn dirichlet_partition(
    pool: &UnlabeledDataset,
    spec: &PartitionSpec,
) -> Result<Vec<UnlabeledDataset>> {
    let alpha = match spec.mode {
        PartitionMode::Dirichlet { alpha } => alpha,
        PartitionMode::Iid => {
            return Err(Error::Config(
                "dirichlet_partition called with an IID partition spec".into(),
            ))
        }
    };
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Config("alpha must be > 0".into()));
    }
    if spec.clients == 0 {
        return Err(Error::Config("clients must be >= 1".into()));
    }
    if pool.len() < spec.clients {
        return Err(Error::Config(format!(
            "pool of {} samples cannot cover {} clients",
            pool.len(),
            spec.clients
        )));
    }

    let by_class = indices_by_class(&pool.hidden_truth, pool.classes);
    for attempt in 0..100u64 {
        let mut rng = seed::child_rng(spec.seed, "dirichlet", attempt, 0);
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| Error::Config(format!("invalid Dirichlet concentration: {e}")))?;
        let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); spec.clients];
        for class_idx in &by_class {
            if class_idx.is_empty() {
                continue;
            }
            let mut shuffled = class_idx.clone();
            shuffled.shuffle(&mut rng);
            // Symmetric Dirichlet via normalized gamma draws.
            let mut props: Vec<f64> = (0..spec.clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = props.iter().sum();
            if total <= 0.0 {
                props = vec![1.0 / spec.clients as f64; spec.clients];
            } else {
                props.iter_mut().for_each(|p| *p /= total);
            }
            let counts = largest_remainder(&props, shuffled.len());
            let mut cursor = 0;
            for (client, &n) in counts.iter().enumerate() {
                assignment[client].extend_from_slice(&shuffled[cursor..cursor + n]);
                cursor += n;
            }
        }
        if assignment.iter().all(|a| !a.is_empty()) {
            return Ok(assignment
                .iter()
                .map(|idx| gather_unlabeled(pool, idx))
                .collect());
        }
    }
    Err(Error::Config(format!(
        "dirichlet partition left a client empty after 100 draws \
         (alpha {alpha}, clients {}, pool {})",
        spec.clients,
        pool.len()
    )))
}

/// Apportion `total` items proportionally to `props`, conserving the total
/// exactly: floor the quotas, then hand the remainder out by descending
/// fractional part (ties broken by lower index).
fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Dispatch on the partition mode.
pub fn partition(pool: &UnlabeledDataset, spec: &PartitionSpec) -> Result<Vec<UnlabeledDataset>> {
    match spec.mode {
        PartitionMode::Iid => iid_partition(pool, spec),
        PartitionMode::Dirichlet { .. } => dirichlet_partition(pool, spec),
    }
}

/// Additive isotropic Gaussian noise.
pub fn weak_augment<R: Rng>(x: &[f64], config: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    if config.weak_noise_std == 0.0 {
        return x.to_vec();
    }
    let noise = Normal::new(0.0, config.weak_noise_std).expect("valid std");
    x.iter().map(|&v| v + noise.sample(rng)).collect()
}

/// Larger Gaussian noise followed by zeroing a random fraction of
/// coordinates (count rounded to nearest).
pub fn strong_augment<R: Rng>(x: &[f64], config: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    let mut out = if config.strong_noise_std == 0.0 {
        x.to_vec()
    } else {
        let noise = Normal::new(0.0, config.strong_noise_std).expect("valid std");
        x.iter().map(|&v| v + noise.sample(rng)).collect()
    };
    let n_mask = (config.strong_mask_fraction * x.len() as f64).round() as usize;
    if n_mask > 0 {
        let masked = rand::seq::index::sample(rng, x.len(), n_mask.min(x.len()));
        for i in masked {
            out[i] = 0.0;
        }
    }
    out
}

/// Build the full federated dataset bundle from a synthetic spec: generate
/// blobs, cut the held-out test split, draw the server labels, partition the
/// remainder across clients. All sub-steps derive their seeds from `seed`.
pub fn build_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<FedDatasets> {
    spec.validate()?;
    let full = gen_blobs(
        spec.classes,
        spec.dims,
        spec.per_class,
        spec.separation,
        spec.spread,
        seed::child_seed(seed, "data-gen", 0, 0),
    );
    let (train, test) = split_test(&full, spec.test_fraction, seed::child_seed(seed, "data-test", 0, 0));
    let (server_labeled, pool) =
        split_server_labels(&train, spec.labeled, seed::child_seed(seed, "data-labels", 0, 0))?;
    let clients = partition(
        &pool,
        &PartitionSpec {
            clients: spec.clients,
            mode: spec.partition,
            seed: seed::child_seed(seed, "data-partition", 0, 0),
        },
    )?;
    Ok(FedDatasets {
        server_labeled,
        clients,
        test,
    })
}

// --- line-delimited dataset format -----------------------------------------
//
//   #catchfed-data v1 dims=<d> classes=<K>
//   <f1> <f2> ... <fd> l <label>     labeled sample
//   <f1> <f2> ... <fd> u <truth>     unlabeled sample with hidden truth
//
// Floats use Rust's shortest round-trip formatting, so export → import is
// exact.

const DATA_HEADER_PREFIX: &str = "#catchfed-data v1";

pub fn write_header(w: &mut impl Write, dims: usize, classes: usize) -> Result<()> {
    writeln!(w, "{DATA_HEADER_PREFIX} dims={dims} classes={classes}")?;
    Ok(())
}

pub fn write_labeled(w: &mut impl Write, ds: &LabeledDataset) -> Result<()> {
    for (x, y) in ds.features.iter().zip(&ds.labels) {
        for v in x {
            write!(w, "{v} ")?;
        }
        writeln!(w, "l {y}")?;
    }
    Ok(())
}

pub fn write_unlabeled(w: &mut impl Write, ds: &UnlabeledDataset) -> Result<()> {
    for (x, y) in ds.features.iter().zip(&ds.hidden_truth) {
        for v in x {
            write!(w, "{v} ")?;
        }
        writeln!(w, "u {y}")?;
    }
    Ok(())
}

/// Parse a dataset file; returns the labeled and unlabeled parts (either may
/// be empty).
pub fn read_dataset(r: impl BufRead) -> Result<(LabeledDataset, UnlabeledDataset)> {
    let mut dims = None;
    let mut classes = 0usize;
    let mut labeled = LabeledDataset {
        features: Vec::new(),
        labels: Vec::new(),
        classes: 0,
    };
    let mut unl_features = Vec::new();
    let mut unl_truth = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let n = lineno + 1;
        let parse_err = |message: String| Error::Parse { line: n, message };
        if let Some(rest) = line.strip_prefix(DATA_HEADER_PREFIX) {
            for field in rest.split_whitespace() {
                if let Some(v) = field.strip_prefix("dims=") {
                    dims = Some(
                        v.parse::<usize>()
                            .map_err(|e| parse_err(format!("bad dims: {e}")))?,
                    );
                } else if let Some(v) = field.strip_prefix("classes=") {
                    classes = v
                        .parse::<usize>()
                        .map_err(|e| parse_err(format!("bad classes: {e}")))?;
                }
            }
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(parse_err("expected features, marker and label".into()));
        }
        let marker = tokens[tokens.len() - 2];
        let label: usize = tokens[tokens.len() - 1]
            .parse()
            .map_err(|e| parse_err(format!("bad label: {e}")))?;
        let feats: Vec<f64> = tokens[..tokens.len() - 2]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(format!("bad feature: {e}")))?;
        if let Some(d) = dims {
            if feats.len() != d {
                return Err(parse_err(format!("expected {d} features, got {}", feats.len())));
            }
        }
        if classes > 0 && label >= classes {
            return Err(parse_err(format!("label {label} out of range (<{classes})")));
        }
        match marker {
            "l" => {
                labeled.features.push(feats);
                labeled.labels.push(label);
            }
            "u" => {
                unl_features.push(feats);
                unl_truth.push(label);
            }
            other => return Err(parse_err(format!("unknown marker {other:?}"))),
        }
    }
    labeled.classes = classes;
    let unlabeled = UnlabeledDataset::new(unl_features, unl_truth, classes)?;
    Ok((labeled, unlabeled))
}
