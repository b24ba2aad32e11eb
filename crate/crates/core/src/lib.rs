//! Desk-scale simulator of label-at-server semi-supervised federated learning.
//!
//! The server holds a small labeled dataset; every client holds only
//! unlabeled data. Each communication round the server fine-tunes the global
//! model on its labels, sampled clients pseudo-label their local data with
//! the received snapshot and train on the result, and the server aggregates
//! the returned weights with momentum.
//!
//! The crate provides several client-side labeling strategies:
//!
//! - a fixed-confidence-threshold baseline,
//! - client-aware adaptive per-class thresholds with a data-driven warm-up
//!   phase,
//! - hybrid selection that additionally gates pseudo-labels on an energy
//!   score (in-distribution filter),
//! - consistency regularization on the samples that fail selection, trained
//!   against their soft predictions.
//!
//! Everything is deterministic given the run seed: all randomness flows
//! through [`seed::child_seed`], so results are bit-identical across worker
//! pool sizes and process runs.

pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod ssfl;

pub use data::{
    AugmentConfig, FedDatasets, LabeledDataset, PartitionMode, PartitionSpec, SyntheticSpec,
    UnlabeledDataset,
};
pub use error::{Error, Result};
pub use federation::{
    ClientResult, MethodMode, RunConfig, ServerPasses, ServerState, WeightScheme,
};
pub use metrics::{BinStat, LossMeans, RoundReport};
pub use nn::{
    CosineSchedule, Gradients, LossSample, LossTerm, ModelParams, SgdState, LOG_EPS,
};
pub use ssfl::{
    AdaptiveThresholds, ClassDifficulty, EnergyConfig, MixupConfig, PseudoItem, Selection,
    UnpseudoItem,
};
