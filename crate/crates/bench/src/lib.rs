//! Shared fixtures for the benchmark targets.

use catchfed_core::data::{build_synthetic, FedDatasets, PartitionMode, SyntheticSpec};
use catchfed_core::federation::RunConfig;

/// The default experiment shrunk to a benchmark-sized workload.
pub fn bench_config() -> (RunConfig, FedDatasets) {
    let spec = SyntheticSpec {
        classes: 6,
        dims: 16,
        per_class: 120,
        separation: 2.2,
        spread: 1.2,
        labeled: 30,
        test_fraction: 0.2,
        clients: 8,
        partition: PartitionMode::Iid,
    };
    let data = build_synthetic(&spec, 7).expect("bench dataset");
    let config = RunConfig {
        rounds: 2,
        clients: 8,
        participation: 0.5,
        train_iter: 10,
        warmup_iter: 10,
        ..RunConfig::default()
    };
    (config, data)
}
