//! Deterministic fixtures shared by the benchmarks.

use astrolsm::analysis::Factor;
use astrolsm::lorenz::{generate_dataset, Dataset, DatasetConfig};
use astrolsm::record::RunRecord;
use astrolsm::reservoir::{build, ReservoirConfig, ReservoirSpec, ReservoirWeights};
use astrolsm::sweep::astrocyte_count;
use ndarray::Array2;

pub fn small_dataset() -> Dataset {
    generate_dataset(
        &DatasetConfig {
            trajectories: 2,
            windows_per_trajectory: 20,
            ..Default::default()
        },
        1,
    )
    .expect("dataset")
}

pub fn reservoir(n_neurons: usize, index: u32) -> (ReservoirSpec, ReservoirWeights) {
    let a = astrocyte_count(n_neurons, index).expect("proportion index");
    let spec = ReservoirSpec::new(n_neurons, a, 3, ReservoirConfig::default());
    let w = build(&spec).expect("reservoir");
    (spec, w)
}

/// Sweep-like records whose slope depends on the total unit count.
pub fn synthetic_records(count: usize) -> Vec<RunRecord> {
    (0..count)
        .map(|k| {
            let n = [10usize, 50, 200, 300, 400][k % 5];
            let idx = (k / 5 % 10) as u32 + 1;
            let a = astrocyte_count(n, idx).unwrap();
            let wobble = ((k * 7919) % 101) as f64 / 101.0 - 0.5;
            let slope = -1e-4 * (n + a) as f64 + 1e-3 * wobble;
            RunRecord {
                n_neurons: n,
                n_astrocytes: a,
                ratio: a as f64 / n as f64,
                proportion_index: idx,
                replicate: k / 50,
                seed: k as u64,
                train_slope: slope,
                val_slope: slope,
                train_plateau: 0.1,
                val_plateau: 0.1,
                train_plateau_start: 20,
                val_plateau_start: 20,
                plateau_fallback: false,
                diverged: false,
                batch_loss_path: String::new(),
                epoch_loss_path: String::new(),
            }
        })
        .collect()
}

pub fn design(records: &[RunRecord]) -> Array2<f64> {
    Array2::from_shape_fn((records.len(), 3), |(i, j)| Factor::ALL[j].value(&records[i]))
}
