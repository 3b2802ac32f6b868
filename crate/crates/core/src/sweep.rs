//! The experiment grid: every neuron count, astrocyte proportion and
//! replicate gets its own reservoir and readout, trained on one shared
//! dataset.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::curves::{learning_rate, plateau_loss_with, PlateauConfig, MIN_PLATEAU_EPOCHS};
use crate::error::{Error, Result};
use crate::lorenz::Dataset;
use crate::readout::{train, TrainConfig};
use crate::record::{write_records_csv, RunRecord};
use crate::reservoir::{build, ReservoirConfig, ReservoirSpec};
use crate::seed;

pub const MAX_PROPORTION_INDEX: u32 = 10;

/// Astrocytes for `n_neurons` at proportion index `n`:
/// `(0.75 + 0.25 n) * n_neurons`, rounded half to even.
pub fn astrocyte_count(n_neurons: usize, n: u32) -> Result<usize> {
    if !(1..=MAX_PROPORTION_INDEX).contains(&n) {
        return Err(Error::InvalidConfig(format!(
            "proportion index {n} outside 1..={MAX_PROPORTION_INDEX}"
        )));
    }
    // (3 + n) * N / 4 in integers, so halves are detected exactly.
    let num = (3 + n as usize) * n_neurons;
    let (q, r) = (num / 4, num % 4);
    let rounded = match r {
        0 | 1 => q,
        3 => q + 1,
        _ => q + (q % 2),
    };
    Ok(rounded.max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub neuron_counts: Vec<usize>,
    pub proportion_indices: Vec<u32>,
    pub seeds_per_cell: usize,
    pub reservoir: ReservoirConfig,
    pub training: TrainConfig,
    pub plateau: PlateauConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            neuron_counts: vec![10, 50, 200, 300, 400],
            proportion_indices: (1..=MAX_PROPORTION_INDEX).collect(),
            seeds_per_cell: 2,
            reservoir: ReservoirConfig::default(),
            training: TrainConfig::default(),
            plateau: PlateauConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.neuron_counts.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidConfig(format!("neuron count {n} is below 2")));
        }
        for &n in &self.proportion_indices {
            astrocyte_count(2, n)?;
        }
        if self.seeds_per_cell == 0 {
            return Err(Error::InvalidConfig("seeds_per_cell must be positive".into()));
        }
        if self.training.epochs < MIN_PLATEAU_EPOCHS {
            return Err(Error::InvalidConfig(format!(
                "sweeps need at least {MIN_PLATEAU_EPOCHS} epochs for the plateau loss"
            )));
        }
        self.training.validate()
    }

    /// Every (neurons, proportion index, replicate) triple in output order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &n_neurons in &self.neuron_counts {
            for &index in &self.proportion_indices {
                for replicate in 0..self.seeds_per_cell {
                    cells.push(Cell {
                        n_neurons,
                        proportion_index: index,
                        replicate,
                    });
                }
            }
        }
        cells
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub n_neurons: usize,
    pub proportion_index: u32,
    pub replicate: usize,
}

impl Cell {
    pub fn seed(&self, base: u64) -> u64 {
        seed::derive(
            base,
            "sweep-run",
            &[self.n_neurons as u64, self.proportion_index as u64, self.replicate as u64],
        )
    }

    /// Directory of the run's loss files, relative to the sweep output.
    pub fn dir_name(&self) -> String {
        format!("runs/n{}_p{}_r{}", self.n_neurons, self.proportion_index, self.replicate)
    }
}

/// Trains one cell and writes its loss curves under `out`. Divergence is
/// reported in the record; every other failure is returned.
pub fn run_cell(cell: Cell, cfg: &SweepConfig, dataset: &Dataset, base_seed: u64, out: &Path) -> Result<RunRecord> {
    let n_astrocytes = astrocyte_count(cell.n_neurons, cell.proportion_index)?;
    let run_seed = cell.seed(base_seed);
    let spec = ReservoirSpec::new(
        cell.n_neurons,
        n_astrocytes,
        seed::derive(run_seed, "reservoir", &[]),
        cfg.reservoir.clone(),
    );
    let rel = cell.dir_name();
    let run_dir = out.join(&rel);
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let batch_loss_path = format!("{rel}/loss_batches.csv");
    let epoch_loss_path = format!("{rel}/loss_epochs.csv");
    let mut record = RunRecord {
        n_neurons: cell.n_neurons,
        n_astrocytes,
        ratio: n_astrocytes as f64 / cell.n_neurons as f64,
        proportion_index: cell.proportion_index,
        replicate: cell.replicate,
        seed: run_seed,
        train_slope: f64::NAN,
        val_slope: f64::NAN,
        train_plateau: f64::NAN,
        val_plateau: f64::NAN,
        train_plateau_start: 0,
        val_plateau_start: 0,
        plateau_fallback: false,
        diverged: false,
        batch_loss_path,
        epoch_loss_path,
    };
    let weights = build(&spec)?;
    let outcome = match train(&weights, &spec, dataset, &cfg.training, seed::derive(run_seed, "readout", &[])) {
        Ok(o) => o,
        Err(Error::Divergence(_)) => {
            record.diverged = true;
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    let h = &outcome.history;
    h.write_batch_csv(&out.join(&record.batch_loss_path))?;
    h.write_epoch_csv(&out.join(&record.epoch_loss_path))?;
    let train_plateau = plateau_loss_with(&h.epoch_train, &cfg.plateau)?;
    let val_plateau = plateau_loss_with(&h.epoch_val, &cfg.plateau)?;
    record.train_slope = learning_rate(&h.epoch_train)?;
    record.val_slope = learning_rate(&h.epoch_val)?;
    record.train_plateau = train_plateau.mean;
    record.val_plateau = val_plateau.mean;
    record.train_plateau_start = train_plateau.start_epoch;
    record.val_plateau_start = val_plateau.start_epoch;
    record.plateau_fallback = train_plateau.fallback || val_plateau.fallback;
    Ok(record)
}

/// Runs every cell on a pool of `jobs` threads and writes `records.csv`
/// under `out`. Records come back in grid order whatever the schedule.
pub fn run_sweep(cfg: &SweepConfig, dataset: &Dataset, base_seed: u64, jobs: usize, out: &Path) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::InvalidConfig(
            "sweeps need non-empty training and validation splits".into(),
        ));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let records = pool.install(|| {
        cfg.cells()
            .into_par_iter()
            .map(|cell| run_cell(cell, cfg, dataset, base_seed, out))
            .collect::<Result<Vec<_>>>()
    })?;
    write_records_csv(&out.join("records.csv"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorenz::{generate_dataset, DatasetConfig};

    #[test]
    fn proportion_schedule_examples() {
        assert_eq!(astrocyte_count(400, 1).unwrap(), 400);
        assert_eq!(astrocyte_count(200, 5).unwrap(), 400);
        assert_eq!(astrocyte_count(10, 10).unwrap(), 32);
        // 2.75 * 2 = 5.5 rounds to 6; 1.25 * 2 = 2.5 rounds to 2.
        assert_eq!(astrocyte_count(2, 8).unwrap(), 6);
        assert_eq!(astrocyte_count(2, 2).unwrap(), 2);
        assert!(astrocyte_count(10, 0).is_err());
        assert!(astrocyte_count(10, 11).is_err());
    }

    #[test]
    fn schedule_matches_float_rounding_oracle() {
        for n_neurons in 1..500usize {
            for n in 1..=10u32 {
                let exact = (0.75 + 0.25 * n as f64) * n_neurons as f64;
                let oracle = exact.round_ties_even().max(1.0) as usize;
                assert_eq!(astrocyte_count(n_neurons, n).unwrap(), oracle);
                let ratio = astrocyte_count(n_neurons, n).unwrap() as f64 / n_neurons as f64;
                if n_neurons >= 4 {
                    assert!((0.875..=3.375).contains(&ratio));
                }
            }
        }
    }

    fn tiny() -> (SweepConfig, Dataset) {
        let data = generate_dataset(
            &DatasetConfig {
                trajectories: 2,
                windows_per_trajectory: 10,
                transient_steps: 100,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let mut cfg = SweepConfig {
            neuron_counts: vec![4, 6],
            proportion_indices: vec![1, 5],
            seeds_per_cell: 2,
            ..Default::default()
        };
        cfg.reservoir.presentations = 3;
        cfg.training.hidden = [8, 8];
        cfg.training.epochs = 20;
        (cfg, data)
    }

    #[test]
    fn grid_is_complete_ordered_and_schedule_independent() {
        let (cfg, data) = tiny();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let serial = run_sweep(&cfg, &data, 1, 1, a.path()).unwrap();
        let parallel = run_sweep(&cfg, &data, 1, 4, b.path()).unwrap();
        assert_eq!(parallel.len(), serial.len());
        assert_eq!(serial.len(), 8);
        let keys: Vec<_> = serial.iter().map(|r| (r.n_neurons, r.proportion_index, r.replicate)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(
            fs::read(a.path().join("records.csv")).unwrap(),
            fs::read(b.path().join("records.csv")).unwrap()
        );
        for r in &serial {
            assert_eq!(r.ratio, r.n_astrocytes as f64 / r.n_neurons as f64);
            assert!(r.diverged || r.train_slope.is_finite());
            assert!(a.path().join(&r.epoch_loss_path).is_file());
        }
    }

    #[test]
    fn empty_proportion_list_gives_no_records() {
        let (mut cfg, data) = tiny();
        cfg.proportion_indices.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(run_sweep(&cfg, &data, 1, 1, dir.path()).unwrap().is_empty());
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let (cfg, _) = tiny();
        let bad = [
            SweepConfig { neuron_counts: vec![1], ..cfg.clone() },
            SweepConfig { proportion_indices: vec![11], ..cfg.clone() },
            SweepConfig { seeds_per_cell: 0, ..cfg.clone() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        }
        let mut short = cfg;
        short.training.epochs = 19;
        assert!(short.validate().is_err());
    }
}
