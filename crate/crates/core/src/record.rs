//! One sweep cell's outcome, and the CSV table that holds many of them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::csv_err;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub n_neurons: usize,
    pub n_astrocytes: usize,
    /// `n_astrocytes / n_neurons`.
    pub ratio: f64,
    pub proportion_index: u32,
    pub replicate: usize,
    pub seed: u64,
    pub train_slope: f64,
    pub val_slope: f64,
    pub train_plateau: f64,
    pub val_plateau: f64,
    pub train_plateau_start: usize,
    pub val_plateau_start: usize,
    pub plateau_fallback: bool,
    pub diverged: bool,
    pub batch_loss_path: String,
    pub epoch_loss_path: String,
}

impl RunRecord {
    pub fn total_units(&self) -> usize {
        self.n_neurons + self.n_astrocytes
    }

    pub fn is_usable(&self) -> bool {
        !self.diverged && self.train_slope.is_finite() && self.val_slope.is_finite()
    }
}

/// Quantity regressed or density-estimated against the unit counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    TrainSlope,
    ValSlope,
    TrainPlateau,
    ValPlateau,
}

impl Target {
    pub const ALL: [Target; 4] = [
        Target::TrainSlope,
        Target::ValSlope,
        Target::TrainPlateau,
        Target::ValPlateau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::TrainSlope => "train_slope",
            Target::ValSlope => "val_slope",
            Target::TrainPlateau => "train_plateau",
            Target::ValPlateau => "val_plateau",
        }
    }

    pub fn value(self, r: &RunRecord) -> f64 {
        match self {
            Target::TrainSlope => r.train_slope,
            Target::ValSlope => r.val_slope,
            Target::TrainPlateau => r.train_plateau,
            Target::ValPlateau => r.val_plateau,
        }
    }
}

pub fn write_records_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}
