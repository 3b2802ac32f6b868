//! The single JSON document that configures every stage.

use std::fs;
use std::path::{Path, PathBuf};

use astrolsm::analysis::{AnalysisConfig, PlateauConfig};
use astrolsm::lorenz::DatasetConfig;
use astrolsm::readout::TrainConfig;
use astrolsm::reservoir::ReservoirConfig;
use astrolsm::sweep::SweepConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Unit counts for a single `train` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSize {
    pub n_neurons: usize,
    pub n_astrocytes: usize,
}

impl Default for NetworkSize {
    fn default() -> Self {
        NetworkSize {
            n_neurons: 50,
            n_astrocytes: 100,
        }
    }
}

/// Grid of the sweep. Reservoir and training settings come from their own
/// sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub neuron_counts: Vec<usize>,
    pub proportion_indices: Vec<u32>,
    pub seeds_per_cell: usize,
    pub plateau: PlateauConfig,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        SweepSection {
            neuron_counts: d.neuron_counts,
            proportion_indices: d.proportion_indices,
            seeds_per_cell: d.seeds_per_cell,
            plateau: d.plateau,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Existing dataset manifest for `train` and `sweep`; a fresh dataset is
    /// generated from `lorenz` when absent.
    pub dataset: Option<PathBuf>,
    pub lorenz: DatasetConfig,
    pub network: NetworkSize,
    pub reservoir: ReservoirConfig,
    pub training: TrainConfig,
    pub sweep: SweepSection,
    pub analysis: AnalysisConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            neuron_counts: self.sweep.neuron_counts.clone(),
            proportion_indices: self.sweep.proportion_indices.clone(),
            seeds_per_cell: self.sweep.seeds_per_cell,
            reservoir: self.reservoir.clone(),
            training: self.training.clone(),
            plateau: self.sweep.plateau,
        }
    }
}
