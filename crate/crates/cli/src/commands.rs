//! One function per subcommand. Each writes its artifacts plus the resolved
//! configuration and a version stamp into its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use astrolsm::analysis::{analyze, curves, write_report};
use astrolsm::lorenz::{generate_dataset, Dataset};
use astrolsm::readout::{train, write_forecast_csv};
use astrolsm::record::read_records_csv;
use astrolsm::reservoir::{build, ReservoirSpec};
use astrolsm::seed;
use astrolsm::sweep::run_sweep;
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::plot;

pub const DATASET_STEM: &str = "dataset";

/// Settings shared by every subcommand after flags are applied.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub jobs: usize,
}

impl Context {
    /// Applies flag overrides: `--seed` replaces the config seed, `--out`
    /// replaces `output_dir`, which in turn replaces `default_out`.
    pub fn resolve(
        config: PipelineConfig,
        seed: Option<u64>,
        out: Option<PathBuf>,
        jobs: usize,
        default_out: &str,
    ) -> Self {
        let mut config = config;
        if let Some(s) = seed {
            config.seed = s;
        }
        let out = out
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(default_out));
        config.output_dir = Some(out.clone());
        Context {
            config,
            out,
            jobs: jobs.max(1),
        }
    }

    fn create_out(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))
    }

    /// Writes `config.json` (reusable with `--config`) and `stamp.json`.
    fn stamp(&self, command: &str) -> CliResult<()> {
        write_json(&self.out.join("config.json"), &self.config)?;
        write_json(
            &self.out.join("stamp.json"),
            &json!({
                "tool": "astrolsm",
                "version": env!("CARGO_PKG_VERSION"),
                "command": command,
                "seed": self.config.seed,
            }),
        )
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn dataset_seed(base: u64) -> u64 {
    seed::derive(base, "dataset", &[])
}

/// Loads the configured dataset, or generates one and saves it next to the
/// other outputs.
fn obtain_dataset(ctx: &Context, flag: Option<&Path>) -> CliResult<Dataset> {
    match flag.or(ctx.config.dataset.as_deref()) {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::MissingInput {
                    path: path.to_path_buf(),
                    what: "dataset manifest",
                });
            }
            Ok(Dataset::load(path)?)
        }
        None => {
            let data = generate_dataset(&ctx.config.lorenz, dataset_seed(ctx.config.seed))?;
            data.save(&ctx.out, DATASET_STEM)?;
            Ok(data)
        }
    }
}

pub fn generate(ctx: &Context) -> CliResult<PathBuf> {
    ctx.config.lorenz.validate()?;
    ctx.create_out()?;
    let data = generate_dataset(&ctx.config.lorenz, dataset_seed(ctx.config.seed))?;
    data.save(&ctx.out, DATASET_STEM)?;
    ctx.stamp("generate")?;
    Ok(astrolsm::store::manifest_path(&ctx.out, DATASET_STEM))
}

#[derive(Serialize)]
struct TrainSummary {
    n_neurons: usize,
    n_astrocytes: usize,
    epochs: usize,
    first_train_loss: f64,
    final_train_loss: f64,
    final_val_loss: f64,
    train_slope: Option<f64>,
    val_slope: Option<f64>,
    train_plateau: Option<f64>,
    val_plateau: Option<f64>,
    reservoir_manifest: String,
}

pub fn train_cmd(ctx: &Context, dataset: Option<&Path>) -> CliResult<()> {
    let cfg = &ctx.config;
    cfg.training.validate()?;
    let spec = ReservoirSpec::new(
        cfg.network.n_neurons,
        cfg.network.n_astrocytes,
        seed::derive(cfg.seed, "reservoir", &[]),
        cfg.reservoir.clone(),
    );
    spec.validate()?;
    ctx.create_out()?;
    let data = obtain_dataset(ctx, dataset)?;
    let weights = build(&spec)?;
    let manifest = weights.save(&spec, &ctx.out)?;
    let outcome = train(&weights, &spec, &data, &cfg.training, seed::derive(cfg.seed, "readout", &[]))?;
    let h = &outcome.history;
    h.write_batch_csv(&ctx.out.join("loss_batches.csv"))?;
    h.write_epoch_csv(&ctx.out.join("loss_epochs.csv"))?;
    outcome.params.save(&ctx.out, "readout")?;
    write_forecast_csv(&ctx.out.join("forecast.csv"), &outcome.params, &weights, &spec, &data, 5)?;
    let summary = TrainSummary {
        n_neurons: spec.n_neurons,
        n_astrocytes: spec.n_astrocytes,
        epochs: h.epochs(),
        first_train_loss: h.epoch_train[0],
        final_train_loss: *h.epoch_train.last().unwrap(),
        final_val_loss: *h.epoch_val.last().unwrap(),
        train_slope: curves::learning_rate(&h.epoch_train).ok(),
        val_slope: curves::learning_rate(&h.epoch_val).ok().filter(|v| v.is_finite()),
        train_plateau: curves::plateau_loss_with(&h.epoch_train, &cfg.sweep.plateau).ok().map(|p| p.mean),
        val_plateau: curves::plateau_loss_with(&h.epoch_val, &cfg.sweep.plateau)
            .ok()
            .map(|p| p.mean)
            .filter(|v| v.is_finite()),
        reservoir_manifest: manifest.file_name().unwrap().to_string_lossy().into_owned(),
    };
    write_json(&ctx.out.join("summary.json"), &summary)?;
    ctx.stamp("train")
}

pub fn sweep_cmd(ctx: &Context, dataset: Option<&Path>) -> CliResult<usize> {
    let sweep = ctx.config.sweep_config();
    sweep.validate()?;
    ctx.create_out()?;
    let data = obtain_dataset(ctx, dataset)?;
    let records = run_sweep(&sweep, &data, ctx.config.seed, ctx.jobs, &ctx.out)?;
    ctx.stamp("sweep")?;
    Ok(records.len())
}

/// Nothing is written unless the analysis succeeds.
pub fn analyze_cmd(ctx: &Context, records: &Path) -> CliResult<()> {
    if !records.is_file() {
        return Err(CliError::MissingInput {
            path: records.to_path_buf(),
            what: "sweep records (records.csv)",
        });
    }
    let recs = read_records_csv(records)?;
    let report = analyze(&recs, &ctx.config.analysis)?;
    ctx.create_out()?;
    write_report(&report, &ctx.out)?;
    ctx.stamp("analyze")
}

pub fn plot_cmd(ctx: &Context, analysis_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let figures = plot::render_all(analysis_dir)?;
    ctx.create_out()?;
    let mut written = Vec::new();
    for (name, svg) in figures {
        let path = ctx.out.join(name);
        fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    ctx.stamp("plot")?;
    Ok(written)
}
