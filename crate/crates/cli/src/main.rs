use std::path::PathBuf;
use std::process::ExitCode;

use astrolsm_cli::commands::{self, Context};
use astrolsm_cli::error::EXIT_CONFIG;
use astrolsm_cli::{CliResult, PipelineConfig};
use clap::{Args, Parser, Subcommand};

/// Astrocyte/neuron liquid state machine: data generation, training, sweeps,
/// analysis and figures.
///
/// Exit codes: 0 success, 2 configuration or precondition error, 3 I/O or
/// file format error, 4 numerical divergence.
#[derive(Parser, Debug)]
#[command(name = "astrolsm", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON pipeline configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps and feature extraction.
    #[arg(long, global = true, env = "ASTROLSM_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the Lorenz window dataset.
    Generate,
    /// Build one reservoir and train its readout.
    Train {
        /// Dataset manifest; generated from the config when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the neuron-count by astrocyte-proportion grid.
    Sweep {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Regression, LASSO and density analysis of sweep records.
    Analyze {
        #[arg(long)]
        records: PathBuf,
    },
    /// Render SVG figures from an analysis directory.
    Plot {
        #[arg(long)]
        analysis: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let config = match &cli.common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let jobs = cli
        .common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let default_out = match cli.command {
        Command::Generate => "data",
        Command::Train { .. } => "train",
        Command::Sweep { .. } => "runs",
        Command::Analyze { .. } => "analysis",
        Command::Plot { .. } => "figures",
    };
    let ctx = Context::resolve(config, cli.common.seed, cli.common.out, jobs, default_out);
    // Feature extraction inside `train` runs on the global pool; sweeps
    // build their own. Failure only means a pool already exists.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(ctx.jobs).build_global();
    match &cli.command {
        Command::Generate => {
            let manifest = commands::generate(&ctx)?;
            println!("{}", manifest.display());
        }
        Command::Train { dataset } => {
            commands::train_cmd(&ctx, dataset.as_deref())?;
            println!("{}", ctx.out.display());
        }
        Command::Sweep { dataset } => {
            let n = commands::sweep_cmd(&ctx, dataset.as_deref())?;
            println!("{n} runs -> {}", ctx.out.join("records.csv").display());
        }
        Command::Analyze { records } => {
            commands::analyze_cmd(&ctx, records)?;
            println!("{}", ctx.out.display());
        }
        Command::Plot { analysis } => {
            for p in commands::plot_cmd(&ctx, analysis)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            ExitCode::from(u8::try_from(code).unwrap_or(EXIT_CONFIG as u8))
        }
    }
}
