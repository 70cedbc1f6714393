mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;
use xlm_core::CoreError;

use settings::{Precision, Settings};

#[derive(Parser, Debug)]
#[command(name = "xlm", version, about = "Train, evaluate and inspect the hybrid ConvNeXt/Mamba classifier")]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for model init, data order, noise, synthesis and splitting.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    precision: Option<Precision>,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic texture tiles and a stratified manifest.
    GenData,
    /// Re-split a dataset's manifest 70/15/15 with the given seed.
    Split {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train on a dataset; writes checkpoint, epoch log, metrics and config.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Per-layer parameter counts; exit 3 outside the target band.
    AuditParams,
    /// Finite-difference checks of every op and block; exit 3 on failure.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Collapse diagnostics at the penultimate layer.
    NcMetrics {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Class activation map for one tile.
    Gradcam {
        #[arg(long)]
        tile: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = xlm_core::harness::DEFAULT_CAM_LAYER)]
        layer: String,
        /// Class whose logit is explained; defaults to the predicted class.
        #[arg(long)]
        target: Option<usize>,
    },
    /// One train+eval per value along an axis.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// momentum, lr, optimizer or head_config.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; defaults to the axis grid.
        #[arg(long)]
        values: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
    #[error("{0}")]
    Partial(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io_or_format() => 2,
            CliError::Core(_) | CliError::Partial(_) => 1,
            CliError::Acceptance(_) => 3,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let s = Settings::resolve(cli.config.as_deref(), &cli.sets, cli.seed, cli.precision)?;
    let out = cli.out;
    match cli.command {
        Command::GenData => commands::gen_data(&s, out),
        Command::Split { data } => commands::split(&s, &data, out),
        Command::Train { data } => commands::dispatch_train(&s, &data, out),
        Command::Eval { data, checkpoint, split } => commands::dispatch_eval(&s, &data, &checkpoint, &split, out),
        Command::AuditParams => commands::audit_params(&s),
        Command::Gradcheck { seeds } => commands::gradcheck(seeds),
        Command::NcMetrics { data, checkpoint, split, samples } => {
            commands::dispatch_nc(&s, &data, &checkpoint, &split, samples, out)
        }
        Command::Gradcam { tile, checkpoint, layer, target } => {
            commands::dispatch_gradcam(&s, &tile, &checkpoint, &layer, target, out)
        }
        Command::Sweep { data, axis, values } => commands::dispatch_sweep(&s, &data, &axis, values.as_deref(), out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
