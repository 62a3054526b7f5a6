//! `rankalign`: data generation, two-stage training, evaluation, rank export
//! and the four-arm ablation, each run leaving a manifest next to its outputs.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rankalign_core::{Domain, Error, Split};

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const TRAINING: u8 = 3;

    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: Self::USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: Self::DATA, message: message.into() }
    }

    /// Classifies a library error raised while training or evaluating.
    pub fn from_run(err: Error) -> Self {
        let code = match &err {
            Error::Config(_) => Self::USAGE,
            Error::Training { .. } | Error::Numerical(_) => Self::TRAINING,
            _ => Self::DATA,
        };
        Self { code, message: err.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser, Debug)]
#[command(name = "rankalign", version, about = "Rank-guided semi-supervised domain adaptation for ordinal classes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset file (comma-separated, label -1 for unlabeled rows).
    #[arg(long)]
    pub data: PathBuf,
    /// Number of classes; defaults to the largest label in the file.
    #[arg(long)]
    pub classes: Option<usize>,
}

/// Training settings shared by `pretrain`, `adapt` and `ablation`. Flags
/// override values from `--config`.
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// Training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Disable cross-domain ranking pairs.
    #[arg(long)]
    pub no_cdr: bool,
    /// Disable distribution alignment.
    #[arg(long)]
    pub no_cda: bool,
    /// Maximum epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic domain-shift dataset.
    GenData {
        /// Generator config JSON; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on labeled source data.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a pretrained checkpoint to the target domain.
    Adapt {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classification metrics of a checkpoint on one domain and split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "target")]
        domain: Domain,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also write metrics.json and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-sample rank scores plus per-class histograms.
    ExportRanks {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = rankalign_core::metrics::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Four arms (neither, ranking, alignment, both) per seed from a shared
    /// pretrained checkpoint.
    Ablation {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, seed, out } => commands::gen_data(config.as_deref(), seed, &out),
        Command::Pretrain { data, train, seed, out } => commands::pretrain(&data, &train, seed, &out),
        Command::Adapt { data, checkpoint, train, seed, out } => {
            commands::adapt(&data, &checkpoint, &train, seed, &out)
        }
        Command::Eval { data, checkpoint, domain, split, out } => {
            commands::eval(&data, &checkpoint, domain, split, out.as_deref())
        }
        Command::ExportRanks { data, checkpoint, bins, out } => commands::export_ranks(&data, &checkpoint, bins, &out),
        Command::Ablation { data, train, seeds, out } => commands::ablation(&data, &train, &seeds, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(CliError::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
