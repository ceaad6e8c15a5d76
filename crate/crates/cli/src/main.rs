//! `nbtl`: generate synthetic source/target pairs, pre-train, probe, get a
//! fine-tuning recommendation, run grids and repeated runs, and tabulate.
//!
//! Exit codes: 0 success, 1 I/O error, 2 configuration or input error,
//! 3 training diverged.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum Failure {
    Io(String),
    Config(String),
    Diverged(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            Failure::Io(m) => Failure::Io(format!("{what}: {m}")),
            Failure::Config(m) => Failure::Config(format!("{what}: {m}")),
            Failure::Diverged(m) => Failure::Diverged(format!("{what}: {m}")),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Config(m) => write!(f, "invalid input: {m}"),
            Failure::Diverged(m) => write!(f, "diverged: {m}"),
        }
    }
}

impl From<nbtl::Error> for Failure {
    fn from(e: nbtl::Error) -> Self {
        match e {
            nbtl::Error::Io(io) => Failure::Io(io.to_string()),
            nbtl::Error::Divergence { .. } => Failure::Diverged(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nbtl", version, about = "Transfer-learning experiments on synthetic domain pairs")]
struct Cli {
    /// Base seed; overrides the config file.
    #[arg(long, global = true, env = config::SEED_ENV)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Print the resolved configuration in canonical form with its digest.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write source and target splits as CSV plus a manifest.
    GenData {
        /// Experiment config holding the source and target specs.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Relatedness in [0, 1]; 1 reuses the source mixing.
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured network on the source splits.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scratch and fixed-feature probes, Fisher score and EMD similarity.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regime and candidate plans from probe measures.
    Recommend {
        #[arg(long)]
        measures: PathBuf,
        /// Takes the block count from this checkpoint instead of the config.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One trial per plan; records as JSONL and the best plan on stdout.
    Grid {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// JSON array of plans, or a recommendation.
        #[arg(long)]
        plans: PathBuf,
        /// Defaults to the config's `jobs`.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep wall-clock times in the records.
        #[arg(long)]
        timing: bool,
    },
    /// Repeated runs of one plan: mean±std and ensemble test top-1.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = nbtl::harness::DEFAULT_RUNS)]
        runs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        timing: bool,
    },
    /// Summary table and curve data from JSONL records.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full related/unrelated regime study over several seeds.
    Study {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        timing: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("nbtl: {f}");
            ExitCode::from(f.code())
        }
    }
}
