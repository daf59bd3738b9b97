use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clb::commands::{cmd_eval, cmd_gen, cmd_inspect, cmd_train, InspectWhat};

/// Column-bundle networks: train, evaluate, and inspect one architecture
/// across multi-output, multi-input, and combined tasks.
#[derive(Parser)]
#[command(name = "clb", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a config file; writes checkpoint, run log, and
    /// test metrics into the output directory.
    Train {
        /// Experiment config file.
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set train.seed=7`.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (overrides the config and CLB_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset's test split, or aggregate
    /// repeated training runs from a config.
    Eval {
        #[arg(long, requires = "data", conflicts_with_all = ["config", "runs"])]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of runs for the multi-run protocol (config mode).
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write analysis matrices: label-embedding similarity plus label
    /// co-occurrence, or per-column hidden-state dynamics of one sample.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `embeddings` or `hidden`.
        #[arg(long)]
        what: String,
        /// Sample index for `hidden`.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset file.
    Gen {
        /// `multi_output`, `multiview_xor`, or `bags`.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        train_frac: f64,
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
    },
}

fn run(cli: Cli) -> clb::Result<i32> {
    match cli.cmd {
        Cmd::Train { config, set, out } => cmd_train(&config, &set, out.as_deref()),
        Cmd::Eval {
            checkpoint,
            data,
            config,
            runs,
            set,
        } => cmd_eval(
            checkpoint.as_deref(),
            data.as_deref(),
            config.as_deref(),
            runs,
            &set,
        ),
        Cmd::Inspect {
            checkpoint,
            data,
            what,
            sample,
            out,
        } => cmd_inspect(&checkpoint, &data, InspectWhat::parse(&what)?, sample, &out),
        Cmd::Gen {
            kind,
            samples,
            seed,
            out,
            train_frac,
            val_frac,
        } => cmd_gen(&kind, samples, seed, &out, train_frac, val_frac),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
