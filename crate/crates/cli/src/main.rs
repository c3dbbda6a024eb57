//! Command-line front end for the adaptive-threshold SSDG training engine.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::parse_method;

fn config_reference() -> String {
    format!(
        "CONFIG FILE KEYS (TOML) AND DEFAULTS:\n\n{}\nThe [synth] section is optional; omit it when --data supplies a CSV.\nCLI flags override file values.",
        config::default_config_toml()
    )
}

#[derive(Parser)]
#[command(
    name = "catssdg",
    version,
    about = "Adaptive-threshold semi-supervised domain generalization: data generation, training, evaluation, sweeps, and gradient checks",
    after_long_help = config_reference(),
    after_help = "Run with --help (long form) to see every config file key and its default."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset as CSV.
    GenData {
        /// Config file (TOML); uses built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the [synth] seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train with leave-one-domain-out evaluation; writes per-fold metrics,
    /// threshold logs, checkpoints, and a summary JSON.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset CSV (header `domain,label,f0,...`); falls back to the
        /// [synth] block when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the [train] seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the [train] method (cat, fixmatch_baseline,
        /// supervised_only).
        #[arg(long)]
        method: Option<String>,
    },
    /// Evaluate a saved checkpoint on a dataset CSV.
    Eval {
        /// Checkpoint written by `train` (fold_<k>/model.ckpt).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Restrict scoring to one domain id.
        #[arg(long)]
        domain: Option<usize>,
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare methods across labels-per-class, source count, or method.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Sweep axis: labels (labels_per_class), k (num_sources), or method.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (ignored for axis=method).
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        /// Comma-separated methods; defaults to all three.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Output directory for sweep.csv and sweep.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify every loss's analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Randomized instances per loss.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Test hook: perturb one analytic gradient entry to prove the
        /// check reports faults (forces a nonzero exit).
        #[arg(long)]
        inject_fault: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { config, out, seed } => {
            commands::cmd_gen_data(config.as_deref(), &out, seed)
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            method,
        } => {
            let method = method.as_deref().map(parse_method).transpose()?;
            commands::cmd_train(config.as_deref(), data.as_deref(), &out, seed, method)
        }
        Command::Eval {
            checkpoint,
            data,
            domain,
            out,
        } => commands::cmd_eval(&checkpoint, &data, domain, out.as_deref()),
        Command::Sweep {
            config,
            data,
            axis,
            values,
            methods,
            out,
            seed,
        } => {
            let methods = commands::resolve_methods(&methods)?;
            commands::cmd_sweep(
                config.as_deref(),
                data.as_deref(),
                &axis,
                &values,
                &methods,
                &out,
                seed,
            )
        }
        Command::Gradcheck {
            seed,
            instances,
            inject_fault,
        } => commands::cmd_gradcheck(seed, instances, inject_fault),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
