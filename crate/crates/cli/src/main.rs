//! `fairguide`: command-line front end for the guidance-bias laboratory.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, CliResult, Run};
use config::{load_config, ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fairguide", version, about = "Measure and correct group bias induced by guidance scale")]
struct Cli {
    /// Worker threads for parallel sampling.
    #[arg(long, global = true, env = "FAIRGUIDE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Guided sweep over the w grid; writes sweep.csv and bias_report.json.
    Sweep(Common),
    /// Train a noisy classifier on the mixture world; writes classifier.json.
    TrainClassifier(Common),
    /// Oracle null-shift search per prompt; writes alpha_records.jsonl.
    AlphaSearch(Common),
    /// Fit the prompt-based shift estimator; writes estimator.json.
    AlphaFit(Common),
    /// Closed-form and sampler checks of the ratio theory; writes theory_report.json.
    VerifyTheory(Common),
    /// Validate a config and print its canonical SHA-256.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Bias decomposition of a stored sweep CSV.
    Decompose {
        #[arg(long)]
        sweep: PathBuf,
        /// Target group distribution, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        target: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        w_ref: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run acceptance scenarios and write report.md.
    Reproduce {
        /// Criterion ids, comma separated; all when omitted.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn prepare(common: &Common) -> CliResult<Run> {
    let mut cfg: ExperimentConfig = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| ConfigError::new("out", "no output directory (use --out or set out)"))?;
    Ok(Run { cfg, out })
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError::new("--threads", "must be positive").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Sweep(c) => commands::cmd_sweep(&prepare(&c)?),
        Command::TrainClassifier(c) => commands::cmd_train_classifier(&prepare(&c)?),
        Command::AlphaSearch(c) => commands::cmd_alpha_search(&prepare(&c)?),
        Command::AlphaFit(c) => commands::cmd_alpha_fit(&prepare(&c)?),
        Command::VerifyTheory(c) => commands::cmd_verify_theory(&prepare(&c)?),
        Command::Check { config } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            println!("{}", cfg.canonical_hash());
            Ok(())
        }
        Command::Decompose { sweep, target, w_ref, out } => commands::cmd_decompose(&sweep, &target, w_ref, &out),
        Command::Reproduce { criteria, out } => commands::cmd_reproduce(&criteria, &out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
