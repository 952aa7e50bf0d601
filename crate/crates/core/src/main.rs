use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlnc::harness::{self, ExitStatus, ExperimentConfig, Fault, Format, Outcome, OutputOptions};
use mlnc::Result;

#[derive(Parser)]
#[command(name = "mlnc", version, about = "Spectral bounds and UFM experiments for multi-label neural collapse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory; overrides OUTPUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct Experiment {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the optimizer seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of restarts in the config.
    #[arg(long)]
    restarts: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Centered label spectra and degeneracy classification.
    Spectrum(Experiment),
    /// Risk lower bound and proof-chain slacks.
    Bounds {
        #[command(flatten)]
        experiment: Experiment,
        /// Evaluate at this checkpoint instead of optimizing.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Optimize, then write checkpoint, bounds and diagnostics.
    Run(Experiment),
    /// Randomized property suites.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
        #[command(flatten)]
        common: Common,
    },
    /// Diagnostics for a checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "checkpoint")]
        run_id: String,
        #[command(flatten)]
        common: Common,
    },
}

fn load(exp: &Experiment) -> Result<(ExperimentConfig, OutputOptions)> {
    let mut config = ExperimentConfig::load(&exp.config)?;
    if let Some(seed) = exp.seed {
        config.ufm.seed = seed;
    }
    if let Some(r) = exp.restarts {
        config.ufm.restarts = r;
    }
    let out = OutputOptions::resolve(
        exp.common.out.as_deref(),
        std::env::var("OUTPUT_DIR").ok(),
        Some(&config),
        exp.common.format,
    );
    Ok((config, out))
}

fn plain_output(common: &Common) -> OutputOptions {
    OutputOptions::resolve(common.out.as_deref(), std::env::var("OUTPUT_DIR").ok(), None, common.format)
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Spectrum(exp) => {
            let (config, out) = load(&exp)?;
            harness::cmd_spectrum(&config, &out)
        }
        Command::Bounds { experiment, checkpoint } => {
            let (config, out) = load(&experiment)?;
            harness::cmd_bounds(&config, &out, checkpoint.as_deref())
        }
        Command::Run(exp) => {
            let (config, out) = load(&exp)?;
            harness::cmd_run(&config, &out)
        }
        Command::Verify { seed, trials, inject_fault, common } => {
            harness::cmd_verify(seed, trials, inject_fault, &plain_output(&common))
        }
        Command::Diagnose { checkpoint, run_id, common } => {
            harness::cmd_diagnose(&checkpoint, &plain_output(&common), &run_id)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ExitStatus::ConfigError.code() as u8 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            for line in &outcome.lines {
                let _ = writeln!(stdout, "{line}");
            }
            for f in &outcome.files {
                let _ = writeln!(stdout, "wrote {}", f.display());
            }
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::error_status(&e).code() as u8)
        }
    }
}

