use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowkit::commands::{self, CliError, TrainArgs};

/// Train, sample and evaluate normalizing flows.
///
/// Exit status: 0 success, 1 I/O failure, 2 invalid config, corrupt
/// checkpoint or unknown target, 3 non-finite loss during training.
#[derive(Parser)]
#[command(name = "flowkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config, or resume from a checkpoint.
    ///
    /// Writes loss.csv, checkpoint.json and report.json to the output directory.
    Train {
        #[arg(long, required_unless_present = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory; defaults to the config's [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Total iterations, overriding the config (useful when resuming).
        #[arg(long)]
        iterations: Option<usize>,
        /// Suppress progress lines on standard error.
        #[arg(long)]
        quiet: bool,
    },
    /// Draw samples as CSV (dim_0,...,log_q).
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate log q on a grid as CSV, optionally as a PGM heatmap.
    Density {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-dimension `min:max:points`, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Print KL estimate and ESS fraction against a target as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target name; defaults to the checkpoint's target.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            checkpoint,
            out,
            iterations,
            quiet,
        } => {
            let report = commands::train(&TrainArgs {
                config,
                checkpoint,
                out,
                iterations,
                verbose: !quiet,
            })?;
            if let Some(m) = report.metrics {
                eprintln!(
                    "trained {} iterations in {:.1}s; kl_estimate {:?}, ess_fraction {:.4}",
                    report.iterations, report.wall_time_secs, m.kl_estimate, m.ess_fraction
                );
            }
            Ok(())
        }
        Command::Sample {
            checkpoint,
            n,
            seed,
            out,
        } => commands::sample(&checkpoint, n, seed, out.as_deref()),
        Command::Density {
            checkpoint,
            grid,
            out,
            pgm,
        } => commands::density(&checkpoint, &grid, out.as_deref(), pgm.as_deref()),
        Command::Eval {
            checkpoint,
            target,
            n,
            seed,
        } => {
            let json = commands::eval(&checkpoint, target.as_deref(), n, seed)?;
            println!("{json}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
