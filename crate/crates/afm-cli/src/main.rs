//! `afm`: simulate factor-model panels, estimate them by normalized
//! principal components, and verify the estimator's convergence rates.

mod config;
mod estimate;
mod panel_io;
mod rates;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "afm",
    version,
    about = "Approximate factor model: simulation, NPC estimation, and rate verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic panel; writes the panel CSV and a truth sidecar
    Simulate {
        /// Flat key=value model configuration file
        #[arg(long)]
        config: PathBuf,
        /// Cross-section size (must not exceed n_max)
        #[arg(long)]
        n: usize,
        /// Number of time points
        #[arg(long)]
        t: usize,
        /// Output panel CSV path (sidecar goes to <stem>.truth.csv)
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Replicate index offsetting the shock streams
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Estimate factors from a panel CSV by normalized principal components
    Estimate {
        /// Input panel CSV (header t,series_1,...,series_n)
        panel: PathBuf,
        /// Number of factors to extract
        #[arg(long)]
        r: usize,
        /// Output directory for factors/loadings/eigenvalues/scores CSVs
        #[arg(long)]
        out: PathBuf,
        /// Subtract column means before estimating (ingested data only)
        #[arg(long)]
        demean: bool,
        /// Optional run config supplying a default for --demean
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a rate-verification suite; exit 0 iff all verdicts pass
    Rates {
        /// Flat key=value model configuration file
        #[arg(long)]
        config: PathBuf,
        /// One of: lemma1, theorem1, theorem2, theorem3, theorem3-fixedT, lemma2, all
        #[arg(long)]
        suite: String,
        /// Output directory for report CSVs and plot data (falls back to the
        /// config's out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            config,
            n,
            t,
            out,
            seed,
            replicate,
        } => simulate::run(&config, n, t, &out, seed, replicate).map(|()| true),
        Command::Estimate {
            panel,
            r,
            out,
            demean,
            config,
        } => estimate::run(&panel, r, &out, demean, config.as_deref()).map(|()| true),
        Command::Rates {
            config,
            suite,
            out,
            seed,
        } => rates::run(&config, &suite, out.as_deref(), seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more verdicts failed");
            ExitCode::FAILURE
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
