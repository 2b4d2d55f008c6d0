//! Command-line surface for the extrapolation-bounds pipeline.
//!
//! Every command accepts `--seed` (a fixed default keeps runs reproducible
//! without one) and `--threads` to cap internal parallelism. Exit codes:
//! 0 success, 2 input validation, 3 computation failure.

mod commands;
mod config;
mod csvio;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use errors::{CliError, CliResult};

/// Fixed default so unseeded runs stay reproducible.
const DEFAULT_SEED: u64 = 0x5EED_0001;

#[derive(Parser)]
#[command(
    name = "extrabound",
    about = "Extrapolation bounds for conditional functions: pilot fits, derivative \
             estimation, Taylor-based envelopes, intervals, scores and simulations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for every random choice (fixed default, not entropy).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the built-in pilot regression forest and write its predictions.
    Pilot {
        /// Training CSV with columns x1..xd,y.
        #[arg(long)]
        train: PathBuf,
        /// Output CSV (`x1..xd,pilot` plus optional `pilot_qlo,pilot_qhi`).
        #[arg(long)]
        out: PathBuf,
        /// Also serialize the fitted forest to this file.
        #[arg(long)]
        forest_out: Option<PathBuf>,
        /// Add quantile pilot columns at levels alpha/2 and 1-alpha/2.
        #[arg(long)]
        quantile_alpha: Option<f64>,
    },
    /// Compute extrapolation bounds at target points from a pilot CSV.
    Bounds {
        /// Pilot CSV with columns x1..xd,pilot.
        #[arg(long)]
        pilot: PathBuf,
        /// Targets CSV with columns x1..xd.
        #[arg(long)]
        targets: PathBuf,
        /// Output CSV (x1..xd,lower,upper,mid,width,clamped).
        #[arg(long)]
        out: PathBuf,
    },
    /// Extrapolation-aware prediction intervals from quantile pilots.
    Intervals {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// Output CSV (x1..xd,lo,hi).
        #[arg(long)]
        out: PathBuf,
        /// Miscoverage level (default 0.2).
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Extrapolation scores (bound width over residual scale).
    Score {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// Output CSV (x1..xd,score).
        #[arg(long)]
        out: PathBuf,
        /// Residual scale; bypasses the cross-validated estimate.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Select forest regularization and penalty by fold-based tuning.
    Tune {
        /// Pilot CSV with columns x1..xd,pilot.
        #[arg(long)]
        pilot: PathBuf,
        /// Output JSON with the selected parameters and loss table.
        #[arg(long)]
        out: PathBuf,
    },
    /// Percentile-bootstrap confidence interval at one target point.
    Confidence {
        #[arg(long)]
        train: PathBuf,
        /// Target coordinates, comma separated (e.g. --target 1.5,0.0).
        #[arg(long, value_delimiter = ',')]
        target: Vec<f64>,
        /// Miscoverage level (default 0.1).
        #[arg(long)]
        alpha: Option<f64>,
        /// Bootstrap replicates (default 500).
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Predict with a previously serialized pilot forest.
    Predict {
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run seeded simulation replicates and emit metrics rows.
    Simulate {
        /// Output metrics CSV.
        #[arg(long)]
        out: PathBuf,
        /// Replicates per sample size (default 20; --full switches to 50).
        #[arg(long)]
        reps: Option<usize>,
        /// Sample sizes (repeatable).
        #[arg(long)]
        n: Vec<usize>,
        /// Covariate dimension (default 2).
        #[arg(long)]
        d: Option<usize>,
        /// Full-scale replication (50 repetitions).
        #[arg(long)]
        full: bool,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Validation(format!("--threads: {e}")))?;
    }
    let mut config = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);

    match cli.command {
        Command::Pilot {
            train,
            out,
            forest_out,
            quantile_alpha,
        } => commands::cmd_pilot(
            &train,
            &out,
            forest_out.as_deref(),
            quantile_alpha,
            &config,
            seed,
        ),
        Command::Bounds {
            pilot,
            targets,
            out,
        } => commands::cmd_bounds(&pilot, &targets, &out, &config, seed),
        Command::Intervals {
            train,
            targets,
            out,
            alpha,
        } => {
            if let Some(alpha) = alpha {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(CliError::Validation(format!(
                        "alpha must lie in (0, 1), got {alpha}"
                    )));
                }
                config.alpha = Some(alpha);
            }
            commands::cmd_intervals(&train, &targets, &out, &config, seed)
        }
        Command::Score {
            train,
            targets,
            out,
            sigma,
        } => {
            if let Some(sigma) = sigma {
                config.sigma = Some(sigma);
            }
            commands::cmd_score(&train, &targets, &out, &config, seed)
        }
        Command::Tune { pilot, out } => commands::cmd_tune(&pilot, &out, &config, seed),
        Command::Confidence {
            train,
            target,
            alpha,
            replicates,
        } => {
            if let Some(alpha) = alpha {
                config.alpha = Some(alpha);
            }
            if let Some(replicates) = replicates {
                config.replicates = Some(replicates);
            }
            let (lo, hi) = commands::cmd_confidence(&train, &target, &config, seed)?;
            println!("{},{}", csvio::fmt_f64(lo), csvio::fmt_f64(hi));
            Ok(())
        }
        Command::Predict {
            forest,
            targets,
            out,
        } => commands::cmd_predict(&forest, &targets, &out),
        Command::Simulate {
            out,
            reps,
            n,
            d,
            full,
        } => {
            let mut sim = config.sim.clone().unwrap_or_default();
            if let Some(reps) = reps {
                sim.reps = reps;
            }
            if !n.is_empty() {
                sim.n = n;
            }
            if let Some(d) = d {
                sim.d = d;
            }
            sim.full = sim.full || full;
            let forest = config.pilot_forest.clone().unwrap_or_default();
            let xtra = config.forest.clone().unwrap_or(config::ForestConfig {
                impurity_tol: Some(1.0),
                ..Default::default()
            });
            let lambda = config.lambda.unwrap_or(0.0);
            commands::cmd_simulate(&out, &sim, &forest, &xtra, lambda, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
