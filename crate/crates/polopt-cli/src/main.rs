//! Command-line front end: configs in, CSV/JSON files out.
//!
//! Exit codes are a stable contract: 0 success, 1 property failure,
//! 2 configuration error, 3 numerical abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::FileConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config file, unwritable output (exit 2).
    Config(String),
    /// A verified property failed (exit 1).
    Property(String),
    /// Simulation left the finite range (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Property(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Property(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<polopt::Error> for CliError {
    fn from(e: polopt::Error) -> Self {
        match e {
            polopt::Error::NumericalAbort { .. } | polopt::Error::NonFinite(_) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io error: {e}"))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "polopt",
    about = "Policy-optimization lab: seeded simulations, committal-rate \
             estimates, property suites, and outcome tables",
    version
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: POLOPT_OUT_DIR or ./polopt-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct InstanceArgs {
    /// Bandit rewards, comma separated, each in (0, 1].
    #[arg(long)]
    rewards: Option<String>,
    /// Update rule kind (pg-true, npg-true, gnpg-true, pg-stoch, npg-stoch,
    /// gnpg-stoch, npg-oracle-baseline, npg-large-baseline, staying, samba).
    #[arg(long)]
    rule: Option<String>,
    /// Learning rate: a number, or a schedule name (grad-norm, committal).
    #[arg(long)]
    eta: Option<String>,
    /// Baseline offset b (baseline rules only).
    #[arg(long)]
    baseline_b: Option<f64>,
    /// Start logits, comma separated (default: all zeros).
    #[arg(long)]
    init_logits: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run on-policy trials; writes trajectory.csv and summary.json.
    Run {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Steps per trial.
        #[arg(long)]
        horizon: Option<usize>,
        /// Number of trials (above 1 adds a failure-probability estimate).
        #[arg(long)]
        trials: Option<usize>,
        /// Commitment threshold ε for classification.
        #[arg(long)]
        commit_threshold: Option<f64>,
    },
    /// Force one arm forever; writes committal.csv and committal.json.
    Committal {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Arm to force.
        #[arg(long)]
        arm: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Run the property suites; exit 1 if any check fails.
    Verify {
        /// Comma-separated suite list: nl, natural-nl, ns, moments, mdp.
        #[arg(long)]
        suites: Option<String>,
        /// Negative control: corrupt the Hessian so the ns suite must fail.
        #[arg(long, hide = true)]
        inject_hessian_defect: bool,
    },
    /// Best-of-n ensemble experiment; writes ensemble.json.
    Ensemble {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long)]
        horizon: Option<usize>,
        /// Target failure probability δ.
        #[arg(long)]
        delta: Option<f64>,
        /// Probe trials used to estimate the per-run success rate.
        #[arg(long)]
        probes: Option<usize>,
        /// Outer repetitions of the whole ensemble.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// The 2×3 outcome table; writes table1.json.
    Table1 {
        /// Bandit rewards, comma separated.
        #[arg(long)]
        rewards: Option<String>,
        /// Trials per stochastic cell.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Tabular MDP operations on the instance from the config file.
    Mdp {
        /// identities | npg-run | failure-demo
        #[arg(long)]
        op: String,
        #[arg(long)]
        horizon: Option<usize>,
        /// Learning rate for npg-run / failure-demo (default 1.0).
        #[arg(long)]
        eta: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let threads = cli.common.threads.or(file.threads).unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let ctx = commands::Context {
        out_dir: config::resolve_out_dir(cli.common.out.clone(), file.out_dir.clone()),
        seed: cli.common.seed.or(file.seed).unwrap_or(0),
        file,
    };
    match cli.command {
        Command::Run {
            instance,
            horizon,
            trials,
            commit_threshold,
        } => commands::cmd_run(&ctx, &instance, horizon, trials, commit_threshold),
        Command::Committal {
            instance,
            arm,
            horizon,
        } => commands::cmd_committal(&ctx, &instance, arm, horizon),
        Command::Verify {
            suites,
            inject_hessian_defect,
        } => commands::cmd_verify(&ctx, suites.as_deref(), inject_hessian_defect),
        Command::Ensemble {
            instance,
            horizon,
            delta,
            probes,
            reps,
        } => commands::cmd_ensemble(&ctx, &instance, horizon, delta, probes, reps),
        Command::Table1 { rewards, trials } => {
            commands::cmd_table1(&ctx, rewards.as_deref(), trials)
        }
        Command::Mdp { op, horizon, eta } => commands::cmd_mdp(&ctx, &op, horizon, eta),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
