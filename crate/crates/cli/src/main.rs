//! `pgsaddle`: exact oracles, policy-gradient runs, TD(0) sweeps and saddle
//! experiments on tabular MDPs.
//!
//! Exit codes: 0 on success, 1 when the input or configuration is invalid,
//! 2 when a run fails.

mod commands;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use input::Invalid;

#[derive(Parser, Debug)]
#[command(name = "pgsaddle", version, about = "Policy-gradient saddle experiments on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Instance JSON file, or the name of a bundled instance
    /// (single_state, chain3, saddle_bandit). Defaults to saddle_bandit for
    /// `escape` and `diagnose`, chain3 otherwise.
    #[arg(long)]
    pub instance: Option<String>,
    /// Directory for CSV/JSON artifacts. Without it, tables go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seed list.
    #[arg(long)]
    pub seeds: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// RunConfig JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Trajectory horizon: `auto` or a positive integer.
    #[arg(long = "H")]
    pub h: Option<String>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Variance of isotropic Gaussian noise added to each update.
    #[arg(long)]
    pub inject_noise: Option<f64>,
    /// Inner TD(0) steps for the actor-critic estimator.
    #[arg(long = "K")]
    pub k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print exact quantities of an instance at one parameter vector.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Comma-separated parameters; defaults to the instance's theta0.
        #[arg(long)]
        theta: Option<String>,
        /// Step size used for the region thresholds; defaults to 0.1/L.
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        omega: f64,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
    },
    /// Stochastic ascent with the reward-to-go estimator.
    Vpg(RunArgs),
    /// Stochastic ascent with the TD(0) critic estimator.
    Ac(RunArgs),
    /// TD(0) policy evaluation sweeps over K and start distributions.
    Td0 {
        #[command(flatten)]
        common: Common,
        /// Comma-separated numbers of TD steps.
        #[arg(long = "K", default_value = "100,400,1600")]
        k: String,
        /// Comma-separated starts: stationary, point, point:<pair>, initial.
        #[arg(long, default_value = "stationary,point")]
        starts: String,
        /// Step sizes: inv-sqrt-k, diminishing or a constant.
        #[arg(long, default_value = "inv-sqrt-k")]
        schedule: String,
        #[arg(long)]
        theta: Option<String>,
        /// Also write the per-step error trace.
        #[arg(long)]
        trace: bool,
    },
    /// Escape experiment from a verified strict saddle.
    Escape {
        #[command(flatten)]
        run: RunArgs,
        /// Required gain in J; defaults to mu M sigma^2 / 4.
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Empirical noise covariance diagnostics at a list of parameters.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Semicolon-separated parameter vectors, e.g. `0,0;0.1,0`.
        #[arg(long)]
        points: Option<String>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long = "H")]
        h: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        inject_noise: f64,
        /// Use the exact gradient so that all noise is injected.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        omega: f64,
    },
    /// Check the numerical invariants of an instance.
    Check {
        #[command(flatten)]
        common: Common,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Oracle { common, theta, mu, omega, delta } => commands::oracle(&common, theta.as_deref(), mu, omega, delta),
        Command::Vpg(args) => commands::ascent(&args, false),
        Command::Ac(args) => commands::ascent(&args, true),
        Command::Td0 { common, k, starts, schedule, theta, trace } => commands::td0(&common, &k, &starts, &schedule, theta.as_deref(), trace),
        Command::Escape { run, margin } => commands::escape(&run, margin),
        Command::Diagnose { common, points, samples, h, inject_noise, exact, mu, omega } => {
            commands::diagnose(&common, points.as_deref(), samples, h, inject_noise, exact, mu, omega)
        }
        Command::Check { common } => commands::check(&common),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 1;
    }
    match err.downcast_ref::<pgsaddle_core::Error>() {
        Some(
            pgsaddle_core::Error::InvalidArgument(_)
            | pgsaddle_core::Error::Validation(_)
            | pgsaddle_core::Error::LengthMismatch { .. }
            | pgsaddle_core::Error::ZeroHorizon
            | pgsaddle_core::Error::RankDeficient { .. }
            | pgsaddle_core::Error::Json(_),
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
