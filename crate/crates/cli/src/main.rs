use std::fmt;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use apq_core::ApqError;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Waiting times, bidding equilibria, welfare and simulation for the M/G/1
/// accumulating-priority queue.
#[derive(Debug, Parser)]
#[command(name = "apq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Io {
    /// Model JSON: {"classes": [{"lambda": .., "cost": .., "service": {..}}, ..]}
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write here instead of stdout; a manifest is written next to it.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Emit JSON instead of CSV.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Args)]
struct Solver {
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Overridden by APQ_SEED.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct RhoRange {
    #[arg(long)]
    rho_from: Option<f64>,
    #[arg(long)]
    rho_to: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    rho_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    Bids,
    Waits,
    Ratios,
    Welfare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scenario {
    /// Two customers whose priorities cross: bids 0.5 and 1 arriving at 0 and 1.
    Overtaking,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expected waiting time of every class under given bids.
    Waiting {
        #[command(flatten)]
        io: Io,
        /// Comma-separated bids in class order; equilibrium bids if omitted.
        #[arg(long, value_delimiter = ',')]
        bids: Option<Vec<f64>>,
        #[command(flatten)]
        solver: Solver,
    },
    /// Nash equilibrium bids.
    Equilibrium {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        solver: Solver,
    },
    /// Equilibria over a range of total loads, class mix held fixed.
    Sweep {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        range: RhoRange,
        #[arg(long, value_enum, default_value_t = SweepKind::Bids)]
        mode: SweepKind,
        /// Solve every load independently and in parallel.
        #[arg(long)]
        no_warm_start: bool,
        #[command(flatten)]
        solver: Solver,
    },
    /// Discrete-event simulation of the queue.
    Simulate {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_delimiter = ',')]
        bids: Option<Vec<f64>>,
        /// JSON file with one list of {"bid", "prob"} atoms per class.
        #[arg(long, conflicts_with = "bids")]
        mixture: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        customers: u64,
        #[arg(long, default_value_t = 100_000)]
        warmup: u64,
        /// Probe customers as "bid,rate".
        #[arg(long, value_delimiter = ',')]
        tagged: Option<Vec<f64>>,
        /// Replay a fixed scenario instead of simulating a model.
        #[arg(long, value_enum)]
        scenario: Option<Scenario>,
        #[command(flatten)]
        solver: Solver,
    },
    /// Social cost of equilibria with and without pricing against strict Cμ priority.
    Welfare {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        range: RhoRange,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, default_value_t = 10)]
        n: u32,
        #[arg(long)]
        no_warm_start: bool,
        #[command(flatten)]
        solver: Solver,
    },
    /// Check a `waiting` table against the work-conservation identity.
    CheckConservation {
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV produced by `apq waiting`; stdin if omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Allowed relative gap; CSV values carry six significant digits.
        #[arg(long, default_value_t = 2e-5)]
        tol: f64,
    },
}

#[derive(Debug)]
pub enum CliError {
    Core(ApqError),
    Io(io::Error),
    Usage(String),
    CheckFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(ApqError::Unstable { .. }) => 3,
            CliError::Core(ApqError::NoConvergence(_)) => 4,
            CliError::CheckFailed(_) => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Usage(s) | CliError::CheckFailed(s) => f.write_str(s),
        }
    }
}

impl From<ApqError> for CliError {
    fn from(e: ApqError) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("apq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
