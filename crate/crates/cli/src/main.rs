use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use faustmann_core::meanfield::Interaction;

mod commands;
mod scenario;

/// Impulse control, mean field games and mean field type control for
/// threshold harvesting of one-dimensional diffusions.
#[derive(Parser, Debug)]
#[command(name = "faustmann", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario file (JSON); optional for `sweep`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory for report.json, table.txt and CSV files.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Master seed for simulations and sweeps.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative tolerance for threshold roots and fixed points.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Points in the equilibrium scan and control grid.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Euler time step.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimal threshold of a single agent.
    SolveSingle {
        #[command(flatten)]
        common: Common,
        /// Interaction level the agent takes as given; without it the price is 1.
        #[arg(long)]
        level: Option<f64>,
    },
    /// Mean field game equilibria.
    SolveMfg {
        #[command(flatten)]
        common: Common,
    },
    /// Mean field type control optimum.
    SolveMfc {
        #[command(flatten)]
        common: Common,
    },
    /// Both problems and the ordering of their thresholds.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo estimates against the analytic values.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Threshold to simulate; defaults to the scenario's, then the first equilibrium.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Stopping-value verification of the auxiliary problem.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Randomized logistic scenarios checked for the threshold ordering.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Restrict to one interaction kind.
        #[arg(long, value_enum)]
        interaction: Option<InteractionArg>,
    },
    /// Integrability and boundary probes of the model.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Print the table stored in a report.json.
    Table {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum InteractionArg {
    HarvestRate,
    ExpectedStock,
}

impl From<InteractionArg> for Interaction {
    fn from(a: InteractionArg) -> Self {
        match a {
            InteractionArg::HarvestRate => Interaction::HarvestRate,
            InteractionArg::ExpectedStock => Interaction::ExpectedStock,
        }
    }
}

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const PARSE: u8 = 2;
    pub const SOLVER: u8 = 3;
    pub const ORDERING: u8 = 4;

    pub fn parse(message: String) -> Self {
        Self {
            code: Self::PARSE,
            message,
        }
    }

    pub fn solver(e: impl std::fmt::Display) -> Self {
        Self {
            code: Self::SOLVER,
            message: e.to_string(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: 1,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<faustmann_core::Error> for Failure {
    fn from(e: faustmann_core::Error) -> Self {
        match e {
            faustmann_core::Error::Parse { .. } => Failure::parse(e.to_string()),
            faustmann_core::Error::OrderingViolation(_) => Failure {
                code: Failure::ORDERING,
                message: e.to_string(),
            },
            other => Failure::solver(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::SolveSingle { common, level } => commands::solve_single(&common, level),
        Command::SolveMfg { common } => commands::solve_mfg(&common),
        Command::SolveMfc { common } => commands::solve_mfc(&common),
        Command::Compare { common } => commands::compare(&common),
        Command::Simulate {
            common,
            threshold,
            paths,
            horizon,
        } => commands::simulate(&common, threshold, paths, horizon),
        Command::Verify { common } => commands::verify(&common),
        Command::Sweep {
            common,
            draws,
            interaction,
        } => commands::sweep(&common, draws, interaction.map(Into::into)),
        Command::Validate { common } => commands::validate(&common),
        Command::Table { report } => commands::table(&report),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
