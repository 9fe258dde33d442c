use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod verify;

#[derive(Parser)]
#[command(
    name = "blowuplab",
    version,
    about = "Simulate and analyze finite-time blow-up"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long, env = "BLOWUPLAB_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Override the relative tolerance of the integrator.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Override the norm at which integration stops.
    #[arg(long)]
    pub norm_cap: Option<f64>,
    /// Override the step budget.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Seed for randomized sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a problem up to its norm cap.
    Simulate {
        /// Problem JSON.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Analyze a saved trajectory of a problem.
    Analyze {
        /// Problem JSON the trajectory was produced from.
        #[arg(long)]
        config: PathBuf,
        /// Trajectory file stem (the `.csv`/`.json` pair written by simulate).
        #[arg(long)]
        trajectory: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate and analyze every point of a parameter grid.
    Sweep {
        /// Sweep JSON.
        #[arg(long)]
        config: PathBuf,
        /// Parallel rows; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in property checks.
    Verify {
        /// Random problems per randomized check.
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, common } => commands::simulate(&config, &common),
        Command::Analyze {
            config,
            trajectory,
            common,
        } => commands::analyze(&config, &trajectory, &common),
        Command::Sweep {
            config,
            jobs,
            common,
        } => commands::sweep(&config, jobs, &common),
        Command::Verify { cases, common } => verify::run(cases, &common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
