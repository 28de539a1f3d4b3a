//! Command-line front end for the two-speed actuator controller pipeline.
//!
//! One TOML config drives every command; flags only pick the command, the
//! config file, the output directory and optional input files.

pub mod commands;
pub mod config;
pub mod error;
pub mod stats;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::Config;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "twospeed", version, about = "Solve, distil, verify and simulate two-speed actuator controllers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Value iteration for the configured cost kind.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the switched PD law to a quadratic-cost policy snapshot.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Policy snapshot; defaults to `<out>/quadratic.hcdp`.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Energy-based stability checks of a law file.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Law file; defaults to `<out>/law.toml`.
        #[arg(long)]
        law: Option<PathBuf>,
    },
    /// Run the configured scenarios in closed loop.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Snapshot for tabular scenarios; defaults to `<out>/<kind>.hcdp`.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Law for law scenarios; defaults to `<out>/law.toml`.
        #[arg(long)]
        law: Option<PathBuf>,
    },
    /// Write plot-ready data for every figure, solving missing tables first.
    ExportFigures {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve { common }
            | Command::Fit { common, .. }
            | Command::Verify { common, .. }
            | Command::Simulate { common, .. }
            | Command::ExportFigures { common } => common,
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let cfg = Config::load(&common.config)?;
    let out = cfg.out_dir(common.out.as_deref());
    match &cli.command {
        Command::Solve { .. } => commands::cmd_solve(&cfg, &out).map(|_| ()),
        Command::Fit { snapshot, .. } => commands::cmd_fit(&cfg, &out, snapshot.as_deref()).map(|_| ()),
        Command::Verify { law, .. } => {
            let outcome = commands::cmd_verify(&cfg, &out, law.as_deref())?;
            if outcome.passed {
                Ok(())
            } else {
                Err(CliError::Verification(outcome.failures.join("; ")))
            }
        }
        Command::Simulate { snapshot, law, .. } => {
            commands::cmd_simulate(&cfg, &out, snapshot.as_deref(), law.as_deref()).map(|_| ())
        }
        Command::ExportFigures { .. } => commands::cmd_export_figures(&cfg, &out),
    }
}
