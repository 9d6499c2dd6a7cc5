use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrjd::check::Level;
use lrjd::cli;

#[derive(Parser)]
#[command(name = "lrjd", version, about = "Low-rank eigensolvers for Kronecker-sum operators")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the solver described by a config file.
    Solve { config: PathBuf },
    /// Run the `compare.variants` of a config from a shared start.
    Compare { config: PathBuf },
    /// Run the property suite.
    Check {
        #[arg(long, default_value = "fast")]
        level: Level,
        /// Perturb the gauge by this amount to confirm the suite notices.
        #[arg(long, hide = true)]
        gauge_fault: Option<f64>,
    },
    /// Compute the dense reference eigenpair for a config's problem.
    Oracle { config: PathBuf },
}

fn main() -> ExitCode {
    let code = match Args::parse().cmd {
        Cmd::Solve { config } => cli::cmd_solve(&config),
        Cmd::Compare { config } => cli::cmd_compare(&config),
        Cmd::Check { level, gauge_fault } => cli::cmd_check(level, gauge_fault),
        Cmd::Oracle { config } => cli::cmd_oracle(&config),
    };
    ExitCode::from(code as u8)
}
