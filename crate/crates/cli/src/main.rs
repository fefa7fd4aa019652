use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nonlocal_sir_cli::{cmd_equilibria, cmd_run, cmd_study, load_config, CliError, Format, StudyKind};

#[derive(Parser)]
#[command(name = "nlsir", version, about = "Nonlocal SIR/SIS finite-volume solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write snapshots, diagnostics and a summary.
    Run { config: PathBuf },
    /// Run a refinement or vanishing-viscosity study.
    Study {
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: StudyKind,
    },
    /// Print the analytic steady states of the shared-kernel SIS model.
    Equilibria {
        #[arg(long = "M", allow_negative_numbers = true)]
        mass: f64,
        #[arg(long, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, allow_negative_numbers = true)]
        beta: f64,
        #[arg(long, allow_negative_numbers = true)]
        gamma: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        center: f64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let artifacts = cmd_run(&load_config(&config)?)?;
            println!("{}", artifacts.summary.display());
        }
        Command::Study { config, kind } => {
            let artifacts = cmd_study(&load_config(&config)?, kind)?;
            println!("{}: {}", artifacts.table.display(), artifacts.verdict);
        }
        Command::Equilibria {
            mass,
            alpha,
            beta,
            gamma,
            center,
            format,
        } => print!("{}", cmd_equilibria(mass, alpha, beta, gamma, center, format)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
