use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Dynamic matrix control toolkit driven by scenario files.
#[derive(Parser)]
#[command(name = "dmc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop run: writes trace.csv and summary.toml.
    Simulate(Args),
    /// Predicted closed-loop setpoint response, overlaid on a simulation.
    Predict(Args),
    /// Step-response shaping sweep over k_yu.
    TuneStep(Args),
    /// Disturbance-reduction sweep over k_yu.
    TuneDist(Args),
    /// Performance and robustness comparison of two tuning families.
    Compare(Args),
    /// ARMAX identification from the data file named in the scenario.
    Identify(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Directory for the output files.
    #[arg(short, long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("DMC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(&a.scenario, &a.out),
        Command::Predict(a) => commands::predict(&a.scenario, &a.out),
        Command::TuneStep(a) => commands::tune(&a.scenario, &a.out, false),
        Command::TuneDist(a) => commands::tune(&a.scenario, &a.out, true),
        Command::Compare(a) => commands::compare(&a.scenario, &a.out),
        Command::Identify(a) => commands::identify(&a.scenario, &a.out),
    };
    match result {
        Ok(code) => code.into(),
        Err(err) => {
            eprintln!("error: {err:#}");
            commands::exit_code(&err).into()
        }
    }
}
