use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvhjm_cli::{run, Command, RunConfig};

/// Measure-valued HJM models: pricing, simulation, moments, calibration and checks.
#[derive(Parser)]
#[command(name = "mvhjm", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the command named in the config file.
    Run(Args),
    /// Price calls on the configured contract and write `prices.csv`.
    Price(Args),
    /// Simulate paths and write `summary.csv` and `path_<i>.csv`.
    Simulate(Args),
    /// Compute moments of `<g, mu_t>` and write `moments.json`.
    Moments(Args),
    /// Fit alpha to quotes and write the report, fitted alpha and figure data.
    Calibrate(Args),
    /// Test the drift condition on simulated affine paths.
    CheckDrift(Args),
    /// Check the (beta, pi) conditions of the configured kernels.
    CheckAdmissibility(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML run configuration.
    config: PathBuf,
    /// Overrides of the form `--section.key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.cmd {
        Cmd::Run(a) => (None, a),
        Cmd::Price(a) => (Some(Command::Price), a),
        Cmd::Simulate(a) => (Some(Command::Simulate), a),
        Cmd::Moments(a) => (Some(Command::Moments), a),
        Cmd::Calibrate(a) => (Some(Command::Calibrate), a),
        Cmd::CheckDrift(a) => (Some(Command::CheckDrift), a),
        Cmd::CheckAdmissibility(a) => (Some(Command::CheckAdmissibility), a),
    };
    let result = RunConfig::load(&args.config, command, &args.overrides).and_then(|cfg| run(&cfg));
    match result {
        Ok(summary) => {
            eprintln!("{}: {}", summary.command, summary.message);
            for p in &summary.outputs {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
