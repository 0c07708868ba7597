//! `hyperchar`: command-line front end for the characterisation pipeline.
//!
//! Every path is resolved inside the workspace (`--workspace`, or the
//! `HYPERCHAR_WORKSPACE` environment variable). Exit status is 0 on success,
//! 1 for user errors (bad input, bad configuration, nothing detected) and 2
//! for internal errors.

mod commands;
mod plot;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use commands::{
    CalibrateArgs, DetectArgs, ExtractArgs, FitArgs, ReplayArgs, ReportArgs, SimulateArgs,
};
use workspace::{CmdResult, Workspace};

#[derive(Debug, Parser)]
#[command(
    name = "hyperchar",
    version,
    about = "Hyperspectral degradation characterisation pipeline"
)]
struct Cli {
    /// Workspace directory; inputs and outputs must lie inside it.
    #[arg(
        short,
        long,
        global = true,
        env = "HYPERCHAR_WORKSPACE",
        default_value = "."
    )]
    workspace: PathBuf,
    /// Seed for randomised fit starts and simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Flat-field a raw cube with white and dark references.
    Calibrate(CalibrateArgs),
    /// Detect circular wells and write them as JSON.
    Detect(DetectArgs),
    /// Append per-well intensities of one cube to the series CSV.
    Extract(ExtractArgs),
    /// Fit both degradation models to every series; JSON and SVG out.
    Fit(FitArgs),
    /// Replay the adaptive sampler against a dense series.
    Replay(ReplayArgs),
    /// Run a simulated campaign into the workspace.
    Simulate(SimulateArgs),
    /// Summarise fits: half-lives, replicate intervals, AIC/MDL table.
    Report(ReportArgs),
}

fn run(cli: &Cli) -> CmdResult {
    let create = matches!(cli.command, Command::Simulate(_));
    let ws = Workspace::open(&cli.workspace, create)?;
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Calibrate(a) => commands::calibrate(&ws, seed, a),
        Command::Detect(a) => commands::detect(&ws, seed, a),
        Command::Extract(a) => commands::extract(&ws, seed, a),
        Command::Fit(a) => commands::fit(&ws, seed, a),
        Command::Replay(a) => commands::replay(&ws, seed, a),
        Command::Simulate(a) => commands::simulate(&ws, cli.seed, a),
        Command::Report(a) => commands::report(&ws, seed, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    log::info!("workspace {}", cli.workspace.display());
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
