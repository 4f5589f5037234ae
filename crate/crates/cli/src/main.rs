use std::fmt::Display;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analyze;
mod fixture;
mod render;
mod serve;
mod simulate;

/// Head-tracked binaural MUSHRA test server and tools.
#[derive(Parser)]
#[command(name = "mushra", version, about)]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a live listening session.
    Serve(serve::Args),
    /// Render one condition at one seat to a stereo WAV, deterministically.
    Render(render::Args),
    /// Screen assessors, aggregate ratings and draw the teleport heatmap.
    Analyze(analyze::Args),
    /// Replay a telemetry trace against a server over OSC.
    SimulateClient(simulate::Args),
    /// Write a synthetic dataset, samples, config and session trace.
    MakeFixture(fixture::Args),
}

/// What went wrong, and therefore the exit code.
pub enum Failure {
    /// Bad configuration, arguments or input files (exit 1).
    Config(String),
    /// Something failed while running (exit 2).
    Runtime(String),
}

impl Failure {
    pub fn config(e: impl Display) -> Self {
        Failure::Config(e.to_string())
    }

    pub fn runtime(e: impl Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .init();
    let result = match cli.command {
        Command::Serve(a) => serve::run(a),
        Command::Render(a) => render::run(a),
        Command::Analyze(a) => analyze::run(a),
        Command::SimulateClient(a) => simulate::run(a),
        Command::MakeFixture(a) => fixture::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
