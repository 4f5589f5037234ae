use std::path::PathBuf;

use mushra::replay::{replay, Pacing, ReplayError};
use mushra::telemetry::read_log;

use crate::Failure;

#[derive(clap::Args)]
pub struct Args {
    /// Server OSC address.
    #[arg(short, long, default_value = "127.0.0.1:9000")]
    target: String,
    /// Trace in the telemetry JSONL format.
    #[arg(long)]
    trace: PathBuf,
    /// Send rows at this fixed rate instead of their recorded times.
    #[arg(long, conflicts_with = "immediate")]
    rate: Option<f64>,
    /// Send everything back to back.
    #[arg(long)]
    immediate: bool,
}

pub fn run(a: Args) -> Result<(), Failure> {
    let rows = read_log(&a.trace).map_err(|e| Failure::config(format!("{}: {e}", a.trace.display())))?;
    let pacing = match (a.rate, a.immediate) {
        (Some(hz), _) if !(hz > 0.0 && hz.is_finite()) => {
            return Err(Failure::config(format!("--rate must be positive, got {hz}")));
        }
        (Some(hz), _) => Pacing::Rate(hz),
        (None, true) => Pacing::Immediate,
        (None, false) => Pacing::Recorded,
    };
    let report = replay(a.target.as_str(), &rows, pacing).map_err(|e| match e {
        ReplayError::MalformedTrace { .. } => Failure::config(e),
        ReplayError::UnreachableTarget { .. } => Failure::runtime(e),
    })?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}
