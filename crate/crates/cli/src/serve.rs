use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use mushra::config::EngineConfig;
use mushra::server::{self, ServeError, ServeOptions, Server};
use serde_json::json;

use crate::Failure;

#[derive(clap::Args)]
pub struct Args {
    /// Configuration file.
    #[arg(short, long, env = "MUSHRA_CONFIG")]
    config: PathBuf,
    /// Validate configuration, dataset, decoder and samples, then exit.
    #[arg(long)]
    check: bool,
    /// Stop once the last trial has been completed.
    #[arg(long)]
    exit_on_finish: bool,
    /// Override `osc.listen`.
    #[arg(long)]
    osc_listen: Option<SocketAddr>,
    /// Override `websocket.listen`.
    #[arg(long)]
    ws_listen: Option<SocketAddr>,
    /// Override `output.dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override `session.assessor`.
    #[arg(long)]
    assessor: Option<String>,
    /// Override `session.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn apply_overrides(c: &mut EngineConfig, a: &Args) {
    if let Some(l) = a.osc_listen {
        c.osc.listen = l;
    }
    if let (Some(l), Some(ws)) = (a.ws_listen, c.websocket.as_mut()) {
        ws.listen = l;
    }
    if let Some(d) = &a.output_dir {
        c.output.dir = d.clone();
    }
    if let Some(x) = &a.assessor {
        c.session.session.assessor_id = x.clone();
    }
    if let Some(s) = a.seed {
        c.session.session.rng_seed = s;
    }
}

fn startup_failure(e: ServeError) -> Failure {
    match e {
        ServeError::Endpoint(_) | ServeError::Output { .. } | ServeError::Telemetry(_) => Failure::runtime(e),
        other => Failure::config(other),
    }
}

pub fn run(a: Args) -> Result<(), Failure> {
    let mut config = EngineConfig::load(&a.config).map_err(Failure::config)?;
    apply_overrides(&mut config, &a);
    config.validate().map_err(Failure::config)?;
    let loaded = server::load(config).map_err(startup_failure)?;
    if a.check {
        println!("configuration ok: {}", loaded.summary());
        return Ok(());
    }

    let clicks_monitored = loaded.config.audio.click_threshold.is_some();
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    ctrlc::set_handler(move || s.store(true, Ordering::Release)).map_err(Failure::runtime)?;

    let server = Server::start(loaded, ServeOptions::default()).map_err(startup_failure)?;
    let ws = server.ws_addr().map(|a| a.to_string()).unwrap_or_else(|| "off".into());
    println!("ready osc={} ws={ws}", server.osc_addr());
    let _ = std::io::stdout().flush();

    server.wait(&stop, a.exit_on_finish);
    let report = server.shutdown().map_err(Failure::runtime)?;
    let summary = json!({
        "results": report.result.csv_path,
        "meta": report.result.meta_path,
        "aborted": report.aborted,
        "ratings": report.result.rows.len(),
        "osc_datagrams": report.osc_datagrams,
        "osc_malformed": report.osc_malformed,
        "messages_handled": report.router.handled,
        "messages_unknown": report.router.unknown,
        "messages_rejected": report.router.rejected,
        "audio_blocks": report.engine.blocks,
        "audio_nonfinite": report.engine.nonfinite,
        "audio_discontinuities": clicks_monitored.then_some(report.engine.discontinuities),
        "audio_deadline_misses": report.engine.deadline_misses,
        "mean_block_ms": report.engine.mean_block_ms(),
        "telemetry_written": report.telemetry.written,
        "telemetry_dropped": report.telemetry.dropped,
    });
    println!("{summary}");
    Ok(())
}
