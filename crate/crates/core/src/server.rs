//! The listening-test server: dataset, audio thread, session, OSC endpoint,
//! WebSocket bridge and telemetry, wired together.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use log::info;
use thiserror::Error;

use crate::arir::{load_arir_set, load_source_sample, ArirError, ArirSet, SourceSample};
use crate::bridge::{Bridge, Broadcaster};
use crate::config::{BuiltinDecoder, EngineConfig, OutputKind};
use crate::dsp::{BinauralDecoder, DecoderError, RenderConfig, RenderError, Renderer};
use crate::engine::{AudioEngine, Capture, EngineOptions, EngineStatus, LiveEngine, Output};
use crate::osc::{run_endpoint, ClientEvent, Endpoint, EndpointError, Notification, Notifier, OscMessage};
use crate::router::{Router, RouterStats};
use crate::session::{unix_ms, Session, SessionError, SessionResult};
use crate::telemetry::{telemetry_file_name, TelemetryError, TelemetryStats, TelemetryWriter};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Arir(#[from] ArirError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot create {path}: {reason}")]
    Output { path: PathBuf, reason: String },
}

/// Everything read from disk before anything starts.
pub struct Loaded {
    pub config: EngineConfig,
    pub set: Arc<ArirSet>,
    pub decoder: BinauralDecoder,
    pub samples: Vec<SourceSample>,
}

impl Loaded {
    pub fn summary(&self) -> String {
        let c = self.set.config();
        format!(
            "{} seats, {} sources, {} stored conditions, order {}, {} Hz, longest ARIR {} samples; decoder {} taps; {} trial samples",
            self.set.seats().count(),
            self.set.source_count(),
            self.set.stored_conditions().count(),
            c.order,
            c.sample_rate,
            self.set.max_len(),
            self.decoder.taps(),
            self.samples.len()
        )
    }
}

/// Loads and cross-checks the dataset, decoder and trial samples.
pub fn load(config: EngineConfig) -> Result<Loaded, ServeError> {
    let set = load_arir_set(&config.dataset.root, &config.manifest_path())?;
    let ac = set.config();
    let decoder = match (&config.decoder.file, config.decoder.builtin) {
        (Some(path), _) => BinauralDecoder::load(path, ac.order, ac.convention)?,
        (None, Some(BuiltinDecoder::Omni)) => BinauralDecoder::omni_passthrough(ac.order, ac.convention),
        (None, _) => BinauralDecoder::cardioid_pair(ac.order, ac.convention),
    };
    for c in &config.session.session.conditions_under_test {
        if !set.has_condition(c) {
            return Err(ServeError::Invalid(format!("dataset has no ARIRs for condition {c}")));
        }
    }
    if let Some(seat) = config.session.start_seat {
        if !set.seats().any(|s| s == seat) {
            return Err(ServeError::Invalid(format!("start seat {seat} is not in the dataset")));
        }
    }
    if config.audio.output == OutputKind::Device {
        return Err(ServeError::Invalid(
            "audio.output = \"device\" is not supported by this build; use \"null\"".into(),
        ));
    }
    let ids: BTreeSet<&String> = config.session.session.trials.iter().collect();
    let samples = ids
        .into_iter()
        .map(|id| {
            let mut s = load_source_sample(&config.sample_path(id), ac.sample_rate)?;
            s.id = id.clone();
            Ok(s)
        })
        .collect::<Result<Vec<_>, ArirError>>()?;
    Ok(Loaded {
        config,
        set: Arc::new(set),
        decoder,
        samples,
    })
}

#[derive(Default)]
pub struct ServeOptions {
    /// Keep the rendered audio here instead of discarding it.
    pub capture: Option<Arc<Capture>>,
}

struct Hub {
    router: Mutex<Router<LiveEngine>>,
    notifier: Notifier,
    ws: Broadcaster,
}

impl Hub {
    fn router(&self) -> MutexGuard<'_, Router<LiveEngine>> {
        self.router.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn publish(&self, notes: &[Notification], snapshot: Option<String>) {
        for n in notes {
            self.notifier.send(&n.to_message());
            self.ws.send(n);
        }
        if let Some(s) = snapshot {
            self.ws.send_json(s);
        }
    }

    fn osc(&self, msg: OscMessage) {
        let (notes, snap) = {
            let mut r = self.router();
            let notes = r.route(&msg, unix_ms());
            let snap = needs_snapshot(&msg.address).then(|| snapshot_json(&r));
            (notes, snap)
        };
        self.publish(&notes, snap);
    }

    fn event(&self, ev: ClientEvent) {
        let pose = matches!(ev, ClientEvent::Position { .. } | ClientEvent::Rotation { .. });
        let (notes, snap) = {
            let mut r = self.router();
            let notes = r.handle(ev, unix_ms());
            let snap = (!pose).then(|| snapshot_json(&r));
            (notes, snap)
        };
        self.publish(&notes, snap);
    }
}

fn needs_snapshot(address: &str) -> bool {
    !address.starts_with("/head/")
}

fn snapshot_json(r: &Router<LiveEngine>) -> String {
    serde_json::to_string(&r.snapshot()).expect("snapshot serializes")
}

pub struct Server {
    hub: Arc<Hub>,
    endpoint: Option<Endpoint>,
    bridge: Option<Bridge>,
    telemetry: TelemetryWriter,
    out_dir: PathBuf,
}

#[derive(Debug)]
pub struct ServeReport {
    pub result: SessionResult,
    pub aborted: bool,
    pub engine: EngineStatus,
    pub router: RouterStats,
    pub telemetry: TelemetryStats,
    pub osc_datagrams: u64,
    pub osc_malformed: u64,
}

impl Server {
    pub fn start(loaded: Loaded, options: ServeOptions) -> Result<Self, ServeError> {
        let Loaded {
            config,
            set,
            decoder,
            samples,
        } = loaded;
        let out_dir = config.output.dir.clone();
        std::fs::create_dir_all(&out_dir).map_err(|e| ServeError::Output {
            path: out_dir.clone(),
            reason: e.to_string(),
        })?;

        let ac = set.config();
        let renderer = Renderer::new(
            ac,
            RenderConfig::new(config.audio.block, ac.sample_rate),
            &decoder,
            set.source_count(),
            set.max_len(),
        )?;
        let output = match options.capture {
            Some(c) => Output::Capture(c),
            None => Output::Null,
        };
        let engine = AudioEngine::start(
            renderer,
            output,
            EngineOptions {
                max_step: config.audio.click_threshold,
            },
        );
        let live = LiveEngine::new(set, engine, config.audio.block, samples);

        let mut session = Session::new(config.session.session.clone(), unix_ms())?;
        let cfg = session.config().clone();
        let tname = telemetry_file_name(&cfg.assessor_id, &cfg.session_id());
        let telemetry = TelemetryWriter::create(&out_dir.join(&tname))?;
        session.set_telemetry_file(tname);

        let router = Router::new(
            session,
            live,
            Some(telemetry.sender()),
            config.session.start_seat,
            cfg.trials.clone(),
        );
        let notifier = Notifier::new(config.osc.notify.clone()).map_err(|source| EndpointError::BindFailed {
            addr: "notification socket".into(),
            source,
        })?;
        let hub = Arc::new(Hub {
            router: Mutex::new(router),
            notifier,
            ws: Broadcaster::new(),
        });

        let h = hub.clone();
        let endpoint = run_endpoint(config.osc.listen, move |m, _| h.osc(m))?;
        let bridge = match &config.websocket {
            Some(ws) => {
                let (g, e) = (hub.clone(), hub.clone());
                Some(Bridge::start(
                    ws.listen,
                    ws.web_root.clone(),
                    hub.ws.clone(),
                    Box::new(move || snapshot_json(&g.router())),
                    Box::new(move |ev| {
                        e.event(ev);
                        Vec::new()
                    }),
                )?)
            }
            None => None,
        };
        info!(
            "listening for OSC on {}{}",
            endpoint.local_addr(),
            bridge
                .as_ref()
                .map(|b| format!(", WebSocket on {}", b.local_addr()))
                .unwrap_or_default()
        );
        Ok(Self {
            hub,
            endpoint: Some(endpoint),
            bridge,
            telemetry,
            out_dir,
        })
    }

    pub fn osc_addr(&self) -> SocketAddr {
        self.endpoint.as_ref().expect("running").local_addr()
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.bridge.as_ref().map(Bridge::local_addr)
    }

    pub fn is_finished(&self) -> bool {
        self.hub.router().is_finished()
    }

    pub fn engine_status(&self) -> EngineStatus {
        self.hub.router().engine().engine().status()
    }

    /// Blocks until `stop` is raised or, with `exit_on_finish`, the session
    /// is done.
    pub fn wait(&self, stop: &AtomicBool, exit_on_finish: bool) {
        while !stop.load(Ordering::Acquire) && !(exit_on_finish && self.is_finished()) {
            std::thread::sleep(Duration::from_millis(20));
            self.hub.router().engine().engine().collect_garbage();
        }
    }

    /// Stops listening and writes the results: complete if the session is
    /// done, under an aborted name otherwise.
    pub fn shutdown(mut self) -> Result<ServeReport, ServeError> {
        let endpoint = self.endpoint.take().expect("running");
        let (osc_datagrams, osc_malformed) = (endpoint.datagrams(), endpoint.malformed());
        endpoint.stop();
        if let Some(b) = self.bridge.take() {
            b.stop();
        }
        let (result, aborted, engine, router) = {
            let mut r = self.hub.router();
            let now = unix_ms();
            let (result, aborted) = if r.is_finished() {
                (r.finish(&self.out_dir, now)?, false)
            } else {
                (r.abort(&self.out_dir, now)?, true)
            };
            let engine = r.engine().engine().status();
            (result, aborted, engine, r.stats())
        };
        let (telemetry, _) = self.telemetry.finish();
        info!(
            "wrote {}{}",
            result.csv_path.display(),
            if aborted { " (aborted)" } else { "" }
        );
        Ok(ServeReport {
            result,
            aborted,
            engine,
            router,
            telemetry,
            osc_datagrams,
            osc_malformed,
        })
    }
}
