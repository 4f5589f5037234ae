//! Behavioral log: head poses, seat teleports and UI events as JSON Lines.
//!
//! Every line is one object with a `type` field:
//!
//! ```text
//! {"type":"session","t":0,"state":"start","assessor":"a01","session":"s42"}
//! {"type":"teleport","t":0,"from":null,"to":"C3"}
//! {"type":"pose","t":13,"position":[1.2,0.4,1.6],"orientation":[1.0,0.0,0.0,0.0]}
//! {"type":"ui","t":2400,"kind":"play","payload":"B"}
//! {"type":"ui","t":9100,"kind":"rating","payload":"timbral_quality,B,64"}
//! {"type":"session","t":61000,"state":"end","assessor":"a01","session":"s42"}
//! ```
//!
//! `t` is milliseconds since session start. Producers never block: events go
//! through a bounded queue to a writer thread, and overflow is dropped and
//! counted.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender, TrySendError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arir::SeatId;

pub const FLUSH_INTERVAL: Duration = Duration::from_millis(250);
pub const QUEUE_CAPACITY: usize = 8192;
const POLL_INTERVAL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UiKind {
    Play,
    Stop,
    Rating,
    Info,
    TrialAdvance,
    SourceSelect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Start,
    End,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TelemetryEvent {
    Pose {
        t: u64,
        position: [f64; 3],
        /// Quaternion `w, x, y, z`.
        orientation: [f64; 4],
    },
    Teleport {
        t: u64,
        from: Option<SeatId>,
        to: SeatId,
    },
    Ui {
        t: u64,
        kind: UiKind,
        payload: String,
    },
    Session {
        t: u64,
        state: SessionState,
        assessor: String,
        session: String,
    },
}

impl TelemetryEvent {
    pub fn t(&self) -> u64 {
        match self {
            TelemetryEvent::Pose { t, .. }
            | TelemetryEvent::Teleport { t, .. }
            | TelemetryEvent::Ui { t, .. }
            | TelemetryEvent::Session { t, .. } => *t,
        }
    }

    fn set_t(&mut self, value: u64) {
        match self {
            TelemetryEvent::Pose { t, .. }
            | TelemetryEvent::Teleport { t, .. }
            | TelemetryEvent::Ui { t, .. }
            | TelemetryEvent::Session { t, .. } => *t = value,
        }
    }
}

pub fn telemetry_file_name(assessor: &str, session: &str) -> String {
    format!("telemetry_{assessor}_{session}.jsonl")
}

/// In-memory log with the ordering rules applied; the writer thread keeps
/// one of these as its source of truth.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct TelemetryLog {
    events: Vec<TelemetryEvent>,
    last_t: u64,
    clamped: u64,
    pose_every: usize,
    pose_seen: usize,
}

impl TelemetryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps one pose sample out of every `n` (1 keeps all).
    pub fn with_pose_decimation(n: usize) -> Self {
        Self {
            pose_every: n.max(1),
            ..Self::default()
        }
    }

    /// Appends the event, clamping a timestamp that runs backwards. Returns
    /// the event as stored, or `None` if decimation dropped it.
    pub fn record(&mut self, mut event: TelemetryEvent) -> Option<&TelemetryEvent> {
        if let TelemetryEvent::Pose { .. } = event {
            let every = self.pose_every.max(1);
            self.pose_seen += 1;
            if (self.pose_seen - 1) % every != 0 {
                return None;
            }
        }
        if event.t() < self.last_t {
            self.clamped += 1;
            event.set_t(self.last_t);
        }
        self.last_t = event.t();
        self.events.push(event);
        self.events.last()
    }

    pub fn events(&self) -> &[TelemetryEvent] {
        &self.events
    }

    pub fn clamped(&self) -> u64 {
        self.clamped
    }

    pub fn teleports(&self) -> Vec<TeleportEvent> {
        teleports(&self.events)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TeleportEvent {
    pub t: u64,
    pub from: Option<SeatId>,
    pub to: SeatId,
}

pub fn teleports(events: &[TelemetryEvent]) -> Vec<TeleportEvent> {
    events
        .iter()
        .filter_map(|e| match e {
            TelemetryEvent::Teleport { t, from, to } => Some(TeleportEvent {
                t: *t,
                from: *from,
                to: *to,
            }),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dwell {
    pub dwell_ms: u64,
    pub visits: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum TelemetryError {
    #[error("teleport at index {0} is earlier than its predecessor")]
    UnorderedInput(usize),
    #[error("session end {end} precedes the last teleport at {last}")]
    EndBeforeLastTeleport { end: u64, last: u64 },
    #[error("{path}: line {line}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

/// Time spent at, and arrivals to, each seat. Each stay runs from an
/// arrival to the next teleport; the last one ends at `session_end`.
pub fn compute_dwell(
    teleports: &[TeleportEvent],
    session_end: u64,
) -> Result<BTreeMap<SeatId, Dwell>, TelemetryError> {
    if let Some(i) = teleports.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(TelemetryError::UnorderedInput(i + 1));
    }
    let mut map: BTreeMap<SeatId, Dwell> = BTreeMap::new();
    for (i, tp) in teleports.iter().enumerate() {
        let leave = teleports.get(i + 1).map_or(session_end, |n| n.t);
        if leave < tp.t {
            return Err(TelemetryError::EndBeforeLastTeleport {
                end: session_end,
                last: tp.t,
            });
        }
        let d = map.entry(tp.to).or_default();
        d.dwell_ms += leave - tp.t;
        d.visits += 1;
    }
    Ok(map)
}

/// Parses a telemetry log (also the trace format for replay).
pub fn read_log(path: &Path) -> Result<Vec<TelemetryEvent>, TelemetryError> {
    let io_err = |e: io::Error| TelemetryError::Io {
        path: path.to_owned(),
        reason: e.to_string(),
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| TelemetryError::MalformedLine {
            path: path.to_owned(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(event);
    }
    Ok(out)
}

/// Session end time: the last `session` end/aborted event, else the last event.
pub fn session_end(events: &[TelemetryEvent]) -> Option<u64> {
    events
        .iter()
        .rev()
        .find_map(|e| match e {
            TelemetryEvent::Session { t, state, .. } if *state != SessionState::Start => Some(*t),
            _ => None,
        })
        .or_else(|| events.last().map(TelemetryEvent::t))
}

#[derive(Debug, Default)]
struct Counters {
    written: AtomicU64,
    dropped: AtomicU64,
    clamped: AtomicU64,
    io_errors: AtomicU64,
    closing: AtomicBool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TelemetryStats {
    pub written: u64,
    pub dropped: u64,
    pub clamped: u64,
    /// Set once any write failed; the log is then incomplete.
    pub degraded: bool,
}

/// Cheap, cloneable, non-blocking producer handle.
#[derive(Clone)]
pub struct TelemetrySender {
    tx: Sender<TelemetryEvent>,
    counters: Arc<Counters>,
}

impl TelemetrySender {
    pub fn record(&self, event: TelemetryEvent) {
        match self.tx.try_send(event) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.counters.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn dropped(&self) -> u64 {
        self.counters.dropped.load(Ordering::Relaxed)
    }
}

/// Owns the writer thread of one log file.
pub struct TelemetryWriter {
    sender: TelemetrySender,
    thread: Option<JoinHandle<TelemetryLog>>,
    path: PathBuf,
}

impl TelemetryWriter {
    pub fn create(path: &Path) -> Result<Self, TelemetryError> {
        Self::with_capacity(path, QUEUE_CAPACITY, 1)
    }

    pub fn with_capacity(path: &Path, capacity: usize, pose_every: usize) -> Result<Self, TelemetryError> {
        let file = File::create(path).map_err(|e| TelemetryError::Io {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        let (tx, rx) = bounded(capacity);
        let counters = Arc::new(Counters::default());
        let c = counters.clone();
        let thread = std::thread::Builder::new()
            .name("telemetry".into())
            .spawn(move || writer_loop(rx, BufWriter::new(file), c, pose_every))
            .expect("spawn telemetry writer");
        Ok(Self {
            sender: TelemetrySender { tx, counters },
            thread: Some(thread),
            path: path.to_owned(),
        })
    }

    pub fn sender(&self) -> TelemetrySender {
        self.sender.clone()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, event: TelemetryEvent) {
        self.sender.record(event);
    }

    /// Drains the queue, flushes and joins the writer. Events recorded
    /// through other handles afterwards are lost. Returns the stats and
    /// the in-memory copy of what was written.
    pub fn finish(mut self) -> (TelemetryStats, TelemetryLog) {
        let thread = self.thread.take().expect("finish once");
        let counters = self.sender.counters.clone();
        counters.closing.store(true, Ordering::Release);
        let log = thread.join().unwrap_or_default();
        (
            TelemetryStats {
                written: counters.written.load(Ordering::Relaxed),
                dropped: counters.dropped.load(Ordering::Relaxed),
                clamped: counters.clamped.load(Ordering::Relaxed),
                degraded: counters.io_errors.load(Ordering::Relaxed) > 0,
            },
            log,
        )
    }
}

fn writer_loop(
    rx: Receiver<TelemetryEvent>,
    mut out: BufWriter<File>,
    counters: Arc<Counters>,
    pose_every: usize,
) -> TelemetryLog {
    let mut log = TelemetryLog::with_pose_decimation(pose_every);
    let mut last_flush = Instant::now();
    let write = |log: &mut TelemetryLog, event, out: &mut BufWriter<File>| {
        let before = log.clamped();
        if let Some(stored) = log.record(event) {
            let ok = serde_json::to_writer(&mut *out, stored).is_ok() && out.write_all(b"\n").is_ok();
            if ok {
                counters.written.fetch_add(1, Ordering::Relaxed);
            } else {
                counters.io_errors.fetch_add(1, Ordering::Relaxed);
            }
        }
        counters
            .clamped
            .fetch_add(log.clamped() - before, Ordering::Relaxed);
    };
    loop {
        match rx.recv_timeout(POLL_INTERVAL) {
            Ok(event) => write(&mut log, event, &mut out),
            Err(RecvTimeoutError::Timeout) => {
                if counters.closing.load(Ordering::Acquire) {
                    break;
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
        if last_flush.elapsed() >= FLUSH_INTERVAL {
            if out.flush().is_err() {
                counters.io_errors.fetch_add(1, Ordering::Relaxed);
            }
            last_flush = Instant::now();
        }
    }
    if out.flush().and_then(|_| out.get_ref().sync_all()).is_err() {
        counters.io_errors.fetch_add(1, Ordering::Relaxed);
    }
    log
}
