//! Audio thread and its control-side handle.
//!
//! The control side talks to the audio thread through three fixed-size
//! lock-free queues: commands, poses (latest wins) and retired buffers
//! coming back to be freed. The audio thread never blocks, allocates or
//! frees; everything it drops travels back through the retire queue.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_queue::ArrayQueue;
use log::debug;
use thiserror::Error;

use crate::arir::{ArirError, ArirSet, ConditionId, SeatId, SourceSample};
use crate::dsp::render::{PreparedIrs, Retired, SourceBank};
use crate::dsp::{AudioBlock, Orientation, Renderer};

const COMMAND_CAPACITY: usize = 64;
const POSE_CAPACITY: usize = 4;
const RETIRE_CAPACITY: usize = 64;
const IRS_CACHE: usize = 8;

pub enum Command {
    SetChain {
        irs: Arc<PreparedIrs>,
        condition: ConditionId,
        crossfade: bool,
    },
    Play,
    Stop,
    SetSources(Arc<SourceBank>),
}

/// Where rendered blocks go.
pub enum Output {
    /// Discard the audio but keep real-time pacing.
    Null,
    /// Discard the audio and render as fast as possible.
    Unpaced,
    /// Keep interleaved stereo samples for inspection, paced like `Null`.
    Capture(Arc<Capture>),
}

/// Interleaved stereo samples, filled by the audio thread.
pub struct Capture {
    samples: ArrayQueue<f32>,
    overflow: AtomicU64,
}

impl Capture {
    pub fn new(frames: usize) -> Arc<Self> {
        Arc::new(Self {
            samples: ArrayQueue::new((frames * 2).max(2)),
            overflow: AtomicU64::new(0),
        })
    }

    pub fn drain(&self) -> Vec<f32> {
        std::iter::from_fn(|| self.samples.pop()).collect()
    }

    pub fn overflow(&self) -> u64 {
        self.overflow.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EngineOptions {
    /// A jump between consecutive output samples above this counts as a
    /// discontinuity. Only meaningful for smooth program material such as
    /// test tones; off when `None`.
    pub max_step: Option<f64>,
}

#[derive(Debug, Default)]
struct Status {
    blocks: AtomicU64,
    playhead: AtomicU64,
    playing: AtomicBool,
    nonfinite: AtomicU64,
    discontinuities: AtomicU64,
    deadline_misses: AtomicU64,
    compute_ns_total: AtomicU64,
    compute_ns_max: AtomicU64,
    dropped_commands: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStatus {
    pub blocks: u64,
    pub playhead: u64,
    pub playing: bool,
    pub nonfinite: u64,
    pub discontinuities: u64,
    pub deadline_misses: u64,
    pub compute_ns_total: u64,
    pub compute_ns_max: u64,
    pub dropped_commands: u64,
}

impl EngineStatus {
    pub fn mean_block_ms(&self) -> f64 {
        if self.blocks == 0 {
            0.0
        } else {
            self.compute_ns_total as f64 / self.blocks as f64 / 1e6
        }
    }
}

/// Control-side handle of the running audio thread.
pub struct AudioEngine {
    commands: Arc<ArrayQueue<Command>>,
    poses: Arc<ArrayQueue<Orientation>>,
    retired: Arc<ArrayQueue<Retired>>,
    status: Arc<Status>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Renderer>>,
}

impl AudioEngine {
    pub fn start(renderer: Renderer, output: Output, options: EngineOptions) -> Self {
        let commands = Arc::new(ArrayQueue::new(COMMAND_CAPACITY));
        let poses = Arc::new(ArrayQueue::new(POSE_CAPACITY));
        let retired = Arc::new(ArrayQueue::new(RETIRE_CAPACITY));
        let status = Arc::new(Status::default());
        let stop = Arc::new(AtomicBool::new(false));
        let ctx = AudioThread {
            renderer,
            output,
            options,
            commands: commands.clone(),
            poses: poses.clone(),
            retired: retired.clone(),
            status: status.clone(),
            stop: stop.clone(),
        };
        let thread = std::thread::Builder::new()
            .name("audio".into())
            .spawn(move || ctx.run())
            .expect("spawn audio thread");
        Self {
            commands,
            poses,
            retired,
            status,
            stop,
            thread: Some(thread),
        }
    }

    /// Queues a command; hands it back if the queue is full.
    pub fn send(&self, cmd: Command) -> Result<(), Command> {
        self.commands.push(cmd).inspect_err(|_| {
            self.status.dropped_commands.fetch_add(1, Ordering::Relaxed);
        })
    }

    /// Latest orientation wins; older unread poses are discarded.
    pub fn set_orientation(&self, o: Orientation) {
        self.poses.force_push(o);
    }

    /// Frees whatever the audio thread has retired. Returns the count.
    pub fn collect_garbage(&self) -> usize {
        std::iter::from_fn(|| self.retired.pop()).count()
    }

    pub fn status(&self) -> EngineStatus {
        let s = &self.status;
        EngineStatus {
            blocks: s.blocks.load(Ordering::Relaxed),
            playhead: s.playhead.load(Ordering::Relaxed),
            playing: s.playing.load(Ordering::Relaxed),
            nonfinite: s.nonfinite.load(Ordering::Relaxed),
            discontinuities: s.discontinuities.load(Ordering::Relaxed),
            deadline_misses: s.deadline_misses.load(Ordering::Relaxed),
            compute_ns_total: s.compute_ns_total.load(Ordering::Relaxed),
            compute_ns_max: s.compute_ns_max.load(Ordering::Relaxed),
            dropped_commands: s.dropped_commands.load(Ordering::Relaxed),
        }
    }

    /// Stops the audio thread and returns its renderer.
    pub fn shutdown(mut self) -> Renderer {
        self.join().expect("audio thread still owned")
    }

    fn join(&mut self) -> Option<Renderer> {
        self.stop.store(true, Ordering::Release);
        let r = self.thread.take().and_then(|t| t.join().ok());
        self.collect_garbage();
        r
    }
}

impl Drop for AudioEngine {
    fn drop(&mut self) {
        self.join();
    }
}

struct AudioThread {
    renderer: Renderer,
    output: Output,
    options: EngineOptions,
    commands: Arc<ArrayQueue<Command>>,
    poses: Arc<ArrayQueue<Orientation>>,
    retired: Arc<ArrayQueue<Retired>>,
    status: Arc<Status>,
    stop: Arc<AtomicBool>,
}

impl AudioThread {
    fn run(mut self) -> Renderer {
        let b = self.renderer.block_size();
        let rate = f64::from(self.renderer.config().sample_rate);
        let period = Duration::from_secs_f64(b as f64 / rate);
        let paced = !matches!(self.output, Output::Unpaced);
        let mut block = AudioBlock::new(2, b);
        let mut last = [0.0f64; 2];
        let mut deadline = Instant::now() + period;
        while !self.stop.load(Ordering::Acquire) {
            let t0 = Instant::now();
            while let Some(cmd) = self.commands.pop() {
                self.apply(cmd);
            }
            let mut pose = None;
            while let Some(p) = self.poses.pop() {
                pose = Some(p);
            }
            if let Some(p) = pose {
                self.renderer.set_orientation(p);
            }
            let nonfinite_before = self.renderer.nonfinite_count();
            if self.renderer.process(&mut block).is_err() {
                block.fill(0.0);
            }
            let nonfinite = self.renderer.nonfinite_count() - nonfinite_before;
            let mut jumps = 0;
            if let Some(max_step) = self.options.max_step {
                for (ch, prev) in last.iter_mut().enumerate() {
                    for &v in block.channel(ch) {
                        if (v - *prev).abs() > max_step {
                            jumps += 1;
                        }
                        *prev = v;
                    }
                }
            }
            if let Output::Capture(c) = &self.output {
                for i in 0..b {
                    for ch in 0..2 {
                        if c.samples.push(block.channel(ch)[i] as f32).is_err() {
                            c.overflow.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
            }
            while !self.retired.is_full() {
                match self.renderer.take_retired() {
                    Some(r) => {
                        let _ = self.retired.push(r);
                    }
                    None => break,
                }
            }
            let ns = t0.elapsed().as_nanos() as u64;
            let s = &self.status;
            s.blocks.fetch_add(1, Ordering::Relaxed);
            s.playhead.store(self.renderer.playhead(), Ordering::Relaxed);
            s.playing.store(self.renderer.is_playing(), Ordering::Relaxed);
            s.nonfinite.fetch_add(nonfinite, Ordering::Relaxed);
            s.discontinuities.fetch_add(jumps, Ordering::Relaxed);
            s.compute_ns_total.fetch_add(ns, Ordering::Relaxed);
            s.compute_ns_max.fetch_max(ns, Ordering::Relaxed);
            if paced {
                let now = Instant::now();
                if now > deadline + period {
                    // more than a whole block late: the device would have underrun
                    s.deadline_misses.fetch_add(1, Ordering::Relaxed);
                    deadline = now + period;
                } else {
                    if deadline > now {
                        std::thread::sleep(deadline - now);
                    }
                    deadline += period;
                }
            }
        }
        self.renderer
    }

    fn apply(&mut self, cmd: Command) {
        match cmd {
            Command::SetChain {
                irs,
                condition,
                crossfade,
            } => self.renderer.set_chain(irs, condition, false, crossfade),
            Command::Play => self.renderer.play(true),
            Command::Stop => self.renderer.stop(true),
            Command::SetSources(bank) => self.renderer.set_sources(bank),
        }
    }
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("unknown condition {0}")]
    UnknownCondition(ConditionId),
    #[error("unknown seat {0}")]
    UnknownSeat(String),
    #[error("unknown source sample {0:?}")]
    UnknownSample(String),
    #[error("no seat selected")]
    NoSeat,
    #[error("engine command queue is full")]
    Busy,
    #[error(transparent)]
    Arir(#[from] ArirError),
}

/// What the router needs from the audio side.
pub trait EngineControl {
    fn select_seat(&mut self, seat: SeatId) -> Result<(), ControlError>;
    fn switch_condition(&mut self, condition: ConditionId) -> Result<(), ControlError>;
    fn set_orientation(&mut self, orientation: Orientation);
    fn play(&mut self) -> Result<(), ControlError>;
    fn stop(&mut self) -> Result<(), ControlError>;
    /// Puts the named sample on every source position.
    fn select_sample(&mut self, id: &str) -> Result<(), ControlError>;
    fn is_playing(&self) -> bool;
}

/// [`EngineControl`] over a running [`AudioEngine`]. Impulse responses are
/// transformed here, on the control thread, and cached per (condition, seat).
pub struct LiveEngine {
    set: Arc<ArirSet>,
    engine: AudioEngine,
    block: usize,
    samples: BTreeMap<String, Arc<SourceSample>>,
    cache: Vec<Arc<PreparedIrs>>,
    seat: Option<SeatId>,
    condition: ConditionId,
    playing: bool,
}

impl LiveEngine {
    pub fn new(
        set: Arc<ArirSet>,
        engine: AudioEngine,
        block: usize,
        samples: impl IntoIterator<Item = SourceSample>,
    ) -> Self {
        Self {
            set,
            engine,
            block,
            samples: samples.into_iter().map(|s| (s.id.clone(), Arc::new(s))).collect(),
            cache: Vec::with_capacity(IRS_CACHE),
            seat: None,
            condition: ConditionId::Reference,
            playing: false,
        }
    }

    pub fn engine(&self) -> &AudioEngine {
        &self.engine
    }

    pub fn into_engine(self) -> AudioEngine {
        self.engine
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(String::as_str)
    }

    fn prepared(&mut self, condition: &ConditionId, seat: SeatId) -> Result<Arc<PreparedIrs>, ControlError> {
        let data = condition.data_condition();
        if let Some(i) = self
            .cache
            .iter()
            .position(|p| *p.condition() == data && p.seat() == seat)
        {
            let hit = self.cache.remove(i);
            self.cache.push(hit.clone());
            return Ok(hit);
        }
        let started = Instant::now();
        let irs = Arc::new(PreparedIrs::prepare(&self.set, condition, seat, self.block)?);
        debug!("prepared {data}@{seat} in {:?}", started.elapsed());
        if self.cache.len() == IRS_CACHE {
            self.cache.remove(0);
        }
        self.cache.push(irs.clone());
        Ok(irs)
    }

    fn push(&mut self, cmd: Command) -> Result<(), ControlError> {
        self.engine.collect_garbage();
        self.engine.send(cmd).map_err(|_| ControlError::Busy)
    }

    fn install(&mut self) -> Result<(), ControlError> {
        let seat = self.seat.ok_or(ControlError::NoSeat)?;
        let condition = self.condition.clone();
        let irs = self.prepared(&condition, seat)?;
        self.push(Command::SetChain {
            irs,
            condition,
            crossfade: true,
        })
    }
}

impl EngineControl for LiveEngine {
    fn select_seat(&mut self, seat: SeatId) -> Result<(), ControlError> {
        if !self.set.seats().any(|s| s == seat) {
            return Err(ControlError::UnknownSeat(seat.label()));
        }
        let previous = self.seat.replace(seat);
        self.install().inspect_err(|_| self.seat = previous)
    }

    fn switch_condition(&mut self, condition: ConditionId) -> Result<(), ControlError> {
        if !self.set.has_condition(&condition) {
            return Err(ControlError::UnknownCondition(condition));
        }
        let previous = std::mem::replace(&mut self.condition, condition);
        if self.seat.is_none() {
            return Ok(());
        }
        self.install().inspect_err(|_| {
            self.condition = previous;
        })
    }

    fn set_orientation(&mut self, orientation: Orientation) {
        self.engine.set_orientation(orientation);
    }

    fn play(&mut self) -> Result<(), ControlError> {
        self.push(Command::Play)?;
        self.playing = true;
        Ok(())
    }

    fn stop(&mut self) -> Result<(), ControlError> {
        self.push(Command::Stop)?;
        self.playing = false;
        Ok(())
    }

    fn select_sample(&mut self, id: &str) -> Result<(), ControlError> {
        let sample = self
            .samples
            .get(id)
            .cloned()
            .ok_or_else(|| ControlError::UnknownSample(id.to_owned()))?;
        let bank: SourceBank = (0..self.set.source_count()).map(|_| Some(sample.clone())).collect();
        self.push(Command::SetSources(Arc::new(bank)))
    }

    fn is_playing(&self) -> bool {
        self.playing
    }
}
