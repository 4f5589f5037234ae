//! Block renderer: sources -> per-seat ARIR convolution -> sum -> SH rotation
//! -> binaural decode -> optional anchor low-pass -> crossfade/transport gain.
//!
//! Every source keeps one spectrum history that all impulse responses share,
//! so switching condition or seat swaps only the filter spectra and the new
//! chain immediately carries the full reverberant tail. Switches while
//! playing run both chains for one equal-power crossfade.
//!
//! Nothing in [`Renderer::process`] allocates, locks or performs I/O. Data
//! that has to be released is parked in a preallocated retire list and
//! handed back through [`Renderer::take_retired`].

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use thiserror::Error;

use super::anchor::{AnchorFilter, ANCHOR_CUTOFF_HZ};
use super::block::AudioBlock;
use super::decoder::{BinauralDecoder, DecoderError, DecoderStage};
use super::partition::{partitions_for, FftPair, PartitionedIr, SpectrumHistory};
use super::rotation::{apply_rotation, Orientation, ShRotationMatrix};
use crate::arir::{AmbisonicConfig, ArirError, ArirSet, ConditionId, SeatId, SourceId, SourceSample};

pub const DEFAULT_BLOCK: usize = 512;
pub const DEFAULT_CROSSFADE_SECONDS: f64 = 0.05;

const RETIRE_CAPACITY: usize = 16;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("transport is stopped")]
    NotPlaying,
    #[error("no binaural decoder configured")]
    MissingDecoder,
    #[error("unknown condition {0}")]
    UnknownCondition(ConditionId),
    #[error("unknown seat {0}")]
    UnknownSeat(String),
    #[error("no seat/condition selected")]
    NothingSelected,
    #[error("{given} source samples for {available} source positions")]
    TooManySources { given: usize, available: usize },
    #[error("orientation trajectory timestamps must be non-decreasing (index {0})")]
    TrajectoryNotMonotonic(usize),
    #[error("sample {id} runs at {found} Hz, engine at {expected} Hz")]
    SampleRateMismatch { id: String, expected: u32, found: u32 },
    #[error("block size {0} is not a non-zero power of two")]
    InvalidBlockSize(usize),
    #[error("decoder is order {decoder}, dataset is order {dataset}")]
    DecoderOrderMismatch { decoder: usize, dataset: usize },
    #[error("decoder convention does not match the dataset")]
    DecoderConventionMismatch,
    #[error("output block must be 2 x {expected} frames")]
    OutputShape { expected: usize },
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Arir(#[from] ArirError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Frames per block; also the convolution partition size.
    pub block: usize,
    /// Crossfade and transport fade length in frames.
    pub crossfade: usize,
}

impl RenderConfig {
    pub fn new(block: usize, sample_rate: u32) -> Self {
        Self {
            block,
            crossfade: (DEFAULT_CROSSFADE_SECONDS * f64::from(sample_rate)).round() as usize,
        }
    }
}

/// Frequency-domain ARIR partitions of one (condition, seat) for all sources.
pub struct PreparedIrs {
    condition: ConditionId,
    seat: SeatId,
    block: usize,
    // [source][channel]
    per_source: Vec<Vec<PartitionedIr>>,
}

impl PreparedIrs {
    /// Transforms the impulse responses; allocates, so call it off the audio thread.
    pub fn prepare(set: &ArirSet, condition: &ConditionId, seat: SeatId, block: usize) -> Result<Self, ArirError> {
        let mut fft = FftPair::new(block);
        let per_source = (0..set.source_count())
            .map(|k| {
                let ir = set.get_arir(condition, seat, SourceId(k))?;
                Ok(ir
                    .channels()
                    .iter()
                    .map(|ch| PartitionedIr::new(ch, &mut fft))
                    .collect())
            })
            .collect::<Result<_, ArirError>>()?;
        Ok(Self {
            condition: condition.data_condition(),
            seat,
            block,
            per_source,
        })
    }

    /// Stored condition the data came from (virtual conditions resolved).
    pub fn condition(&self) -> &ConditionId {
        &self.condition
    }

    pub fn seat(&self) -> SeatId {
        self.seat
    }
}

/// One sample slot per source position.
pub type SourceBank = Vec<Option<Arc<SourceSample>>>;

/// Something the renderer no longer needs, returned for release elsewhere.
pub enum Retired {
    Irs(Arc<PreparedIrs>),
    Sources(Arc<SourceBank>),
}

/// Snapshot of the live render state.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub seat: Option<SeatId>,
    pub active_condition: Option<ConditionId>,
    pub playing: bool,
    pub playhead: u64,
    pub orientation: Orientation,
    pub anchor_enabled: bool,
    pub crossfade_remaining: usize,
}

struct ChainTarget {
    irs: Arc<PreparedIrs>,
    condition: ConditionId,
    anchor: bool,
}

struct Chain {
    irs: Option<Arc<PreparedIrs>>,
    condition: Option<ConditionId>,
    anchor: bool,
    decoder: DecoderStage,
    filter: AnchorFilter,
    out: AudioBlock,
    filtered: AudioBlock,
}

struct SourceSlot {
    sample: Option<Arc<SourceSample>>,
    history: SpectrumHistory,
    prev: Vec<f64>,
    cur: Vec<f64>,
}

struct Transport {
    playing: bool,
    gain: f64,
    target: f64,
    stop_after_fade: bool,
    playhead: u64,
}

pub struct Renderer {
    config: AmbisonicConfig,
    render: RenderConfig,
    fft: FftPair,
    bank: Arc<SourceBank>,
    pending_bank: Option<Arc<SourceBank>>,
    slots: Vec<SourceSlot>,
    chains: [Chain; 2],
    active: usize,
    fade_pos: Option<usize>,
    pending_chain: Option<ChainTarget>,
    orientation: Orientation,
    rotation: ShRotationMatrix,
    rotation_dirty: bool,
    transport: Transport,
    ambi: AudioBlock,
    rotated: AudioBlock,
    acc: Vec<Complex64>,
    retired: Vec<Retired>,
    nonfinite: u64,
}

impl Renderer {
    /// `max_ir_len` bounds the impulse responses this renderer will be given.
    pub fn new(
        config: AmbisonicConfig,
        render: RenderConfig,
        decoder: &BinauralDecoder,
        sources: usize,
        max_ir_len: usize,
    ) -> Result<Self, RenderError> {
        if render.block == 0 || !render.block.is_power_of_two() {
            return Err(RenderError::InvalidBlockSize(render.block));
        }
        if decoder.order() != config.order {
            return Err(RenderError::DecoderOrderMismatch {
                decoder: decoder.order(),
                dataset: config.order,
            });
        }
        if decoder.convention() != config.convention {
            return Err(RenderError::DecoderConventionMismatch);
        }
        let b = render.block;
        let n = config.channel_count();
        let fft = FftPair::new(b);
        let parts = partitions_for(max_ir_len, b);
        let rate = f64::from(config.sample_rate);
        let filter = AnchorFilter::new(ANCHOR_CUTOFF_HZ.min(rate * 0.45), rate, 2)
            .expect("cutoff clamped below nyquist");
        let stage = decoder.stage(b);
        let make_chain = |decoder: DecoderStage| Chain {
            irs: None,
            condition: None,
            anchor: false,
            decoder,
            filter: filter.clone(),
            out: AudioBlock::new(2, b),
            filtered: AudioBlock::new(2, b),
        };
        let second = stage.sibling();
        Ok(Self {
            slots: (0..sources)
                .map(|_| SourceSlot {
                    sample: None,
                    history: SpectrumHistory::new(parts, fft.bins()),
                    prev: vec![0.0; b],
                    cur: vec![0.0; b],
                })
                .collect(),
            bank: Arc::new(vec![None; sources]),
            pending_bank: None,
            chains: [make_chain(stage), make_chain(second)],
            active: 0,
            fade_pos: None,
            pending_chain: None,
            orientation: Orientation::IDENTITY,
            rotation: ShRotationMatrix::identity(config.order),
            rotation_dirty: false,
            transport: Transport {
                playing: false,
                gain: 0.0,
                target: 0.0,
                stop_after_fade: false,
                playhead: 0,
            },
            ambi: AudioBlock::new(n, b),
            rotated: AudioBlock::new(n, b),
            acc: vec![Complex64::default(); fft.bins()],
            retired: Vec::with_capacity(RETIRE_CAPACITY),
            nonfinite: 0,
            fft,
            config,
            render,
        })
    }

    pub fn block_size(&self) -> usize {
        self.render.block
    }

    pub fn config(&self) -> AmbisonicConfig {
        self.config
    }

    pub fn playhead(&self) -> u64 {
        self.transport.playhead
    }

    pub fn is_playing(&self) -> bool {
        self.transport.playing
    }

    /// Samples replaced because they were not finite.
    pub fn nonfinite_count(&self) -> u64 {
        self.nonfinite
    }

    pub fn state(&self) -> EngineState {
        let chain = &self.chains[self.active];
        let target = self.pending_chain.as_ref();
        EngineState {
            seat: target.map(|t| t.irs.seat).or(chain.irs.as_ref().map(|i| i.seat)),
            active_condition: target.map(|t| t.condition.clone()).or(chain.condition.clone()),
            playing: self.transport.playing,
            playhead: self.transport.playhead,
            orientation: self.orientation,
            anchor_enabled: target.map_or(chain.anchor, |t| t.anchor),
            crossfade_remaining: self
                .fade_pos
                .map_or(0, |p| self.render.crossfade.saturating_sub(p)),
        }
    }

    pub fn take_retired(&mut self) -> Option<Retired> {
        self.retired.pop()
    }

    fn retire(&mut self, item: Retired) {
        if self.retired.len() < RETIRE_CAPACITY {
            self.retired.push(item);
        }
        // otherwise dropped here; only happens if nobody drains the list
    }

    /// Installs new impulse responses. With `crossfade` set and the
    /// transport running, both chains are mixed for one crossfade; a switch
    /// requested during a crossfade waits for it to finish (latest wins).
    pub fn set_chain(&mut self, irs: Arc<PreparedIrs>, condition: ConditionId, anchor: bool, crossfade: bool) {
        debug_assert_eq!(irs.block, self.render.block);
        let anchor = anchor || condition.uses_anchor();
        let target = ChainTarget { irs, condition, anchor };
        let fading = self.transport.playing && crossfade && self.render.crossfade > 0;
        if self.fade_pos.is_some() {
            if let Some(old) = self.pending_chain.replace(target) {
                self.retire(Retired::Irs(old.irs));
            }
            return;
        }
        if !fading || self.chains[self.active].irs.is_none() {
            let chain = &mut self.chains[self.active];
            let old = chain.irs.replace(target.irs);
            chain.condition = Some(target.condition);
            chain.anchor = target.anchor;
            if let Some(old) = old {
                self.retire(Retired::Irs(old));
            }
            return;
        }
        self.start_fade(target);
    }

    fn start_fade(&mut self, target: ChainTarget) {
        let incoming = 1 - self.active;
        let (a, b) = self.chains.split_at_mut(1);
        let (from, to) = if self.active == 0 {
            (&a[0], &mut b[0])
        } else {
            (&b[0], &mut a[0])
        };
        to.decoder.copy_state_from(&from.decoder);
        to.filter.copy_state_from(&from.filter);
        let old = to.irs.replace(target.irs);
        to.condition = Some(target.condition);
        to.anchor = target.anchor;
        if let Some(old) = old {
            self.retire(Retired::Irs(old));
        }
        self.active = incoming;
        self.fade_pos = Some(0);
    }

    /// Prepares and installs `to` at the current seat (allocates).
    pub fn switch_condition(&mut self, set: &ArirSet, to: ConditionId) -> Result<(), RenderError> {
        if !set.has_condition(&to) {
            return Err(RenderError::UnknownCondition(to));
        }
        let seat = self.state().seat.ok_or(RenderError::NothingSelected)?;
        let irs = PreparedIrs::prepare(set, &to, seat, self.render.block)?;
        self.set_chain(Arc::new(irs), to, false, true);
        Ok(())
    }

    /// Prepares and installs `seat` for the current condition (allocates).
    pub fn select_seat(&mut self, set: &ArirSet, seat: SeatId, condition: Option<ConditionId>) -> Result<(), RenderError> {
        let condition = condition
            .or_else(|| self.state().active_condition)
            .unwrap_or(ConditionId::Reference);
        if !set.has_condition(&condition) {
            return Err(RenderError::UnknownCondition(condition));
        }
        if !set.seats().any(|s| s == seat) {
            return Err(RenderError::UnknownSeat(seat.label()));
        }
        let irs = PreparedIrs::prepare(set, &condition, seat, self.render.block)?;
        self.set_chain(Arc::new(irs), condition, false, true);
        Ok(())
    }

    /// Latest orientation wins; applied at the next block boundary.
    pub fn set_orientation(&mut self, orientation: Orientation) {
        self.orientation = orientation;
        self.rotation_dirty = true;
    }

    /// Replaces the source samples. While playing, the output fades out, the
    /// playhead restarts at zero with the new samples, and it fades back in.
    pub fn set_sources(&mut self, bank: Arc<SourceBank>) {
        if self.transport.playing && self.render.crossfade > 0 && self.transport.gain > 0.0 {
            if let Some(old) = self.pending_bank.replace(bank) {
                self.retire(Retired::Sources(old));
            }
            self.transport.target = 0.0;
        } else {
            self.install_bank(bank);
        }
    }

    fn install_bank(&mut self, bank: Arc<SourceBank>) {
        for (k, slot) in self.slots.iter_mut().enumerate() {
            slot.sample = bank.get(k).cloned().flatten().filter(|s| !s.samples.is_empty());
            slot.history.reset();
            slot.prev.fill(0.0);
        }
        for chain in &mut self.chains {
            chain.decoder.reset();
            chain.filter.reset();
        }
        self.transport.playhead = 0;
        let old = std::mem::replace(&mut self.bank, bank);
        self.retire(Retired::Sources(old));
    }

    pub fn play(&mut self, fade: bool) {
        let t = &mut self.transport;
        t.playing = true;
        t.stop_after_fade = false;
        t.target = 1.0;
        if !fade || self.render.crossfade == 0 {
            t.gain = 1.0;
        }
    }

    pub fn stop(&mut self, fade: bool) {
        let t = &mut self.transport;
        if !t.playing {
            return;
        }
        if fade && self.render.crossfade > 0 && t.gain > 0.0 {
            t.target = 0.0;
            t.stop_after_fade = true;
        } else {
            t.playing = false;
            t.gain = 0.0;
            t.target = 0.0;
        }
    }

    /// Renders one block; fails if the transport is stopped.
    pub fn render_block(&mut self, out: &mut AudioBlock) -> Result<(), RenderError> {
        if !self.transport.playing {
            return Err(RenderError::NotPlaying);
        }
        if self.chains[self.active].irs.is_none() {
            return Err(RenderError::NothingSelected);
        }
        self.process(out)
    }

    /// Real-time entry point: renders one block, or silence when stopped.
    pub fn process(&mut self, out: &mut AudioBlock) -> Result<(), RenderError> {
        let b = self.render.block;
        if out.channels() != 2 || out.frames() != b {
            return Err(RenderError::OutputShape { expected: b });
        }
        if !self.transport.playing {
            out.fill(0.0);
            return Ok(());
        }
        if self.rotation_dirty {
            self.rotation.set_from(&self.orientation);
            self.rotation_dirty = false;
        }
        self.feed_sources();
        let chain_count = if self.fade_pos.is_some() { 2 } else { 1 };
        for i in 0..chain_count {
            let idx = if i == 0 { self.active } else { 1 - self.active };
            self.run_chain(idx)?;
        }
        self.mix(out);
        self.transport.playhead += b as u64;
        self.after_block();
        Ok(())
    }

    fn feed_sources(&mut self) {
        let b = self.render.block;
        let playhead = self.transport.playhead;
        for slot in &mut self.slots {
            let Some(sample) = &slot.sample else { continue };
            let data = &sample.samples;
            let len = data.len() as u64;
            let mut pos = (playhead % len) as usize;
            for v in slot.cur.iter_mut().take(b) {
                *v = data[pos];
                pos += 1;
                if pos == data.len() {
                    pos = 0;
                }
            }
            slot.history.advance();
            self.fft
                .forward_window(&slot.prev, &slot.cur, slot.history.current_mut());
            std::mem::swap(&mut slot.prev, &mut slot.cur);
        }
    }

    fn run_chain(&mut self, idx: usize) -> Result<(), RenderError> {
        let n = self.config.channel_count();
        let chain = &mut self.chains[idx];
        match &chain.irs {
            Some(irs) => {
                for c in 0..n {
                    self.acc.fill(Complex64::default());
                    for (k, slot) in self.slots.iter().enumerate() {
                        if slot.sample.is_some() {
                            slot.history.accumulate(&irs.per_source[k][c], 0, &mut self.acc);
                        }
                    }
                    let tail = self.fft.inverse_tail(&mut self.acc);
                    self.ambi.channel_mut(c).copy_from_slice(tail);
                }
            }
            None => self.ambi.fill(0.0),
        }
        apply_rotation(&self.rotation, &self.ambi, &mut self.rotated)
            .expect("rotation matches the dataset order");
        chain.decoder.process(&self.rotated, &mut chain.out)?;
        chain.filtered.copy_from(&chain.out);
        chain.filter.process(&mut chain.filtered);
        Ok(())
    }

    fn mix(&mut self, out: &mut AudioBlock) {
        let b = self.render.block;
        let step = if self.render.crossfade > 0 {
            1.0 / self.render.crossfade as f64
        } else {
            1.0
        };
        let active = &self.chains[self.active];
        let new = if active.anchor { &active.filtered } else { &active.out };
        let fade = self.fade_pos.map(|pos| {
            let outgoing = &self.chains[1 - self.active];
            let old = if outgoing.anchor {
                &outgoing.filtered
            } else {
                &outgoing.out
            };
            (pos, old)
        });
        let start_gain = self.transport.gain;
        for ch in 0..2 {
            let mut gain = start_gain;
            let new_ch = new.channel(ch);
            let o = out.channel_mut(ch);
            for i in 0..b {
                let mut v = new_ch[i];
                if let Some((pos, old)) = fade {
                    let t = ((pos + i) as f64 / self.render.crossfade as f64).min(1.0);
                    let theta = FRAC_PI_2 * t;
                    v = theta.sin() * v + theta.cos() * old.channel(ch)[i];
                }
                gain = if gain < self.transport.target {
                    (gain + step).min(self.transport.target)
                } else {
                    (gain - step).max(self.transport.target)
                };
                v *= gain;
                if !v.is_finite() {
                    self.nonfinite += 1;
                    v = 0.0;
                }
                o[i] = v;
            }
            if ch == 1 {
                self.transport.gain = gain;
            }
        }
    }

    fn after_block(&mut self) {
        let b = self.render.block;
        if let Some(pos) = self.fade_pos {
            let pos = pos + b;
            if pos >= self.render.crossfade {
                self.fade_pos = None;
                let outgoing = 1 - self.active;
                if let Some(old) = self.chains[outgoing].irs.take() {
                    self.retire(Retired::Irs(old));
                }
                self.chains[outgoing].condition = None;
                if let Some(next) = self.pending_chain.take() {
                    self.start_fade(next);
                }
            } else {
                self.fade_pos = Some(pos);
            }
        }
        let t = &self.transport;
        if t.gain == 0.0 && t.target == 0.0 {
            if let Some(bank) = self.pending_bank.take() {
                self.install_bank(bank);
                if !self.transport.stop_after_fade {
                    self.transport.target = 1.0;
                }
            }
            if self.transport.stop_after_fade {
                self.transport.playing = false;
                self.transport.stop_after_fade = false;
            }
        }
    }
}

/// Orientation valid from `time` seconds onwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub orientation: Orientation,
}

/// Inputs of [`render_offline`].
pub struct OfflineRequest<'a> {
    pub arirs: &'a ArirSet,
    /// Sample `k` plays from source position `k`.
    pub sources: &'a [SourceSample],
    pub condition: ConditionId,
    pub seat: SeatId,
    pub trajectory: &'a [TrajectoryPoint],
    pub decoder: Option<&'a BinauralDecoder>,
    pub anchor: bool,
    pub duration: f64,
    pub config: RenderConfig,
}

/// Deterministic render through the same block path as the live engine.
/// Rotation follows the trajectory, updated at block boundaries; an empty
/// trajectory means the identity orientation. Returns left and right.
pub fn render_offline(req: &OfflineRequest<'_>) -> Result<[Vec<f64>; 2], RenderError> {
    let decoder = req.decoder.ok_or(RenderError::MissingDecoder)?;
    let cfg = req.arirs.config();
    if !req.arirs.has_condition(&req.condition) {
        return Err(RenderError::UnknownCondition(req.condition.clone()));
    }
    if !req.arirs.seats().any(|s| s == req.seat) {
        return Err(RenderError::UnknownSeat(req.seat.label()));
    }
    if req.sources.len() > req.arirs.source_count() {
        return Err(RenderError::TooManySources {
            given: req.sources.len(),
            available: req.arirs.source_count(),
        });
    }
    for s in req.sources {
        if s.sample_rate != cfg.sample_rate {
            return Err(RenderError::SampleRateMismatch {
                id: s.id.clone(),
                expected: cfg.sample_rate,
                found: s.sample_rate,
            });
        }
    }
    if let Some(i) = req
        .trajectory
        .windows(2)
        .position(|w| !(w[1].time >= w[0].time))
    {
        return Err(RenderError::TrajectoryNotMonotonic(i + 1));
    }
    let mut renderer = Renderer::new(
        cfg,
        req.config,
        decoder,
        req.arirs.source_count(),
        req.arirs.max_len(),
    )?;
    let irs = PreparedIrs::prepare(req.arirs, &req.condition, req.seat, req.config.block)?;
    renderer.set_chain(Arc::new(irs), req.condition.clone(), req.anchor, false);
    let bank: SourceBank = (0..req.arirs.source_count())
        .map(|k| req.sources.get(k).cloned().map(Arc::new))
        .collect();
    renderer.set_sources(Arc::new(bank));
    renderer.play(false);

    let rate = f64::from(cfg.sample_rate);
    let frames = (req.duration * rate).round().max(0.0) as usize;
    let b = req.config.block;
    let mut left = Vec::with_capacity(frames + b);
    let mut right = Vec::with_capacity(frames + b);
    let mut block = AudioBlock::new(2, b);
    let mut next_point = 0;
    while left.len() < frames {
        let now = left.len() as f64 / rate;
        let mut latest = None;
        while next_point < req.trajectory.len() && req.trajectory[next_point].time <= now {
            latest = Some(req.trajectory[next_point].orientation);
            next_point += 1;
        }
        if let Some(o) = latest {
            renderer.set_orientation(o);
        }
        renderer.render_block(&mut block)?;
        debug_assert!(block.is_finite());
        left.extend_from_slice(block.channel(0));
        right.extend_from_slice(block.channel(1));
    }
    left.truncate(frames);
    right.truncate(frames);
    Ok([left, right])
}
