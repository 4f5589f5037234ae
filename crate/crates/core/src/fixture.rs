//! Synthetic datasets, decoders and source signals for tests, benchmarks and
//! `mushra make-fixture`. Everything is seeded and reproducible, and all
//! sample values are exactly representable as `f32` so a write/read through
//! 32-bit float WAV is lossless.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arir::{
    ArirSet, ConditionEntry, ConditionId, Convention, ImpulseResponse, Manifest, SeatEntry, SeatId,
    SourceEntry, SourceId, SourceSample,
};
use crate::dsp::BinauralDecoder;
use crate::session::Attribute;
use crate::telemetry::{TelemetryEvent, UiKind};

pub const FIXTURE_ORDER: usize = 2;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn f32_exact(v: f64) -> f64 {
    f64::from(v as f32)
}

/// A 5x5 seminar-room layout with `sources` loudspeakers in front.
pub fn manifest(sample_rate: u32, sources: usize, conditions: &[ConditionId]) -> Manifest {
    Manifest {
        room: "fixture".into(),
        sample_rate,
        order: FIXTURE_ORDER,
        convention: Convention::AcnSn3d,
        seats: SeatId::all()
            .map(|s| SeatEntry {
                label: s.label(),
                position: [
                    2.0 + 1.2 * f64::from(s.row()),
                    -2.4 + 1.2 * f64::from(s.col()),
                    1.2,
                ],
            })
            .collect(),
        sources: (0..sources)
            .map(|k| SourceEntry {
                position: [0.5, 1.0 - 2.0 * k as f64 / sources.max(2).saturating_sub(1) as f64, 1.5],
            })
            .collect(),
        conditions: conditions
            .iter()
            .map(|c| ConditionEntry {
                id: c.clone(),
                directory: c.as_str().to_owned(),
            })
            .collect(),
    }
}

/// Exponentially decaying noise on all nine channels of every key.
pub fn random_arir_set(conditions: &[ConditionId], sources: usize, ir_len: usize, seed: u64) -> ArirSet {
    random_arir_set_at(48_000, conditions, sources, ir_len, seed)
}

pub fn random_arir_set_at(
    sample_rate: u32,
    conditions: &[ConditionId],
    sources: usize,
    ir_len: usize,
    seed: u64,
) -> ArirSet {
    let m = manifest(sample_rate, sources, conditions);
    let n = m.config().channel_count();
    let mut r = rng(seed);
    let mut rirs = BTreeMap::new();
    for c in conditions {
        for seat in SeatId::all() {
            for k in 0..sources {
                let channels = (0..n)
                    .map(|ch| {
                        let gain = if ch == 0 { 0.5 } else { 0.25 };
                        (0..ir_len)
                            .map(|i| {
                                let decay = (-6.9 * i as f64 / ir_len as f64).exp();
                                f32_exact(gain * decay * r.random_range(-1.0..1.0))
                            })
                            .collect()
                    })
                    .collect();
                rirs.insert((c.clone(), seat, SourceId(k)), ImpulseResponse::new(channels));
            }
        }
    }
    ArirSet::from_parts(m, rirs).expect("fixture is consistent")
}

/// Unit impulse on the omni channel only, delayed by `delay` samples.
pub fn impulse_arir_set(conditions: &[ConditionId], sources: usize, delay: usize) -> ArirSet {
    let m = manifest(48_000, sources, conditions);
    let n = m.config().channel_count();
    let mut rirs = BTreeMap::new();
    for c in conditions {
        for seat in SeatId::all() {
            for k in 0..sources {
                let mut channels = vec![vec![0.0; delay + 1]; n];
                channels[0][delay] = 1.0;
                rirs.insert((c.clone(), seat, SourceId(k)), ImpulseResponse::new(channels));
            }
        }
    }
    ArirSet::from_parts(m, rirs).expect("fixture is consistent")
}

/// Random FIR bank with `taps` taps per (channel, ear).
pub fn random_decoder(order: usize, taps: usize, seed: u64) -> BinauralDecoder {
    let n = (order + 1) * (order + 1);
    let mut r = rng(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let firs = (0..n)
        .map(|_| {
            let mut ear = || -> Vec<f64> {
                (0..taps)
                    .map(|i| f32_exact(scale * (-4.0 * i as f64 / taps as f64).exp() * r.random_range(-1.0..1.0)))
                    .collect()
            };
            [ear(), ear()]
        })
        .collect();
    BinauralDecoder::new(order, Convention::AcnSn3d, firs).expect("non-empty finite bank")
}

pub fn noise_source(id: &str, seconds: f64, sample_rate: u32, seed: u64) -> SourceSample {
    let mut r = rng(seed);
    let len = (seconds * f64::from(sample_rate)).round() as usize;
    let samples = (0..len).map(|_| f32_exact(0.5 * r.random_range(-1.0..1.0))).collect();
    SourceSample::new(id, samples, sample_rate)
}

pub fn sine_source(id: &str, freq: f64, seconds: f64, sample_rate: u32) -> SourceSample {
    let len = (seconds * f64::from(sample_rate)).round() as usize;
    let w = std::f64::consts::TAU * freq / f64::from(sample_rate);
    let samples = (0..len).map(|i| f32_exact(0.5 * (w * i as f64).sin())).collect();
    SourceSample::new(id, samples, sample_rate)
}

/// A telemetry-format trace that walks through `trials` complete trials with
/// the given stimulus labels: start rating, move around, audition every
/// stimulus, rate every cell and advance. Consecutive rows are `step_ms`
/// apart. Replayed against a server it finishes the session.
pub fn scripted_session(trials: usize, labels: &[&str], step_ms: u64) -> Vec<TelemetryEvent> {
    let mut out = Vec::new();
    let mut t = 0;
    let mut at = |out: &mut Vec<TelemetryEvent>, make: &dyn Fn(u64) -> TelemetryEvent| {
        t += step_ms;
        out.push(make(t));
    };
    let ui = |kind: UiKind, payload: String| move |t| TelemetryEvent::Ui { t, kind, payload: payload.clone() };
    at(&mut out, &ui(UiKind::TrialAdvance, "0".into()));
    let seats = ["B2", "D4", "A5", "E1"];
    for trial in 0..trials {
        let seat: SeatId = seats[trial % seats.len()].parse().expect("valid label");
        at(&mut out, &|t| TelemetryEvent::Teleport { t, from: None, to: seat });
        for k in 0..4 {
            let yaw = 0.3 * f64::from(k) - 0.45;
            let (s, c) = (yaw / 2.0).sin_cos();
            at(&mut out, &|t| TelemetryEvent::Pose {
                t,
                position: [2.0, 0.0, 1.5],
                orientation: [c, 0.0, 0.0, s],
            });
        }
        at(&mut out, &ui(UiKind::Play, "ref".into()));
        for label in labels {
            at(&mut out, &ui(UiKind::Play, (*label).into()));
        }
        for (a, attr) in Attribute::ALL.iter().enumerate() {
            for (l, label) in labels.iter().enumerate() {
                let value = (17 * (trial + 1) + 23 * a + 11 * l) % 101;
                at(&mut out, &ui(UiKind::Rating, format!("{},{label},{value}", attr.id())));
            }
        }
        at(&mut out, &ui(UiKind::Stop, String::new()));
        at(&mut out, &ui(UiKind::TrialAdvance, (trial + 1).to_string()));
    }
    out
}
