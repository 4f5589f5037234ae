//! Fourth-order Butterworth low-pass used to derive the anchor stimulus
//! from the reference.
//!
//! Built as two bilinear-transformed biquads with the frequency prewarped to
//! the cutoff, so the -3.01 dB point lands exactly on it.

use std::f64::consts::PI;

use thiserror::Error;

use super::block::AudioBlock;

pub const ANCHOR_CUTOFF_HZ: f64 = 3500.0;

#[derive(Debug, Error, PartialEq)]
pub enum AnchorFilterError {
    #[error("cutoff {cutoff} Hz must lie strictly between 0 and {nyquist} Hz")]
    CutoffOutOfRange { cutoff: f64, nyquist: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn lowpass(w0: f64, q: f64) -> Self {
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 - cos) / 2.0 / a0,
            b1: (1.0 - cos) / a0,
            b2: (1.0 - cos) / 2.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    fn response(&self, w: f64) -> f64 {
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b0 + self.b1 * z1.0 + self.b2 * z2.0,
            self.b1 * z1.1 + self.b2 * z2.1,
        );
        let den = (1.0 + self.a1 * z1.0 + self.a2 * z2.0, self.a1 * z1.1 + self.a2 * z2.1);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

/// Cascade of two biquads with per-channel transposed direct form II state.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorFilter {
    cutoff: f64,
    rate: f64,
    sections: [Biquad; 2],
    // [channel][section] -> (s1, s2)
    state: Vec<[[f64; 2]; 2]>,
}

/// Designs the anchor low-pass for `channels` channels.
pub fn design_anchor_filter(cutoff: f64, rate: f64) -> Result<AnchorFilter, AnchorFilterError> {
    AnchorFilter::new(cutoff, rate, 2)
}

impl AnchorFilter {
    pub fn new(cutoff: f64, rate: f64, channels: usize) -> Result<Self, AnchorFilterError> {
        let nyquist = rate / 2.0;
        if !(cutoff > 0.0 && cutoff < nyquist) {
            return Err(AnchorFilterError::CutoffOutOfRange { cutoff, nyquist });
        }
        let w0 = 2.0 * PI * cutoff / rate;
        // Butterworth pole pairs of a 4th-order prototype
        let q1 = 1.0 / (2.0 * (PI / 8.0).cos());
        let q2 = 1.0 / (2.0 * (3.0 * PI / 8.0).cos());
        Ok(Self {
            cutoff,
            rate,
            sections: [Biquad::lowpass(w0, q1), Biquad::lowpass(w0, q2)],
            state: vec![[[0.0; 2]; 2]; channels],
        })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn order(&self) -> usize {
        4
    }

    /// All poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    /// Analytic magnitude response at `freq` Hz.
    pub fn magnitude(&self, freq: f64) -> f64 {
        let w = 2.0 * PI * freq / self.rate;
        self.sections.iter().map(|s| s.response(w)).product()
    }

    pub fn reset(&mut self) {
        for ch in &mut self.state {
            *ch = [[0.0; 2]; 2];
        }
    }

    pub fn copy_state_from(&mut self, other: &AnchorFilter) {
        self.state.copy_from_slice(&other.state);
    }

    /// Filters one channel in place using that channel's state.
    pub fn process_channel(&mut self, channel: usize, samples: &mut [f64]) {
        let state = &mut self.state[channel];
        for (sec, st) in self.sections.iter().zip(state.iter_mut()) {
            for x in samples.iter_mut() {
                let y = sec.b0 * *x + st[0];
                st[0] = sec.b1 * *x - sec.a1 * y + st[1];
                st[1] = sec.b2 * *x - sec.a2 * y;
                *x = y;
            }
        }
    }

    /// Filters every channel of `block` in place.
    pub fn process(&mut self, block: &mut AudioBlock) {
        for c in 0..block.channels().min(self.state.len()) {
            self.process_channel(c, block.channel_mut(c));
        }
    }
}
