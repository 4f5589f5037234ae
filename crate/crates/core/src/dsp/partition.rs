//! Uniform partitioned overlap-save building blocks.
//!
//! With partition size `B`, every input block is transformed together with
//! the block before it (a `2B` window). Impulse-response partitions are
//! zero-padded to `2B`. The last `B` samples of the inverse transform of
//! `sum_p X[n - p] * H[p]` are the linear convolution output for block `n`.
//!
//! The input spectra only depend on the input signal, so one
//! [`SpectrumHistory`] can be shared by any number of impulse responses and
//! an impulse response can be swapped without losing the reverberant tail.

use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

/// Forward/inverse real FFT pair of size `2 * partition` with owned scratch.
pub struct FftPair {
    partition: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    fwd_scratch: Vec<Complex64>,
    inv_scratch: Vec<Complex64>,
    window: Vec<f64>,
}

impl FftPair {
    pub fn new(partition: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(2 * partition);
        let inverse = planner.plan_fft_inverse(2 * partition);
        Self {
            partition,
            fwd_scratch: forward.make_scratch_vec(),
            inv_scratch: inverse.make_scratch_vec(),
            window: vec![0.0; 2 * partition],
            forward,
            inverse,
        }
    }

    pub fn partition(&self) -> usize {
        self.partition
    }

    /// Number of complex bins of the half spectrum.
    pub fn bins(&self) -> usize {
        self.partition + 1
    }

    /// Transforms `[head | tail]`, each `partition` long; a short `tail` is zero-padded.
    pub fn forward_window(&mut self, head: &[f64], tail: &[f64], out: &mut [Complex64]) {
        let b = self.partition;
        self.window[..b].copy_from_slice(head);
        self.window[b..b + tail.len()].copy_from_slice(tail);
        self.window[b + tail.len()..].fill(0.0);
        self.forward
            .process_with_scratch(&mut self.window, out, &mut self.fwd_scratch)
            .expect("buffer sizes match the plan");
    }

    /// Inverse transform; the spectrum is used as scratch. Returns the
    /// second half of the time-domain window (the valid overlap-save part).
    pub fn inverse_tail(&mut self, spectrum: &mut [Complex64]) -> &[f64] {
        let last = spectrum.len() - 1;
        spectrum[0].im = 0.0;
        spectrum[last].im = 0.0;
        self.inverse
            .process_with_scratch(spectrum, &mut self.window, &mut self.inv_scratch)
            .expect("buffer sizes match the plan");
        &self.window[self.partition..]
    }
}

/// Frequency-domain partitions of one FIR, pre-scaled for the unnormalized inverse FFT.
#[derive(Debug, Clone)]
pub struct PartitionedIr {
    parts: Vec<Vec<Complex64>>,
}

impl PartitionedIr {
    pub fn new(ir: &[f64], fft: &mut FftPair) -> Self {
        let b = fft.partition();
        let scale = 1.0 / (2 * b) as f64;
        let zeros = vec![0.0; b];
        let parts = ir
            .chunks(b)
            .map(|chunk| {
                let scaled: Vec<f64> = chunk.iter().map(|v| v * scale).collect();
                let mut spec = vec![Complex64::default(); fft.bins()];
                // zero-padded partition: [h_p | 0]
                fft.forward_window(&padded(&scaled, b), &zeros[..0], &mut spec);
                spec
            })
            .collect();
        Self { parts }
    }

    pub fn partitions(&self) -> usize {
        self.parts.len()
    }
}

fn padded(chunk: &[f64], len: usize) -> Vec<f64> {
    let mut v = chunk.to_vec();
    v.resize(len, 0.0);
    v
}

/// Ring of input-window spectra ("frequency-domain delay line").
#[derive(Debug, Clone)]
pub struct SpectrumHistory {
    slots: Vec<Vec<Complex64>>,
    head: usize,
}

impl SpectrumHistory {
    pub fn new(partitions: usize, bins: usize) -> Self {
        Self {
            slots: vec![vec![Complex64::default(); bins]; partitions.max(1)],
            head: 0,
        }
    }

    pub fn partitions(&self) -> usize {
        self.slots.len()
    }

    /// Slot for the newest block.
    pub fn current_mut(&mut self) -> &mut [Complex64] {
        &mut self.slots[self.head]
    }

    /// Makes room for the next block; the new current slot must be written before use.
    pub fn advance(&mut self) {
        self.head = (self.head + 1) % self.slots.len();
    }

    pub fn reset(&mut self) {
        for s in &mut self.slots {
            s.fill(Complex64::default());
        }
        self.head = 0;
    }

    /// Copies the contents of `other`, which must have the same shape. Does not allocate.
    pub fn copy_from(&mut self, other: &SpectrumHistory) {
        debug_assert_eq!(self.slots.len(), other.slots.len());
        for (d, s) in self.slots.iter_mut().zip(&other.slots) {
            d.copy_from_slice(s);
        }
        self.head = other.head;
    }

    /// `acc += sum_{p >= first} X[n - p] * H[p]`.
    pub fn accumulate(&self, ir: &PartitionedIr, first: usize, acc: &mut [Complex64]) {
        self.accumulate_range(ir, first, usize::MAX, acc);
    }

    /// Like [`accumulate`](Self::accumulate) over partitions `first..end`.
    pub fn accumulate_range(&self, ir: &PartitionedIr, first: usize, end: usize, acc: &mut [Complex64]) {
        let n = self.slots.len();
        let count = ir.parts.len().min(n).min(end);
        for p in first..count {
            let x = &self.slots[(self.head + n - p) % n];
            complex_mac(acc, x, &ir.parts[p]);
        }
    }
}

#[inline]
fn complex_mac(acc: &mut [Complex64], a: &[Complex64], b: &[Complex64]) {
    for ((o, x), h) in acc.iter_mut().zip(a).zip(b) {
        o.re += x.re * h.re - x.im * h.im;
        o.im += x.re * h.im + x.im * h.re;
    }
}

/// Partitions needed to hold `len` taps.
pub fn partitions_for(len: usize, partition: usize) -> usize {
    len.div_ceil(partition).max(1)
}
