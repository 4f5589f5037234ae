use realfft::num_complex::Complex64;
use thiserror::Error;

use super::partition::{partitions_for, FftPair, PartitionedIr, SpectrumHistory};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConvolverError {
    #[error("impulse response is empty")]
    EmptyIr,
    #[error("block size {0} is not a non-zero power of two")]
    InvalidBlockSize(usize),
}

/// Streaming zero-latency convolver with uniform frequency-domain partitions.
///
/// Input may arrive in chunks of any length; output for each chunk is the
/// corresponding slice of the linear convolution.
pub struct Convolver {
    fft: FftPair,
    ir: PartitionedIr,
    history: SpectrumHistory,
    block: usize,
    prev: Vec<f64>,
    cur: Vec<f64>,
    fill: usize,
    older: Vec<Complex64>,
    acc: Vec<Complex64>,
}

/// Builds a convolver for `ir`. `block` is the nominal host block size and
/// `partition` the FFT partition length; both must be powers of two.
pub fn make_convolver(ir: &[f64], block: usize, partition: usize) -> Result<Convolver, ConvolverError> {
    if ir.is_empty() {
        return Err(ConvolverError::EmptyIr);
    }
    for size in [block, partition] {
        if size == 0 || !size.is_power_of_two() {
            return Err(ConvolverError::InvalidBlockSize(size));
        }
    }
    let mut fft = FftPair::new(partition);
    let pir = PartitionedIr::new(ir, &mut fft);
    let bins = fft.bins();
    Ok(Convolver {
        history: SpectrumHistory::new(partitions_for(ir.len(), partition), bins),
        ir: pir,
        block,
        prev: vec![0.0; partition],
        cur: vec![0.0; partition],
        fill: 0,
        older: vec![Complex64::default(); bins],
        acc: vec![Complex64::default(); bins],
        fft,
    })
}

impl Convolver {
    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn partition_size(&self) -> usize {
        self.fft.partition()
    }

    /// Convolves `input` into `output` (same length).
    pub fn process(&mut self, input: &[f64], output: &mut [f64]) {
        assert_eq!(input.len(), output.len());
        let b = self.fft.partition();
        let mut done = 0;
        while done < input.len() {
            let start = self.fill;
            let n = (b - start).min(input.len() - done);
            self.cur[start..start + n].copy_from_slice(&input[done..done + n]);
            if start == 0 {
                self.older.fill(Complex64::default());
                self.history.accumulate(&self.ir, 1, &mut self.older);
            }
            let end = start + n;
            self.fft
                .forward_window(&self.prev, &self.cur[..end], self.history.current_mut());
            self.acc.copy_from_slice(&self.older);
            // only the newest slot changed, so only partition 0 is recomputed
            self.history.accumulate_range(&self.ir, 0, 1, &mut self.acc);
            let tail = self.fft.inverse_tail(&mut self.acc);
            output[done..done + n].copy_from_slice(&tail[start..end]);
            self.fill = end;
            done += n;
            if self.fill == b {
                std::mem::swap(&mut self.prev, &mut self.cur);
                self.cur.fill(0.0);
                self.fill = 0;
                self.history.advance();
            }
        }
    }

    pub fn reset(&mut self) {
        self.history.reset();
        self.prev.fill(0.0);
        self.cur.fill(0.0);
        self.fill = 0;
    }
}
