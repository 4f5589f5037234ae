//! Ambisonic to binaural decoding with an FIR bank (one filter per
//! channel and ear).
//!
//! On disk a decoder is a WAV file with `2 * (order + 1)^2` channels ordered
//! `acn0_L, acn0_R, acn1_L, acn1_R, ...`; its length is the filter length.

use std::path::Path;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use thiserror::Error;

use super::block::AudioBlock;
use super::partition::{partitions_for, FftPair, PartitionedIr, SpectrumHistory};
use crate::arir::Convention;
use crate::wav;

#[derive(Debug, Error, PartialEq)]
pub enum DecoderError {
    #[error("decoder expects {expected} channels, block has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("block has {found} frames, stage runs {expected}")]
    BlockSizeMismatch { expected: usize, found: usize },
    #[error("decoder filters must have at least one tap")]
    EmptyFilter,
    #[error("decoder filter for channel {channel} contains non-finite taps")]
    NonFinite { channel: usize },
    #[error("decoder file {path}: {reason}")]
    BadFile { path: String, reason: String },
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BinauralDecoder {
    order: usize,
    convention: Convention,
    firs: Vec<[Vec<f64>; 2]>,
}

impl BinauralDecoder {
    pub fn new(order: usize, convention: Convention, firs: Vec<[Vec<f64>; 2]>) -> Result<Self, DecoderError> {
        let n = (order + 1) * (order + 1);
        if firs.len() != n {
            return Err(DecoderError::DimensionMismatch {
                expected: n,
                found: firs.len(),
            });
        }
        for (c, pair) in firs.iter().enumerate() {
            for fir in pair {
                if fir.is_empty() {
                    return Err(DecoderError::EmptyFilter);
                }
                if fir.iter().any(|v| !v.is_finite()) {
                    return Err(DecoderError::NonFinite { channel: c });
                }
            }
        }
        Ok(Self {
            order,
            convention,
            firs,
        })
    }

    /// Both ears receive the omnidirectional channel unchanged.
    pub fn omni_passthrough(order: usize, convention: Convention) -> Self {
        let n = (order + 1) * (order + 1);
        let mut firs = vec![[vec![0.0], vec![0.0]]; n];
        firs[0] = [vec![1.0], vec![1.0]];
        Self {
            order,
            convention,
            firs,
        }
    }

    /// Two virtual first-order cardioids facing +/-90 degrees azimuth.
    /// Higher-order channels are ignored.
    pub fn cardioid_pair(order: usize, convention: Convention) -> Self {
        let n = (order + 1) * (order + 1);
        // the first-order Y channel is sin(az)cos(el) in SN3D, sqrt(3) times that in N3D
        let y_gain = match convention {
            Convention::AcnSn3d => 0.5,
            Convention::AcnN3d => 0.5 / 3f64.sqrt(),
        };
        let mut firs = vec![[vec![0.0], vec![0.0]]; n];
        firs[0] = [vec![0.5], vec![0.5]];
        firs[1] = [vec![y_gain], vec![-y_gain]];
        Self {
            order,
            convention,
            firs,
        }
    }

    pub fn load(path: &Path, order: usize, convention: Convention) -> Result<Self, DecoderError> {
        let bad = |reason: String| DecoderError::BadFile {
            path: path.display().to_string(),
            reason,
        };
        let data = wav::read_wav(path).map_err(|e| bad(e.to_string()))?;
        let n = (order + 1) * (order + 1);
        if data.channels.len() != 2 * n {
            return Err(bad(format!(
                "expected {} channels for order {order}, found {}",
                2 * n,
                data.channels.len()
            )));
        }
        let mut it = data.channels.into_iter();
        let firs = (0..n)
            .map(|_| [it.next().unwrap(), it.next().unwrap()])
            .collect();
        Self::new(order, convention, firs)
    }

    pub fn save(&self, path: &Path, sample_rate: u32) -> Result<(), hound::Error> {
        let taps = self.taps();
        let channels: Vec<Vec<f64>> = self
            .firs
            .iter()
            .flat_map(|pair| pair.iter())
            .map(|fir| {
                let mut v = fir.clone();
                v.resize(taps, 0.0);
                v
            })
            .collect();
        wav::write_wav(path, sample_rate, &channels)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn channel_count(&self) -> usize {
        self.firs.len()
    }

    /// Longest filter length.
    pub fn taps(&self) -> usize {
        self.firs
            .iter()
            .flat_map(|p| p.iter().map(Vec::len))
            .max()
            .unwrap_or(0)
    }

    pub fn fir(&self, channel: usize, ear: usize) -> &[f64] {
        &self.firs[channel][ear]
    }

    /// Streaming decoder state for blocks of exactly `block` frames.
    pub fn stage(&self, block: usize) -> DecoderStage {
        DecoderStage::new(Arc::new(PreparedDecoder::new(self, block)), block)
    }
}

/// Frequency-domain decoder filters for one block size.
pub struct PreparedDecoder {
    block: usize,
    partitions: usize,
    filters: Vec<[PartitionedIr; 2]>,
}

impl PreparedDecoder {
    pub fn new(decoder: &BinauralDecoder, block: usize) -> Self {
        let mut fft = FftPair::new(block);
        let filters = decoder
            .firs
            .iter()
            .map(|[l, r]| [PartitionedIr::new(l, &mut fft), PartitionedIr::new(r, &mut fft)])
            .collect();
        Self {
            block,
            partitions: partitions_for(decoder.taps(), block),
            filters,
        }
    }
}

/// Per-chain streaming state of a decoder.
pub struct DecoderStage {
    prepared: Arc<PreparedDecoder>,
    fft: FftPair,
    histories: Vec<SpectrumHistory>,
    prev: Vec<Vec<f64>>,
    acc: Vec<Complex64>,
}

impl DecoderStage {
    pub fn new(prepared: Arc<PreparedDecoder>, block: usize) -> Self {
        assert_eq!(prepared.block, block);
        let fft = FftPair::new(block);
        let n = prepared.filters.len();
        Self {
            histories: vec![SpectrumHistory::new(prepared.partitions, fft.bins()); n],
            prev: vec![vec![0.0; block]; n],
            acc: vec![Complex64::default(); fft.bins()],
            prepared,
            fft,
        }
    }

    /// Another stage sharing the same filters, with fresh state.
    pub fn sibling(&self) -> Self {
        Self::new(Arc::clone(&self.prepared), self.prepared.block)
    }

    pub fn channel_count(&self) -> usize {
        self.prepared.filters.len()
    }

    pub fn block(&self) -> usize {
        self.prepared.block
    }

    pub fn reset(&mut self) {
        for h in &mut self.histories {
            h.reset();
        }
        for p in &mut self.prev {
            p.fill(0.0);
        }
    }

    /// Copies the signal history of `other`; both must share the same filters' shape.
    pub fn copy_state_from(&mut self, other: &DecoderStage) {
        for (d, s) in self.histories.iter_mut().zip(&other.histories) {
            d.copy_from(s);
        }
        for (d, s) in self.prev.iter_mut().zip(&other.prev) {
            d.copy_from_slice(s);
        }
    }

    /// Decodes one block into a two-channel `output`.
    pub fn process(&mut self, input: &AudioBlock, output: &mut AudioBlock) -> Result<(), DecoderError> {
        let n = self.channel_count();
        if input.channels() != n {
            return Err(DecoderError::DimensionMismatch {
                expected: n,
                found: input.channels(),
            });
        }
        let b = self.block();
        if input.frames() != b || output.frames() != b || output.channels() != 2 {
            return Err(DecoderError::BlockSizeMismatch {
                expected: b,
                found: input.frames(),
            });
        }
        for c in 0..n {
            let history = &mut self.histories[c];
            history.advance();
            self.fft
                .forward_window(&self.prev[c], input.channel(c), history.current_mut());
            self.prev[c].copy_from_slice(input.channel(c));
        }
        for ear in [LEFT, RIGHT] {
            self.acc.fill(Complex64::default());
            for c in 0..n {
                self.histories[c].accumulate(&self.prepared.filters[c][ear], 0, &mut self.acc);
            }
            let tail = self.fft.inverse_tail(&mut self.acc);
            output.channel_mut(ear).copy_from_slice(tail);
        }
        Ok(())
    }
}

/// Decodes one block, allocating the output.
pub fn binaural_decode(stage: &mut DecoderStage, block: &AudioBlock) -> Result<AudioBlock, DecoderError> {
    let mut out = AudioBlock::new(2, block.frames());
    stage.process(block, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mushra_oracle::{direct_convolution, max_abs_diff, random_signal};

    fn blocks_of(channels: &[Vec<f64>], block: usize) -> Vec<AudioBlock> {
        let frames = channels[0].len();
        (0..frames / block)
            .map(|i| {
                let chunk: Vec<Vec<f64>> =
                    channels.iter().map(|c| c[i * block..(i + 1) * block].to_vec()).collect();
                AudioBlock::from_channels(&chunk)
            })
            .collect()
    }

    #[test]
    fn omni_passthrough_copies_w() {
        let dec = BinauralDecoder::omni_passthrough(2, Convention::AcnSn3d);
        let mut stage = dec.stage(64);
        let channels: Vec<Vec<f64>> = (0..9).map(|c| random_signal(256, c)).collect();
        for (i, block) in blocks_of(&channels, 64).iter().enumerate() {
            let out = binaural_decode(&mut stage, block).unwrap();
            let w = &channels[0][i * 64..(i + 1) * 64];
            assert!(max_abs_diff(out.channel(LEFT), w) < 1e-12);
            assert!(max_abs_diff(out.channel(RIGHT), w) < 1e-12);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let dec = BinauralDecoder::cardioid_pair(2, Convention::AcnSn3d);
        let mut stage = dec.stage(32);
        let out = binaural_decode(&mut stage, &AudioBlock::new(9, 32)).unwrap();
        assert!(out.channel(0).iter().chain(out.channel(1)).all(|&v| v == 0.0));
    }

    #[test]
    fn random_bank_matches_direct_convolution_sum() {
        let firs: Vec<[Vec<f64>; 2]> = (0..9)
            .map(|c| [random_signal(64, 100 + c), random_signal(64, 200 + c)])
            .collect();
        let dec = BinauralDecoder::new(2, Convention::AcnSn3d, firs.clone()).unwrap();
        let frames = 2048;
        let channels: Vec<Vec<f64>> = (0..9).map(|c| random_signal(frames, 300 + c as u64)).collect();
        let mut expected = [vec![0.0; frames], vec![0.0; frames]];
        for c in 0..9 {
            for ear in 0..2 {
                let y = direct_convolution(&channels[c], &firs[c][ear]);
                for (e, v) in expected[ear].iter_mut().zip(y) {
                    *e += v;
                }
            }
        }
        let mut stage = dec.stage(128);
        let mut got = [Vec::new(), Vec::new()];
        for block in blocks_of(&channels, 128) {
            let out = binaural_decode(&mut stage, &block).unwrap();
            got[0].extend_from_slice(out.channel(0));
            got[1].extend_from_slice(out.channel(1));
        }
        assert!(max_abs_diff(&expected[0], &got[0]) <= 1e-6);
        assert!(max_abs_diff(&expected[1], &got[1]) <= 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dec = BinauralDecoder::omni_passthrough(2, Convention::AcnSn3d);
        let mut stage = dec.stage(16);
        assert!(matches!(
            binaural_decode(&mut stage, &AudioBlock::new(4, 16)),
            Err(DecoderError::DimensionMismatch { expected: 9, found: 4 })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dec.wav");
        let firs: Vec<[Vec<f64>; 2]> = (0..9)
            .map(|c| {
                let q = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect::<Vec<_>>();
                [q(random_signal(16, c)), q(random_signal(16, 50 + c))]
            })
            .collect();
        let dec = BinauralDecoder::new(2, Convention::AcnSn3d, firs).unwrap();
        dec.save(&path, 48_000).unwrap();
        let back = BinauralDecoder::load(&path, 2, Convention::AcnSn3d).unwrap();
        assert_eq!(back, dec);
        assert!(matches!(
            BinauralDecoder::load(&path, 1, Convention::AcnSn3d),
            Err(DecoderError::BadFile { .. })
        ));
    }
}
