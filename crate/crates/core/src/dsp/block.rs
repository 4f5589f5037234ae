/// Planar multichannel block of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBlock {
    channels: usize,
    frames: usize,
    data: Vec<f64>,
}

impl AudioBlock {
    pub fn new(channels: usize, frames: usize) -> Self {
        Self {
            channels,
            frames,
            data: vec![0.0; channels * frames],
        }
    }

    pub fn from_channels(channels: &[Vec<f64>]) -> Self {
        let frames = channels.first().map_or(0, Vec::len);
        assert!(channels.iter().all(|c| c.len() == frames), "ragged block");
        Self {
            channels: channels.len(),
            frames,
            data: channels.concat(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn copy_from(&mut self, other: &AudioBlock) {
        assert_eq!((self.channels, self.frames), (other.channels, other.frames));
        self.data.copy_from_slice(&other.data);
    }

    /// Writes frames interleaved into `out` as `f32`.
    pub fn write_interleaved(&self, out: &mut [f32]) {
        assert_eq!(out.len(), self.channels * self.frames);
        for (f, frame) in out.chunks_exact_mut(self.channels).enumerate() {
            for (c, o) in frame.iter_mut().enumerate() {
                *o = self.data[c * self.frames + f] as f32;
            }
        }
    }
}
