//! Multichannel waveform I/O and STFT analysis/synthesis.

pub mod stft;
pub mod wav;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use stft::{istft, stft, SpectrogramTensor};
pub use wav::{read_wav, write_wav, BitDepth};

/// A multichannel time-domain signal: `(channels, samples)` with a shared
/// sample rate. The matrix layout makes equal channel lengths structural.
#[derive(Debug, Clone)]
pub struct WaveformBatch {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl WaveformBatch {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn from_mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let len = samples.len();
        let data = Array2::from_shape_vec((1, len), samples)
            .expect("shape follows from the vector length");
        Self::new(data, sample_rate)
    }

    /// Stack single-channel batches into one multichannel batch.
    pub fn stack(channels: &[WaveformBatch]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidConfig("no channels to stack".into()));
        }
        let rate = channels[0].sample_rate;
        let len = channels[0].len();
        let mut data = Array2::zeros((channels.iter().map(|c| c.channels()).sum(), len));
        let mut row = 0;
        for ch in channels {
            if ch.sample_rate != rate || ch.len() != len {
                return Err(Error::DimensionMismatch {
                    context: format!(
                        "cannot stack {} Hz / {} samples with {} Hz / {} samples",
                        rate,
                        len,
                        ch.sample_rate,
                        ch.len()
                    ),
                });
            }
            for c in 0..ch.channels() {
                for t in 0..len {
                    data[(row, t)] = ch.samples[(c, t)];
                }
                row += 1;
            }
        }
        Self::new(data, rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut Array2<f64> {
        &mut self.samples
    }

    pub fn channel(&self, c: usize) -> ndarray::ArrayView1<'_, f64> {
        self.samples.row(c)
    }

    pub fn channel_vec(&self, c: usize) -> Vec<f64> {
        self.samples.row(c).to_vec()
    }
}
