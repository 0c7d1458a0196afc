//! STFT analysis and weighted overlap-add synthesis.
//!
//! Analysis uses a periodic Hamming window and a one-sided spectrum with
//! `window/2 + 1` bins. The signal is zero-padded by one full window at both
//! ends so every sample is covered by complete frames; synthesis divides by
//! the summed squared window and trims the pad, which makes the round trip
//! exact to round-off for any window/hop combination with positive coverage.

use ndarray::Array3;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::WaveformBatch;
use crate::error::{Error, Result};

/// Complex time-frequency tensor, indexed `(bin, frame, channel)`, together
/// with the frame geometry needed for synthesis.
#[derive(Debug, Clone)]
pub struct SpectrogramTensor {
    data: Array3<Complex64>,
    window_len: usize,
    hop_len: usize,
    sample_rate: u32,
    signal_len: usize,
}

impl SpectrogramTensor {
    /// Assemble a tensor from raw parts, validating that the frame geometry
    /// is consistent (`bins = window/2 + 1` and every frame fits inside the
    /// padded signal).
    pub fn from_parts(
        data: Array3<Complex64>,
        window_len: usize,
        hop_len: usize,
        sample_rate: u32,
        signal_len: usize,
    ) -> Result<Self> {
        let (bins, frames, _channels) = data.dim();
        if window_len < 2 || window_len % 2 != 0 || hop_len == 0 || hop_len >= window_len {
            return Err(Error::InvalidConfig(format!(
                "bad frame geometry: window {window_len}, hop {hop_len}"
            )));
        }
        if bins != window_len / 2 + 1 {
            return Err(Error::DimensionMismatch {
                context: format!("{bins} bins for a {window_len}-sample window"),
            });
        }
        let padded = signal_len + 2 * window_len;
        if frames == 0 || (frames - 1) * hop_len + window_len > padded {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "{frames} frames do not fit a padded signal of {padded} samples"
                ),
            });
        }
        Ok(Self {
            data,
            window_len,
            hop_len,
            sample_rate,
            signal_len,
        })
    }

    pub fn bins(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop_len(&self) -> usize {
        self.hop_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    /// Same frame geometry, different contents (e.g. after demixing, where the
    /// channel axis holds sources instead of microphones).
    pub fn with_data(&self, data: Array3<Complex64>) -> Self {
        assert_eq!(data.dim().0, self.bins());
        assert_eq!(data.dim().1, self.frames());
        Self {
            data,
            window_len: self.window_len,
            hop_len: self.hop_len,
            sample_rate: self.sample_rate,
            signal_len: self.signal_len,
        }
    }

    /// The spectrum of one channel at one frame stacked over all bins.
    pub fn stacked_column(&self, frame: usize, channel: usize) -> ndarray::ArrayView1<'_, Complex64> {
        self.data.slice(ndarray::s![.., frame, channel])
    }
}

/// Periodic Hamming window of length `len`.
pub fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * t as f64 / len as f64).cos())
        .collect()
}

fn duration_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// One-sided STFT of every channel.
pub fn stft(w: &WaveformBatch, window_ms: f64, hop_ms: f64) -> Result<SpectrogramTensor> {
    if !(window_ms > hop_ms && hop_ms > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need window > hop > 0, got window {window_ms} ms, hop {hop_ms} ms"
        )));
    }
    let win = duration_to_samples(window_ms, w.sample_rate());
    let hop = duration_to_samples(hop_ms, w.sample_rate());
    if win < 2 || win % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "window must be an even sample count >= 2, got {win}"
        )));
    }
    if hop == 0 || hop >= win {
        return Err(Error::InvalidConfig(format!(
            "hop of {hop} samples must be in 1..window ({win})"
        )));
    }
    let len = w.len();
    if len < win {
        return Err(Error::InputTooShort { len, window: win });
    }

    let bins = win / 2 + 1;
    let padded = len + 2 * win;
    let frames = (padded - win) / hop + 1;
    let window = hamming(win);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(win);

    let mut data = Array3::zeros((bins, frames, w.channels()));
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    for c in 0..w.channels() {
        let x = w.channel(c);
        for j in 0..frames {
            let off = j * hop;
            for t in 0..win {
                let pos = off + t;
                let sample = if pos >= win && pos < win + len {
                    x[pos - win]
                } else {
                    0.0
                };
                buf[t] = Complex64::new(sample * window[t], 0.0);
            }
            fft.process(&mut buf);
            for k in 0..bins {
                data[(k, j, c)] = buf[k];
            }
        }
    }

    Ok(SpectrogramTensor {
        data,
        window_len: win,
        hop_len: hop,
        sample_rate: w.sample_rate(),
        signal_len: len,
    })
}

/// Weighted overlap-add synthesis; the inverse of [`stft`] up to round-off.
///
/// DC and Nyquist bins are treated as real when the full spectrum is rebuilt,
/// so complex-demixed tensors still synthesize to real signals.
pub fn istft(s: &SpectrogramTensor) -> Result<WaveformBatch> {
    let win = s.window_len;
    let hop = s.hop_len;
    let bins = s.bins();
    let frames = s.frames();
    let len = s.signal_len;
    let padded = len + 2 * win;
    let window = hamming(win);

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(win);

    let channels = s.channels();
    let mut out = ndarray::Array2::zeros((channels, len));
    let mut buf = vec![Complex64::new(0.0, 0.0); win];

    for c in 0..channels {
        let mut acc = vec![0.0f64; padded];
        let mut den = vec![0.0f64; padded];
        for j in 0..frames {
            for k in 0..bins {
                buf[k] = s.data[(k, j, c)];
            }
            buf[0] = Complex64::new(buf[0].re, 0.0);
            buf[win / 2] = Complex64::new(buf[win / 2].re, 0.0);
            for k in 1..win / 2 {
                buf[win - k] = buf[k].conj();
            }
            ifft.process(&mut buf);
            let off = j * hop;
            for t in 0..win {
                let v = buf[t].re / win as f64;
                acc[off + t] += window[t] * v;
                den[off + t] += window[t] * window[t];
            }
        }
        for t in 0..len {
            let d = den[win + t];
            if d <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "synthesis normalizer vanished at sample {t}"
                )));
            }
            out[(c, t)] = acc[win + t] / d;
        }
    }

    WaveformBatch::new(out, s.sample_rate)
}
