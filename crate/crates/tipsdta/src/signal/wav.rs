//! RIFF/WAV reading and writing: 16-bit integer and 32-bit float PCM,
//! little-endian, mono or multichannel.

use std::path::Path;

use ndarray::Array2;

use super::WaveformBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Int16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveformBatch> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedFormat("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {}",
                match fmt {
                    hound::SampleFormat::Int => "integer",
                    hound::SampleFormat::Float => "float",
                }
            )))
        }
    };
    let frames = interleaved.len() / channels;
    let mut data = Array2::zeros((channels, frames));
    for t in 0..frames {
        for c in 0..channels {
            data[(c, t)] = interleaved[t * channels + c];
        }
    }
    WaveformBatch::new(data, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, w: &WaveformBatch, depth: BitDepth) -> Result<()> {
    let spec = hound::WavSpec {
        channels: w.channels() as u16,
        sample_rate: w.sample_rate(),
        bits_per_sample: match depth {
            BitDepth::Int16 => 16,
            BitDepth::Float32 => 32,
        },
        sample_format: match depth {
            BitDepth::Int16 => hound::SampleFormat::Int,
            BitDepth::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    match depth {
        BitDepth::Int16 => {
            for t in 0..w.len() {
                for c in 0..w.channels() {
                    let v = (w.samples()[(c, t)] * 32768.0).round();
                    let v = v.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                    writer.write_sample(v)?;
                }
            }
        }
        BitDepth::Float32 => {
            for t in 0..w.len() {
                for c in 0..w.channels() {
                    writer.write_sample(w.samples()[(c, t)] as f32)?;
                }
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
