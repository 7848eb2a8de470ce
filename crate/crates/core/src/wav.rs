//! RIFF/WAV reading and writing (16-bit PCM and 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};
use ndarray::Array2;

use crate::dsp::MultiChannelWave;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultiChannelWave> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Data(format!(
                "unsupported wav encoding {fmt:?} {bits}-bit in {}",
                path.as_ref().display()
            )))
        }
    };
    if channels == 0 || interleaved.len() % channels != 0 {
        return Err(Error::Data("wav sample count not a multiple of channels".into()));
    }
    let frames = interleaved.len() / channels;
    let samples = Array2::from_shape_fn((channels, frames), |(c, t)| interleaved[t * channels + c]);
    MultiChannelWave::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &MultiChannelWave, encoding: WavEncoding) -> Result<()> {
    let spec = WavSpec {
        channels: wave.channels() as u16,
        sample_rate: wave.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    for t in 0..wave.len() {
        for c in 0..wave.channels() {
            let v = wave.samples[[c, t]];
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                WavEncoding::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_mono(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    write_wav(path, &MultiChannelWave::from_mono(samples, sample_rate)?, WavEncoding::Float32)
}
