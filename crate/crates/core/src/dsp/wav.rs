//! Mono 16-bit PCM WAV I/O.
//!
//! Samples are scaled by 1/32768 on read and by 32768 on write, so a value
//! that came from a file round-trips exactly.

use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

/// Quantize one sample to the PCM16 grid, saturating at the rails.
pub fn quantize(x: f64) -> i16 {
    (x * PCM_SCALE)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn dequantize(q: i16) -> f64 {
    q as f64 / PCM_SCALE
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(format!(
            "{}: expected 16-bit integer PCM, found {}-bit {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(dequantize))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Read and require a specific sample rate (no resampling is done).
pub fn read_wav_at(path: impl AsRef<Path>, sample_rate: u32) -> Result<Waveform> {
    let path = path.as_ref();
    let w = read_wav(path)?;
    if w.sample_rate != sample_rate {
        return Err(Error::validation(format!(
            "{}: sample rate {} Hz, expected {} Hz",
            path.display(),
            w.sample_rate,
            sample_rate
        )));
    }
    Ok(w)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let q: Vec<i16> = w.samples.iter().map(|&x| quantize(x)).collect();
    write_pcm16(path, &q, w.sample_rate)
}

pub fn write_pcm16(path: impl AsRef<Path>, samples: &[i16], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        writer.write_sample(s).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::format(format!("{}: {other}", path.display())),
    }
}
