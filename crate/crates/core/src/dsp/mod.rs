//! Signal front end: FFT, STFT/ISTFT, mel filterbank, per-bin statistics
//! and WAV I/O. Everything here is pure and safe to share across threads.

pub mod fft;
pub mod mel;
pub mod stats;
pub mod stft;
pub mod wav;

pub use fft::{fft, ifft, is_supported_len, FftPlan};
pub use mel::MelFilterbank;
pub use stats::{compute_bin_stats, BinStats, BinStatsAccumulator};
pub use stft::{
    istft, stft, ComplexSpectrogram, MagnitudeSpectrogram, Stft, StftConfig, WindowKind,
};
pub use wav::{dequantize, quantize, read_wav, read_wav_at, write_pcm16, write_wav};

use crate::error::{Error, Result};

/// Mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::validation("sample rate must be positive"));
        }
        if let Some(i) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::validation(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Copy of `len` samples from `start`, zero-padded past the end.
    pub fn segment(&self, start: usize, len: usize) -> Waveform {
        let samples = (start..start + len)
            .map(|i| self.samples.get(i).copied().unwrap_or(0.0))
            .collect();
        Waveform::new(samples, self.sample_rate)
    }
}
