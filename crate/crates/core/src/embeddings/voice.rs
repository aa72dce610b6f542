//! Deterministic voice embedding from long-term spectral statistics.
//!
//! Per utterance: 40-band log-mel energies over active frames, their mean
//! (with the level and spectral tilt removed) and their standard deviation
//! (level removed), giving 80 statistics that a fixed random projection maps
//! to the requested dimension.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ConditionEmbedding, EmbeddingKind};
use crate::dsp::{is_supported_len, stft, MelFilterbank, StftConfig, Waveform, WindowKind};
use crate::error::{Error, Result};

pub const VOICE_MELS: usize = 40;
pub const VOICE_PROJECTION_SEED: u64 = 0x766f_6963_655f_7631;
pub const VOICE_MIN_SECONDS: f64 = 1.0;
/// Frames more than this far below the loudest frame are ignored, dB.
const ACTIVITY_RANGE_DB: f64 = 40.0;
const LOG_FLOOR: f64 = 1e-10;

/// 25 ms / 10 ms framing at the reference's own sample rate.
pub fn voice_stft_config(sample_rate: u32) -> Result<StftConfig> {
    match sample_rate {
        8000 => Ok(StftConfig::desk()),
        16000 => Ok(StftConfig::paper()),
        0 => Err(Error::validation("sample rate must be positive")),
        sr => {
            let win = (f64::from(sr) * 0.025).round().max(2.0) as usize;
            let hop = (f64::from(sr) * 0.010).round().max(1.0) as usize;
            let mut fft = win.max(256);
            while !is_supported_len(fft) {
                fft += 1;
            }
            Ok(StftConfig {
                fft_size: fft,
                win_length: win,
                hop_length: hop,
                window: WindowKind::Hann,
                sample_rate: sr,
            })
        }
    }
}

fn projection(dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(VOICE_PROJECTION_SEED ^ dim as u64);
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim * 2 * VOICE_MELS)
        .map(|_| {
            scale * {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            }
        })
        .collect()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn remove_line(v: &mut [f64]) {
    let n = v.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = v.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in v.iter().enumerate() {
        sxy += (i as f64 - xm) * (y - ym);
        sxx += (i as f64 - xm).powi(2);
    }
    let slope = sxy / sxx;
    for (i, y) in v.iter_mut().enumerate() {
        *y -= ym + slope * (i as f64 - xm);
    }
}

/// The 80 per-utterance statistics before projection.
pub(crate) fn voice_statistics(reference: &Waveform) -> Result<Vec<f64>> {
    reference.validate()?;
    if reference.duration_s() < VOICE_MIN_SECONDS {
        return Err(Error::validation(format!(
            "voice reference is {:.3} s, need at least {VOICE_MIN_SECONDS} s",
            reference.duration_s()
        )));
    }
    let cfg = voice_stft_config(reference.sample_rate)?;
    let spec = stft(reference, cfg)?;
    let fb = MelFilterbank::new(VOICE_MELS, cfg.fft_size, cfg.sample_rate);
    let frames: Vec<Vec<f64>> = (0..spec.frames)
        .map(|t| {
            let power: Vec<f64> = spec.frame(t).iter().map(|c| c.norm_sqr()).collect();
            fb.apply(&power)
        })
        .collect();
    let energy: Vec<f64> = frames.iter().map(|f| f.iter().sum::<f64>()).collect();
    let loudest = energy.iter().copied().fold(0.0, f64::max);
    if loudest <= 0.0 {
        return Err(Error::validation("voice reference is silent"));
    }
    let threshold = loudest * 10f64.powf(-ACTIVITY_RANGE_DB / 10.0);
    let active: Vec<Vec<f64>> = frames
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| e >= threshold)
        .map(|(f, _)| f.iter().map(|&p| (p + LOG_FLOOR).ln()).collect())
        .collect();
    let n = active.len() as f64;
    let mut mean = vec![0.0; VOICE_MELS];
    for f in &active {
        mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / n);
    }
    let mut std = vec![0.0; VOICE_MELS];
    for f in &active {
        std.iter_mut()
            .zip(f.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
    }
    std.iter_mut().for_each(|s| *s = s.sqrt());
    remove_line(&mut mean);
    remove_mean(&mut std);
    mean.extend(std);
    Ok(mean)
}

/// Project the spectral statistics of `reference` to a unit vector of length `dim`.
pub fn voice_embedding_oracle(reference: &Waveform, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::validation("embedding dim must be positive"));
    }
    let stats = voice_statistics(reference)?;
    let p = projection(dim);
    let v: Vec<f64> = p
        .chunks(stats.len())
        .map(|row| row.iter().zip(&stats).map(|(a, b)| a * b).sum())
        .collect();
    super::normalize(&v)
}

impl ConditionEmbedding {
    pub fn voice_oracle(
        reference: &Waveform,
        dim: usize,
        speaker_id: &str,
        source_id: &str,
    ) -> Result<Self> {
        Self::new(
            EmbeddingKind::Voice,
            speaker_id.to_string(),
            source_id.to_string(),
            voice_embedding_oracle(reference, dim)?,
        )
    }
}
