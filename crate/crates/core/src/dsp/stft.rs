use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{is_supported_len, FftPlan};
use super::Waveform;
use crate::error::{Error, Result};

/// Synthesis denominators below this are clamped.
pub const SYNTHESIS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl StftConfig {
    /// 8 kHz, 25 ms / 10 ms framing, 257 bins.
    pub fn desk() -> Self {
        Self {
            fft_size: 512,
            win_length: 200,
            hop_length: 80,
            window: WindowKind::Hann,
            sample_rate: 8000,
        }
    }

    /// 16 kHz, 25 ms / 10 ms framing, 601 bins.
    pub fn paper() -> Self {
        Self {
            fft_size: 1200,
            win_length: 400,
            hop_length: 160,
            window: WindowKind::Hann,
            sample_rate: 16000,
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::validation("sample_rate must be positive"));
        }
        if self.hop_length == 0
            || self.hop_length > self.win_length
            || self.win_length > self.fft_size
        {
            return Err(Error::validation(format!(
                "need 0 < hop ({}) <= win ({}) <= fft_size ({})",
                self.hop_length, self.win_length, self.fft_size
            )));
        }
        if !is_supported_len(self.fft_size) {
            return Err(Error::validation(format!(
                "fft_size {} is not a product of 2, 3 and 5",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Number of frames for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.win_length {
            0
        } else {
            (len - self.win_length) / self.hop_length + 1
        }
    }

    /// Length of the overlap-add output for `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_length + self.win_length
        }
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => hann(self.win_length),
        }
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// T×F complex frames, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        let bins = config.freq_bins();
        Self {
            frames,
            bins,
            data: vec![Complex64::new(0.0, 0.0); frames * bins],
            config,
        }
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|c| c.norm()).collect(),
            config: self.config,
        }
    }

    /// Magnitudes in single precision, row-major `T×F`.
    pub fn magnitude_f32(&self) -> Vec<f32> {
        self.data
            .iter()
            .map(|c| c.norm_sqr().sqrt() as f32)
            .collect()
    }

    /// Pointwise argument; the argument of zero is 0.
    pub fn phase(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|c| {
                if c.re == 0.0 && c.im == 0.0 {
                    0.0
                } else {
                    c.arg()
                }
            })
            .collect()
    }

    /// Reassemble from magnitude and phase.
    pub fn from_polar(mag: &MagnitudeSpectrogram, phase: &[f64]) -> Result<Self> {
        if phase.len() != mag.data.len() {
            return Err(Error::validation("magnitude/phase shape mismatch"));
        }
        Ok(Self {
            frames: mag.frames,
            bins: mag.bins,
            data: mag
                .data
                .iter()
                .zip(phase)
                .map(|(&m, &p)| Complex64::from_polar(m, p))
                .collect(),
            config: mag.config,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
    pub config: StftConfig,
}

impl MagnitudeSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Reusable analysis/synthesis engine for one configuration.
#[derive(Debug, Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    plan: FftPlan,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            window: config.window(),
            plan: FftPlan::new(config.fft_size)?,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn forward(&self, w: &Waveform) -> Result<ComplexSpectrogram> {
        let cfg = &self.config;
        if w.sample_rate != cfg.sample_rate {
            return Err(Error::validation(format!(
                "sample rate {} does not match stft config {}",
                w.sample_rate, cfg.sample_rate
            )));
        }
        if w.samples.len() < cfg.win_length {
            return Err(Error::validation(format!(
                "signal of {} samples is shorter than the {}-sample window",
                w.samples.len(),
                cfg.win_length
            )));
        }
        let frames = cfg.num_frames(w.samples.len());
        let bins = cfg.freq_bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        for t in 0..frames {
            let start = t * cfg.hop_length;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < cfg.win_length {
                    Complex64::new(w.samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            let spec = self.plan.forward(&buf);
            data.extend_from_slice(&spec[..bins]);
        }
        Ok(ComplexSpectrogram {
            frames,
            bins,
            data,
            config: *cfg,
        })
    }

    /// Zeros placed before the signal by [`Stft::forward_padded`].
    pub fn edge_padding(&self) -> usize {
        self.config.win_length - self.config.hop_length
    }

    /// Analysis of `w` zero-padded at both ends so every original sample
    /// lies under full overlap-add coverage.
    pub fn forward_padded(&self, w: &Waveform) -> Result<ComplexSpectrogram> {
        let (win, hop) = (self.config.win_length, self.config.hop_length);
        let pad = self.edge_padding();
        let body = w.len() + 2 * pad;
        let tail = if body < win {
            win - body
        } else {
            (hop - (body - win) % hop) % hop
        };
        let mut samples = vec![0.0; pad];
        samples.extend_from_slice(&w.samples);
        samples.resize(body + tail, 0.0);
        self.forward(&Waveform::new(samples, w.sample_rate))
    }

    /// Inverse of [`Stft::forward_padded`], cropped back to `len` samples.
    pub fn inverse_padded(&self, s: &ComplexSpectrogram, len: usize) -> Result<Waveform> {
        Ok(self.inverse(s)?.segment(self.edge_padding(), len))
    }

    /// Weighted overlap-add with window-square normalization.
    pub fn inverse(&self, s: &ComplexSpectrogram) -> Result<Waveform> {
        let cfg = &self.config;
        if s.config != *cfg || s.bins != cfg.freq_bins() || s.data.len() != s.frames * s.bins {
            return Err(Error::validation("spectrogram does not match stft config"));
        }
        let len = cfg.synthesis_len(s.frames);
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut full = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        for t in 0..s.frames {
            let frame = s.frame(t);
            full[..s.bins].copy_from_slice(frame);
            // Hermitian completion; imaginary parts of DC/Nyquist are dropped by taking re.
            for k in s.bins..cfg.fft_size {
                full[k] = frame[cfg.fft_size - k].conj();
            }
            let time = self.plan.inverse(&full);
            let start = t * cfg.hop_length;
            for i in 0..cfg.win_length {
                out[start + i] += time[i].re * self.window[i];
                norm[start + i] += self.window[i] * self.window[i];
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            *o /= n.max(SYNTHESIS_EPS);
        }
        Ok(Waveform::new(out, cfg.sample_rate))
    }
}

pub fn stft(w: &Waveform, cfg: StftConfig) -> Result<ComplexSpectrogram> {
    Stft::new(cfg)?.forward(w)
}

pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    Stft::new(s.config)?.inverse(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, sr: u32, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), sr)
    }

    fn interior_rel_err(a: &[f64], b: &[f64], edge: usize) -> f64 {
        let end = a.len().min(b.len()) - edge;
        let num: f64 = (edge..end).map(|i| (a[i] - b[i]).powi(2)).sum();
        let den: f64 = (edge..end).map(|i| a[i].powi(2)).sum();
        (num / den).sqrt()
    }

    #[test]
    fn frame_count_for_three_seconds() {
        let cfg = StftConfig::paper();
        let w = Waveform::new(vec![0.0; 48000], 16000);
        let s = stft(&w, cfg).unwrap();
        assert_eq!(s.frames, 298);
        assert_eq!(s.bins, 601);
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = StftConfig::desk();
        let s = stft(&Waveform::new(vec![0.0; 4000], 8000), cfg).unwrap();
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
        let w = istft(&ComplexSpectrogram::zeros(10, cfg)).unwrap();
        assert_eq!(w.samples.len(), cfg.synthesis_len(10));
        assert!(w.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sine_peaks_at_its_bin() {
        let cfg = StftConfig::desk();
        for k in [10usize, 37, 100, 200] {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
            let w = Waveform::new(
                (0..4000)
                    .map(|n| (2.0 * PI * f * n as f64 / cfg.sample_rate as f64).sin())
                    .collect(),
                cfg.sample_rate,
            );
            let mag = stft(&w, cfg).unwrap().magnitude();
            for t in 0..mag.frames {
                let row = mag.frame(t);
                let argmax = (0..row.len())
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                    .unwrap();
                assert_eq!(argmax, k);
            }
        }
    }

    #[test]
    fn round_trip_white_noise() {
        for cfg in [StftConfig::desk(), StftConfig::paper()] {
            let x = noise(cfg.sample_rate as usize, cfg.sample_rate, 3);
            let y = istft(&stft(&x, cfg).unwrap()).unwrap();
            let err = interior_rel_err(&x.samples, &y.samples, cfg.win_length);
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn identity_mask_reproduces_istft() {
        let cfg = StftConfig::desk();
        let s = stft(&noise(3000, 8000, 9), cfg).unwrap();
        let mag = s.magnitude();
        let rebuilt = ComplexSpectrogram::from_polar(&mag, &s.phase()).unwrap();
        let a = istft(&s).unwrap();
        let b = istft(&rebuilt).unwrap();
        let diff = a
            .samples
            .iter()
            .zip(&b.samples)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn polar_conventions() {
        let cfg = StftConfig::desk();
        let mut s = ComplexSpectrogram::zeros(1, cfg);
        s.data[0] = Complex64::new(3.0, 4.0);
        assert_eq!(s.magnitude().data[0], 5.0);
        assert_eq!(s.phase()[1], 0.0);
        assert_eq!(s.magnitude().data[1], 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in s.data.iter_mut() {
            *c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let back = ComplexSpectrogram::from_polar(&s.magnitude(), &s.phase()).unwrap();
        for (a, b) in s.data.iter().zip(&back.data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = StftConfig::desk();
        assert!(stft(&Waveform::new(vec![0.0; 100], 8000), cfg).is_err());
        assert!(stft(&Waveform::new(vec![0.0; 1000], 16000), cfg).is_err());
        let bad = StftConfig {
            hop_length: 300,
            ..cfg
        };
        assert!(bad.validate().is_err());
        let bad = StftConfig {
            fft_size: 7 * 64,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn frame_count_formula_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let hop = rng.gen_range(1..40usize);
            let win = hop * rng.gen_range(1..5usize);
            let fft_size = [64usize, 128, 256, 320, 480]
                .into_iter()
                .find(|&n| n >= win)
                .unwrap_or(480.max(win.next_power_of_two()));
            let cfg = StftConfig {
                fft_size,
                win_length: win,
                hop_length: hop,
                window: WindowKind::Hann,
                sample_rate: 8000,
            };
            let len = rng.gen_range(win..win + 600);
            let s = stft(&Waveform::new(vec![0.1; len], 8000), cfg).unwrap();
            assert_eq!(s.frames, (len - win) / hop + 1);
        }
    }

    #[test]
    fn padded_round_trip_covers_the_edges() {
        let st = Stft::new(StftConfig::desk()).unwrap();
        for len in [200, 201, 999, 8000] {
            let w = noise(len, 8000, len as u64);
            let s = st.forward_padded(&w).unwrap();
            let back = st.inverse_padded(&s, len).unwrap();
            let err: f64 = back
                .samples
                .iter()
                .zip(&w.samples)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let energy: f64 = w.samples.iter().map(|v| v * v).sum();
            assert!((err / energy).sqrt() < 1e-9, "len {len}");
        }
    }

    #[test]
    fn masked_padded_synthesis_stays_bounded() {
        let st = Stft::new(StftConfig::desk()).unwrap();
        let w = noise(4000, 8000, 3);
        let mut s = st.forward_padded(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        s.data
            .iter_mut()
            .for_each(|c| *c *= rng.gen_range(0.0..1.0));
        let out = st.inverse_padded(&s, w.len()).unwrap();
        let peak_in = w.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let peak_out = out.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak_out < 2.0 * peak_in, "{peak_out} vs {peak_in}");
    }
}
