use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Range of the per-speaker fundamental frequency, Hz.
pub const F0_RANGE: (f64, f64) = (90.0, 260.0);
/// Ranges of the four resonance centre frequencies, Hz.
pub const FORMANT_RANGES: [(f64, f64); 4] = [
    (300.0, 900.0),
    (900.0, 2200.0),
    (2200.0, 3000.0),
    (3000.0, 3700.0),
];
/// Relative level of each resonance, dB.
pub const FORMANT_GAINS_DB: [f64; 4] = [0.0, -4.0, -10.0, -16.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq_hz: f64,
    pub bandwidth_hz: f64,
    pub gain_db: f64,
}

/// Synthesis parameters of one synthetic speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerIdentity {
    pub speaker_id: String,
    pub seed: u64,
    pub f0_hz: f64,
    pub formants: Vec<Formant>,
}

impl SpeakerIdentity {
    /// Draw a speaker from its seed: log-uniform f0, uniform resonances.
    pub fn generate(speaker_id: impl Into<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = F0_RANGE;
        let f0_hz = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        let formants = FORMANT_RANGES
            .iter()
            .zip(FORMANT_GAINS_DB)
            .map(|(&(a, b), gain)| {
                let freq_hz = rng.gen_range(a..b);
                Formant {
                    freq_hz,
                    bandwidth_hz: 50.0 + 0.06 * freq_hz,
                    gain_db: gain + rng.gen_range(-2.0..2.0),
                }
            })
            .collect();
        Self {
            speaker_id: speaker_id.into(),
            seed,
            f0_hz,
            formants,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0_hz.is_finite() && self.f0_hz > 0.0) {
            return Err(Error::validation(format!(
                "{}: bad f0 {}",
                self.speaker_id, self.f0_hz
            )));
        }
        if self.formants.is_empty()
            || self
                .formants
                .iter()
                .any(|f| !(f.freq_hz > 0.0 && f.bandwidth_hz > 0.0))
        {
            return Err(Error::validation(format!(
                "{}: bad resonances",
                self.speaker_id
            )));
        }
        Ok(())
    }

    /// Magnitude of the spectral envelope at `hz` (sum of resonances).
    pub fn envelope(&self, hz: f64) -> f64 {
        self.formants
            .iter()
            .map(|f| {
                let x = (hz - f.freq_hz) / f.bandwidth_hz;
                10f64.powf(f.gain_db / 20.0) / (1.0 + x * x)
            })
            .sum::<f64>()
            + 1e-3
    }

    /// Synthesis parameters mapped to [-1, 1]: log f0, then resonance centres.
    pub fn attributes(&self) -> Vec<f64> {
        let scale =
            |x: f64, (lo, hi): (f64, f64)| (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0);
        let mut a = vec![scale(self.f0_hz.ln(), (F0_RANGE.0.ln(), F0_RANGE.1.ln()))];
        for (f, &range) in self.formants.iter().zip(&FORMANT_RANGES) {
            a.push(scale(f.freq_hz, range));
        }
        a
    }
}
