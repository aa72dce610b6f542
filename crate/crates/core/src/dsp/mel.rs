/// HTK-style mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels` rows of `fft_size / 2 + 1` weights,
/// spanning 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub bins: usize,
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Self {
        let bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[m * bins + k] = w;
            }
            // Narrow low bands may fall between bins; give them the nearest bin.
            if weights[m * bins..(m + 1) * bins].iter().all(|&w| w == 0.0) {
                let k = ((mid / bin_hz).round() as usize).min(bins - 1);
                weights[m * bins + k] = 1.0;
            }
        }
        Self {
            n_mels,
            bins,
            weights,
        }
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// Apply to one power or magnitude frame.
    pub fn apply(&self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.bins);
        (0..self.n_mels)
            .map(|m| self.row(m).iter().zip(frame).map(|(w, x)| w * x).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.5);
    }

    #[test]
    fn every_band_has_support_and_bands_ascend() {
        let fb = MelFilterbank::new(40, 512, 8000);
        let mut last_peak = 0;
        for m in 0..40 {
            let row = fb.row(m);
            assert!(row.iter().any(|&w| w > 0.0));
            let peak = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert!(peak >= last_peak);
            last_peak = peak;
        }
    }
}
