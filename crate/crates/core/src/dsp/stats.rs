use serde::{Deserialize, Serialize};

use super::MagnitudeSpectrogram;
use crate::error::{Error, Result};

/// Floor on per-bin standard deviation.
pub const STD_FLOOR: f64 = 1e-5;

/// Per-frequency-bin normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BinStats {
    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    /// `(m - mean) / std` per bin.
    pub fn normalize(&self, m: &MagnitudeSpectrogram) -> Result<Vec<f64>> {
        self.check(m.bins)?;
        Ok(m.data
            .chunks(m.bins)
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(x, (mu, sd))| (x - mu) / sd)
            })
            .collect())
    }

    /// `(m - mean) / std` per bin on a row-major `T×F` buffer.
    pub fn normalize_f32(&self, data: &[f32]) -> Result<Vec<f32>> {
        let bins = self.bins();
        if bins == 0 || data.len() % bins != 0 {
            return Err(Error::validation(format!(
                "{} values is not a whole number of {bins}-bin frames",
                data.len()
            )));
        }
        let scale: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        Ok(data
            .chunks(bins)
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&scale))
                    .map(|(&x, (mu, k))| ((f64::from(x) - mu) * k) as f32)
            })
            .collect())
    }

    pub fn denormalize(&self, values: &[f64], bins: usize) -> Result<Vec<f64>> {
        self.check(bins)?;
        if values.len() % bins != 0 {
            return Err(Error::validation(
                "normalized data is not a whole number of frames",
            ));
        }
        Ok(values
            .chunks(bins)
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(z, (mu, sd))| z * sd + mu)
            })
            .collect())
    }

    fn check(&self, bins: usize) -> Result<()> {
        if bins != self.bins() {
            return Err(Error::validation(format!(
                "spectrogram has {bins} bins, stats have {}",
                self.bins()
            )));
        }
        Ok(())
    }
}

/// Streaming accumulator for [`BinStats`].
#[derive(Debug, Clone, Default)]
pub struct BinStatsAccumulator {
    frames: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl BinStatsAccumulator {
    pub fn add_frames(&mut self, data: &[f64], bins: usize) -> Result<()> {
        if self.sum.is_empty() {
            self.sum = vec![0.0; bins];
            self.sum_sq = vec![0.0; bins];
        } else if self.sum.len() != bins {
            return Err(Error::validation("inconsistent bin count in corpus"));
        }
        for row in data.chunks(bins) {
            for (k, &x) in row.iter().enumerate() {
                self.sum[k] += x;
                self.sum_sq[k] += x * x;
            }
            self.frames += 1;
        }
        Ok(())
    }

    pub fn add(&mut self, m: &MagnitudeSpectrogram) -> Result<()> {
        self.add_frames(&m.data, m.bins)
    }

    pub fn finish(&self) -> Result<BinStats> {
        if self.frames < 2 {
            return Err(Error::validation(format!(
                "bin statistics need at least 2 frames, got {}",
                self.frames
            )));
        }
        let n = self.frames as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let std = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, mu)| (sq / n - mu * mu).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(BinStats { mean, std })
    }
}

/// Per-bin mean and (population) standard deviation over every frame.
pub fn compute_bin_stats<'a, I>(corpus: I) -> Result<BinStats>
where
    I: IntoIterator<Item = &'a MagnitudeSpectrogram>,
{
    let mut acc = BinStatsAccumulator::default();
    for m in corpus {
        acc.add(m)?;
    }
    acc.finish()
}
