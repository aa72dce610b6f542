//! Single-reference BSS-eval SDR and scale-invariant SDR.
//!
//! With one reference there is no interference subspace: the estimate is
//! projected onto the span of the reference delayed by `0..taps`, and SDR
//! compares that projection with the residual. Both signals are zero-padded
//! by `taps - 1` samples so every delayed copy fits, which makes the Gram
//! matrix exactly Toeplitz in the reference autocorrelation.

use num_complex::Complex64;

use crate::dsp::{is_supported_len, FftPlan, Waveform};
use crate::error::{Error, Result};

pub const DEFAULT_FILTER_TAPS: usize = 512;
/// Added to the Gram diagonal before solving.
pub const GRAM_REGULARIZATION: f64 = 1e-10;
pub const SDR_CLAMP_DB: f64 = 100.0;
const SILENT_NORM: f64 = 1e-12;

/// `10·log10(signal / noise)` clamped to ±[`SDR_CLAMP_DB`].
pub fn ratio_db(signal: f64, noise: f64) -> f64 {
    if noise <= 0.0 {
        return if signal > 0.0 {
            SDR_CLAMP_DB
        } else {
            -SDR_CLAMP_DB
        };
    }
    if signal <= 0.0 {
        return -SDR_CLAMP_DB;
    }
    (10.0 * (signal / noise).log10()).clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn next_supported(n: usize) -> usize {
    (n..)
        .find(|&m| is_supported_len(m))
        .expect("smooth numbers are unbounded")
}

fn check_pair(estimate: &Waveform, reference: &Waveform) -> Result<()> {
    if estimate.len() != reference.len() {
        return Err(Error::validation(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.sample_rate != reference.sample_rate {
        return Err(Error::validation(format!(
            "estimate is {} Hz, reference {} Hz",
            estimate.sample_rate, reference.sample_rate
        )));
    }
    Ok(())
}

fn check_reference(reference: &Waveform) -> Result<()> {
    if energy(&reference.samples).sqrt() < SILENT_NORM {
        return Err(Error::validation("reference is silent"));
    }
    Ok(())
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix
/// stored row-major.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            let v = a[i * n + j] - dot;
            if i == j {
                if v <= 0.0 {
                    return Err(Error::numerical("SDR Gram matrix is not positive definite"));
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = v / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Projection onto the delayed copies of one reference.
///
/// Building it factors the Gram matrix once, so scoring many estimates
/// against the same reference is cheap.
pub struct SdrProjector {
    len: usize,
    sample_rate: u32,
    taps: usize,
    plan: FftPlan,
    ref_spectrum: Vec<Complex64>,
    chol: Vec<f64>,
}

impl SdrProjector {
    pub fn new(reference: &Waveform, taps: usize) -> Result<Self> {
        if taps == 0 {
            return Err(Error::validation("filter taps must be positive"));
        }
        if reference.len() < 4 * taps {
            return Err(Error::validation(format!(
                "signals need at least {} samples for {taps} taps, got {}",
                4 * taps,
                reference.len()
            )));
        }
        check_reference(reference)?;
        let n = next_supported(reference.len() + taps - 1);
        let plan = FftPlan::new(n)?;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &x) in buf.iter_mut().zip(&reference.samples) {
            b.re = x;
        }
        let ref_spectrum = plan.forward(&buf);
        let power: Vec<Complex64> = ref_spectrum
            .iter()
            .map(|c| Complex64::new(c.norm_sqr(), 0.0))
            .collect();
        let acf: Vec<f64> = plan.inverse(&power)[..taps].iter().map(|c| c.re).collect();
        let mut gram = vec![0.0; taps * taps];
        for i in 0..taps {
            for j in 0..taps {
                gram[i * taps + j] = acf[i.abs_diff(j)];
            }
            gram[i * taps + i] += GRAM_REGULARIZATION;
        }
        Ok(Self {
            len: reference.len(),
            sample_rate: reference.sample_rate,
            taps,
            plan,
            ref_spectrum,
            chol: cholesky(&gram, taps)?,
        })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.taps;
        let l = &self.chol;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
            y[i] = (rhs[i] - s) / l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
            x[i] = (y[i] - s) / l[i * n + i];
        }
        x
    }

    /// Filter coefficients and the projection (length `len + taps - 1`).
    pub fn project(&self, estimate: &Waveform) -> Result<(Vec<f64>, Vec<f64>)> {
        if estimate.len() != self.len || estimate.sample_rate != self.sample_rate {
            return Err(Error::validation(format!(
                "estimate is {} samples at {} Hz, reference {} at {} Hz",
                estimate.len(),
                estimate.sample_rate,
                self.len,
                self.sample_rate
            )));
        }
        let n = self.plan.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &x) in buf.iter_mut().zip(&estimate.samples) {
            b.re = x;
        }
        let est = self.plan.forward(&buf);
        let cross: Vec<Complex64> = self
            .ref_spectrum
            .iter()
            .zip(&est)
            .map(|(r, e)| r.conj() * e)
            .collect();
        let rhs: Vec<f64> = self.plan.inverse(&cross)[..self.taps]
            .iter()
            .map(|c| c.re)
            .collect();
        let coef = self.solve(&rhs);
        let mut cbuf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &c) in cbuf.iter_mut().zip(&coef) {
            b.re = c;
        }
        let cspec = self.plan.forward(&cbuf);
        let prod: Vec<Complex64> = self
            .ref_spectrum
            .iter()
            .zip(&cspec)
            .map(|(a, b)| a * b)
            .collect();
        let proj = self.plan.inverse(&prod)[..self.len + self.taps - 1]
            .iter()
            .map(|c| c.re)
            .collect();
        Ok((coef, proj))
    }

    pub fn sdr(&self, estimate: &Waveform) -> Result<f64> {
        let (_, proj) = self.project(estimate)?;
        let residual: f64 = proj
            .iter()
            .enumerate()
            .map(|(t, p)| {
                let d = estimate.samples.get(t).copied().unwrap_or(0.0) - p;
                d * d
            })
            .sum();
        Ok(ratio_db(energy(&proj), residual))
    }
}

/// BSS-eval SDR of `estimate` against a single `reference`, in dB.
pub fn sdr_bsseval(estimate: &Waveform, reference: &Waveform, filter_taps: usize) -> Result<f64> {
    check_pair(estimate, reference)?;
    SdrProjector::new(reference, filter_taps)?.sdr(estimate)
}

/// Scale-invariant SDR: projection onto the reference alone.
pub fn si_sdr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    check_pair(estimate, reference)?;
    check_reference(reference)?;
    let (e, r) = (&estimate.samples, &reference.samples);
    let alpha = e.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / energy(r);
    let target = alpha * alpha * energy(r);
    let residual: f64 = e.iter().zip(r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    Ok(ratio_db(target, residual))
}
