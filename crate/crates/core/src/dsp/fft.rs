//! Mixed-radix FFT for lengths of the form 2^a · 3^b · 5^c.
//!
//! Recursive decimation in time. Radix-4 is used where possible, then
//! 2, 3 and 5. Twiddles come from a single table of the full length.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    factors: Vec<usize>,
    // exp(-2πi j / n) for j in 0..n
    twiddles: Vec<Complex64>,
}

/// Factor `n` into supported radices, or report the first unsupported prime.
pub fn factorize(n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::validation("fft length must be at least 1"));
    }
    let mut rest = n;
    let mut factors = Vec::new();
    while rest % 4 == 0 {
        factors.push(4);
        rest /= 4;
    }
    for p in [2, 3, 5] {
        while rest % p == 0 {
            factors.push(p);
            rest /= p;
        }
    }
    if rest != 1 {
        let mut p = 7;
        while rest % p != 0 {
            p += 2;
        }
        return Err(Error::validation(format!(
            "unsupported fft length {n}: factor {p} is not one of 2, 3, 5"
        )));
    }
    Ok(factors)
}

pub fn is_supported_len(n: usize) -> bool {
    factorize(n).is_ok()
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        let factors = factorize(n)?;
        let twiddles = (0..n)
            .map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64))
            .collect();
        Ok(Self {
            n,
            factors,
            twiddles,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform, X[k] = Σ x[n] e^{-2πi kn/N}.
    pub fn forward(&self, input: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(input.len(), self.n, "fft input length");
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        self.recurse(input, 1, &mut out, 0, 1);
        out
    }

    /// Inverse transform including the 1/N scale.
    pub fn inverse(&self, input: &[Complex64]) -> Vec<Complex64> {
        let conj: Vec<Complex64> = input.iter().map(|c| c.conj()).collect();
        let scale = 1.0 / self.n as f64;
        self.forward(&conj)
            .into_iter()
            .map(|c| c.conj() * scale)
            .collect()
    }

    // `tw_stride` maps a sub-transform root of unity onto the full table:
    // exp(-2πi j / len) == twiddles[j * tw_stride].
    fn recurse(
        &self,
        input: &[Complex64],
        stride: usize,
        out: &mut [Complex64],
        depth: usize,
        tw_stride: usize,
    ) {
        let len = out.len();
        if len == 1 {
            out[0] = input[0];
            return;
        }
        let p = self.factors[depth];
        let m = len / p;
        for r in 0..p {
            self.recurse(
                &input[r * stride..],
                stride * p,
                &mut out[r * m..(r + 1) * m],
                depth + 1,
                tw_stride * p,
            );
        }
        let mut scratch = [Complex64::new(0.0, 0.0); 5];
        for k in 0..m {
            for r in 0..p {
                scratch[r] = out[r * m + k] * self.twiddles[(r * k * tw_stride) % self.n];
            }
            match p {
                2 => {
                    let (a, b) = (scratch[0], scratch[1]);
                    out[k] = a + b;
                    out[k + m] = a - b;
                }
                4 => {
                    let (a, b, c, d) = (scratch[0], scratch[1], scratch[2], scratch[3]);
                    let apc = a + c;
                    let amc = a - c;
                    let bpd = b + d;
                    // -i·(b − d)
                    let bmd = b - d;
                    let rot = Complex64::new(bmd.im, -bmd.re);
                    out[k] = apc + bpd;
                    out[k + m] = amc + rot;
                    out[k + 2 * m] = apc - bpd;
                    out[k + 3 * m] = amc - rot;
                }
                _ => {
                    // generic small-radix DFT: Σ_r scratch[r] · w_p^{rq}
                    let step = self.n / p;
                    for q in 0..p {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (r, s) in scratch[..p].iter().enumerate() {
                            acc += s * self.twiddles[((r * q) % p) * step];
                        }
                        out[k + q * m] = acc;
                    }
                }
            }
        }
    }
}

/// One-shot forward FFT.
pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    Ok(FftPlan::new(x.len())?.forward(x))
}

/// One-shot inverse FFT.
pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    Ok(FftPlan::new(x.len())?.inverse(x))
}
