//! Reference implementations used as test oracles. Each one is written the
//! slow, obvious way and shares no code with the library.

#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;

/// O(N²) DFT straight from the definition.
pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| {
                    let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                    v * Complex64::new(a.cos(), a.sin())
                })
                .sum()
        })
        .collect()
}

/// Solve `a · x = b` (row-major `n × n`) by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    x
}

/// `C = Aᵀ·B` for row-major `A: m×k1`, `B: m×k2`.
fn at_b(a: &[f64], b: &[f64], m: usize, k1: usize, k2: usize) -> Vec<f64> {
    let mut c = vec![0.0; k1 * k2];
    unsafe {
        matrixmultiply::dgemm(
            k1,
            m,
            k2,
            1.0,
            a.as_ptr(),
            1,
            k1 as isize,
            b.as_ptr(),
            k2 as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            k2 as isize,
            1,
        );
    }
    c
}

/// Single-reference SDR by an explicit least-squares fit of the estimate
/// onto `taps` delayed copies of the reference. The delay matrix is built in
/// full (`len + taps - 1` rows, both signals zero-padded) and the normal
/// equations, with `ridge` on the diagonal, go to a generic solver.
pub fn dense_sdr(estimate: &[f64], reference: &[f64], taps: usize, ridge: f64, clamp: f64) -> f64 {
    let n = reference.len() + taps - 1;
    let mut a = vec![0.0; n * taps];
    for t in 0..n {
        for k in 0..taps {
            if t >= k && t - k < reference.len() {
                a[t * taps + k] = reference[t - k];
            }
        }
    }
    let mut e = estimate.to_vec();
    e.resize(n, 0.0);
    let mut ata = at_b(&a, &a, n, taps, taps);
    for i in 0..taps {
        ata[i * taps + i] += ridge;
    }
    let atb = at_b(&a, &e, n, taps, 1);
    let coef = gauss_solve(ata, atb, taps);
    let proj: Vec<f64> = (0..n)
        .map(|t| {
            a[t * taps..(t + 1) * taps]
                .iter()
                .zip(&coef)
                .map(|(x, c)| x * c)
                .sum()
        })
        .collect();
    let signal: f64 = proj.iter().map(|p| p * p).sum();
    let noise: f64 = proj.iter().zip(&e).map(|(p, x)| (x - p).powi(2)).sum();
    if noise == 0.0 {
        return clamp;
    }
    (10.0 * (signal / noise).log10()).clamp(-clamp, clamp)
}

/// Levenshtein distance over words, full quadratic table.
pub fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let c = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j - 1] + c)
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}
