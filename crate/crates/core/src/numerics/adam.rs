use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Real> AdamState<S> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            step: 0,
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            m: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    /// One update of every parameter tensor from its gradient.
    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[&[S]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::validation(format!(
                "adam: {} moment tensors, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (S::c(self.beta1), S::c(self.beta2));
        let (ob1, ob2) = (S::c(1.0 - self.beta1), S::c(1.0 - self.beta2));
        let step_size = S::c(self.lr / c1);
        let inv_c2 = S::c(1.0 / c2);
        let eps = S::c(self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::validation("adam: parameter/gradient size mismatch"));
            }
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + ob1 * gi;
                v[i] = b2 * v[i] + ob2 * gi * gi;
                p[i] -= step_size * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Divide the learning rate by `divisor` (≥ 1).
    pub fn anneal(&mut self, divisor: f64) {
        debug_assert!(divisor >= 1.0);
        self.lr /= divisor;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut st = AdamState::<f64>::new(AdamConfig::default(), &[1]);
        let mut p = [0.0];
        st.step(&mut [&mut p], &[&[1.0]]).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-10, "{}", p[0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut st = AdamState::<f64>::new(AdamConfig::default(), &[3]);
        let mut p = [1.0, -2.0, 0.5];
        st.step(&mut [&mut p], &[&[0.0; 3]]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constant_gradient_steps_do_not_grow() {
        let mut st = AdamState::<f64>::new(AdamConfig::default(), &[1]);
        let mut p = [0.0];
        let mut last = f64::INFINITY;
        for _ in 0..5 {
            let before = p[0];
            st.step(&mut [&mut p], &[&[0.7]]).unwrap();
            let delta = (p[0] - before).abs();
            assert!(delta <= last + 1e-15);
            last = delta;
        }
    }

    #[test]
    fn anneal_sequence() {
        let mut st = AdamState::<f64>::new(AdamConfig::default(), &[]);
        st.anneal(1.1);
        assert!((st.lr - 0.000_909_090_909_090_909).abs() < 1e-15);
        st.anneal(1.1);
        assert!((st.lr - 0.000_826_446_280_991_735_5).abs() < 1e-15);
        for _ in 0..1000 {
            st.anneal(1.1);
        }
        assert!(st.lr > 0.0);
    }
}
