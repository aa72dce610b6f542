//! Batch normalization over every axis except one channel axis.

use crate::error::{Error, Result};
use crate::numerics::{Backward, Graph, Real, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;

/// Batch statistics from a training-mode call, used to update running stats.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    outer: usize,
    channels: usize,
    inner: usize,
}

impl Layout {
    fn of(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::validation(format!(
                "batch_norm: axis {axis} out of range for {shape:?}"
            )));
        }
        Ok(Self {
            outer: shape[..axis].iter().product(),
            channels: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    fn count(&self) -> usize {
        self.outer * self.inner
    }

    /// Start offsets of the contiguous blocks belonging to channel `c`.
    fn blocks(&self, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.outer).map(move |o| {
            let base = (o * self.channels + c) * self.inner;
            base..base + self.inner
        })
    }
}

/// Per-channel mean and biased variance, accumulated in f64.
fn moments<S: Real>(l: &Layout, x: &[S]) -> (Vec<f64>, Vec<f64>) {
    let n = l.count() as f64;
    let mut mean = vec![0.0; l.channels];
    let mut var = vec![0.0; l.channels];
    for c in 0..l.channels {
        let mut sum = 0.0;
        for r in l.blocks(c) {
            sum += x[r].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = sum / n;
        let mut ss = 0.0;
        for r in l.blocks(c) {
            ss += x[r]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean[c] = mu;
        var[c] = ss / n;
    }
    (mean, var)
}

/// `out = scale·x + shift` per channel.
fn affine<S: Real>(l: &Layout, x: &[S], scale: &[S], shift: &[S]) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for c in 0..l.channels {
        let (k, b) = (scale[c], shift[c]);
        for r in l.blocks(c) {
            for (o, &v) in out[r.clone()].iter_mut().zip(&x[r]) {
                *o = k * v + b;
            }
        }
    }
    out
}

struct BatchNormTrain<S> {
    layout: Layout,
    mean: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Real> Backward<S> for BatchNormTrain<S> {
    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let x = inputs[0].data();
        let gamma = inputs[1].data();
        let l = self.layout;
        let n = S::c(l.count() as f64);
        let mut gx = vec![S::zero(); grad.len()];
        let mut gg = vec![S::zero(); l.channels];
        let mut gbeta = vec![S::zero(); l.channels];
        for c in 0..l.channels {
            let (mu, is) = (self.mean[c], self.inv_std[c]);
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for r in l.blocks(c) {
                for (&g, &v) in grad[r.clone()].iter().zip(&x[r]) {
                    sum_g += g.as_f64();
                    sum_gx += (g * ((v - mu) * is)).as_f64();
                }
            }
            gg[c] = S::c(sum_gx);
            gbeta[c] = S::c(sum_g);
            let (mg, mgx) = (S::c(sum_g) / n, S::c(sum_gx) / n);
            let k = gamma[c] * is;
            for r in l.blocks(c) {
                for ((o, &g), &v) in gx[r.clone()].iter_mut().zip(&grad[r.clone()]).zip(&x[r]) {
                    *o = k * (g - mg - (v - mu) * is * mgx);
                }
            }
        }
        vec![Some(gx), Some(gg), Some(gbeta)]
    }
}

/// Eval mode is a fixed per-channel affine map.
struct BatchNormEval<S> {
    layout: Layout,
    mean: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Real> Backward<S> for BatchNormEval<S> {
    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let x = inputs[0].data();
        let gamma = inputs[1].data();
        let l = self.layout;
        let mut gx = vec![S::zero(); grad.len()];
        let mut gg = vec![S::zero(); l.channels];
        let mut gbeta = vec![S::zero(); l.channels];
        for c in 0..l.channels {
            let (mu, is) = (self.mean[c], self.inv_std[c]);
            let k = gamma[c] * is;
            for r in l.blocks(c) {
                for ((o, &g), &v) in gx[r.clone()].iter_mut().zip(&grad[r.clone()]).zip(&x[r]) {
                    *o = g * k;
                    gg[c] += g * (v - mu) * is;
                    gbeta[c] += g;
                }
            }
        }
        vec![Some(gx), Some(gg), Some(gbeta)]
    }
}

impl<S: Real> Graph<S> {
    /// Normalize with the batch's own statistics (biased variance).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
    ) -> Result<(Var, BatchStats<S>)> {
        let l = Layout::of(self.shape(x), axis)?;
        check_affine(self, gamma, beta, l.channels)?;
        if l.count() < 2 {
            return Err(Error::validation(
                "batch_norm: need at least 2 values per channel",
            ));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let (mean64, var64) = moments(&l, xv);
        let mean: Vec<S> = mean64.iter().map(|&m| S::c(m)).collect();
        let var: Vec<S> = var64.iter().map(|&v| S::c(v)).collect();
        let inv_std: Vec<S> = var64
            .iter()
            .map(|&v| S::c(1.0 / (v + BN_EPS).sqrt()))
            .collect();
        let scale: Vec<S> = (0..l.channels).map(|c| gv[c] * inv_std[c]).collect();
        let shift: Vec<S> = (0..l.channels)
            .map(|c| bv[c] - scale[c] * mean[c])
            .collect();
        let out = Tensor::new(self.shape(x), affine(&l, xv, &scale, &shift))?;
        let var_out = self.push_op(
            out,
            vec![x, gamma, beta],
            Box::new(BatchNormTrain {
                layout: l,
                mean: mean.clone(),
                inv_std,
            }),
        );
        Ok((var_out, BatchStats { mean, var }))
    }

    /// Normalize with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[S],
        running_var: &[S],
        axis: usize,
    ) -> Result<Var> {
        let l = Layout::of(self.shape(x), axis)?;
        check_affine(self, gamma, beta, l.channels)?;
        if running_mean.len() != l.channels || running_var.len() != l.channels {
            return Err(Error::validation(
                "batch_norm: running stats have wrong length",
            ));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let inv_std: Vec<S> = running_var
            .iter()
            .map(|&v| S::one() / (v + S::c(BN_EPS)).sqrt())
            .collect();
        let scale: Vec<S> = (0..l.channels).map(|c| gv[c] * inv_std[c]).collect();
        let shift: Vec<S> = (0..l.channels)
            .map(|c| bv[c] - scale[c] * running_mean[c])
            .collect();
        let out = Tensor::new(self.shape(x), affine(&l, xv, &scale, &shift))?;
        Ok(self.push_op(
            out,
            vec![x, gamma, beta],
            Box::new(BatchNormEval {
                layout: l,
                mean: running_mean.to_vec(),
                inv_std,
            }),
        ))
    }
}

fn check_affine<S: Real>(g: &Graph<S>, gamma: Var, beta: Var, channels: usize) -> Result<()> {
    if g.shape(gamma) != [channels] || g.shape(beta) != [channels] {
        return Err(Error::validation(format!(
            "batch_norm: gamma {:?} / beta {:?} do not match {channels} channels",
            g.shape(gamma),
            g.shape(beta)
        )));
    }
    Ok(())
}
