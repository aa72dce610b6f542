//! One LSTM direction over a whole `[B, T, D]` sequence, with BPTT backward.
//!
//! Gate layout along the `4H` axis is `[input, forget, cell, output]`.
//! `w_ih: [D, 4H]`, `w_hh: [H, 4H]`, `bias: [4H]`, zero initial state.

use super::basic::sigmoid;
use crate::error::{Error, Result};
use crate::numerics::real::{gemm, MatMut, MatRef};
use crate::numerics::{Backward, Graph, Real, Tensor, Var};

#[derive(Debug, Clone, Copy)]
struct Dims {
    batch: usize,
    frames: usize,
    input: usize,
    hidden: usize,
    reverse: bool,
}

impl Dims {
    /// Time index visited at step `s`.
    fn time(&self, s: usize) -> usize {
        if self.reverse {
            self.frames - 1 - s
        } else {
            s
        }
    }

    fn rows(&self) -> usize {
        self.batch * self.frames
    }

    /// `[B, width]` view of the rows belonging to time `t` in a `[B·T, width]` buffer.
    fn at_time<'a, S>(&self, buf: &'a [S], t: usize, width: usize) -> MatRef<'a, S> {
        MatRef::strided(buf, t * width, self.batch, width, self.frames * width, 1)
    }

    fn at_time_mut<'a, S>(&self, buf: &'a mut [S], t: usize, width: usize) -> MatMut<'a, S> {
        MatMut::strided(buf, t * width, self.batch, width, self.frames * width, 1)
    }
}

struct Lstm<S> {
    dims: Dims,
    /// Post-activation gates, `[B·T, 4H]`.
    gates: Vec<S>,
    /// Cell states, `[B·T, H]`.
    cells: Vec<S>,
}

impl<S: Real> Backward<S> for Lstm<S> {
    fn backward(&self, inputs: &[&Tensor<S>], out: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let d = self.dims;
        let (h, g4, rows) = (d.hidden, 4 * d.hidden, d.rows());
        let (x, w_ih, w_hh) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let hs = out.data();

        let mut dgates = vec![S::zero(); rows * g4];
        let mut dh_rec = vec![S::zero(); d.batch * h];
        let mut dc_next = vec![S::zero(); d.batch * h];
        let one = S::one();
        for s in (0..d.frames).rev() {
            let t = d.time(s);
            let prev = (s > 0).then(|| d.time(s - 1));
            for b in 0..d.batch {
                let r = b * d.frames + t;
                for k in 0..h {
                    let gi = self.gates[r * g4 + k];
                    let gf = self.gates[r * g4 + h + k];
                    let gg = self.gates[r * g4 + 2 * h + k];
                    let go = self.gates[r * g4 + 3 * h + k];
                    let tc = self.cells[r * h + k].tanh();
                    let dh = grad[r * h + k] + dh_rec[b * h + k];
                    let d_o = dh * tc;
                    let dc = dh * go * (one - tc * tc) + dc_next[b * h + k];
                    let c_prev =
                        prev.map_or(S::zero(), |tp| self.cells[(b * d.frames + tp) * h + k]);
                    dc_next[b * h + k] = dc * gf;
                    dgates[r * g4 + k] = dc * gg * gi * (one - gi);
                    dgates[r * g4 + h + k] = dc * c_prev * gf * (one - gf);
                    dgates[r * g4 + 2 * h + k] = dc * gi * (one - gg * gg);
                    dgates[r * g4 + 3 * h + k] = d_o * go * (one - go);
                }
            }
            if s > 0 {
                gemm(
                    one,
                    d.at_time(&dgates, t, g4),
                    MatRef::new(w_hh, h, g4).t(),
                    S::zero(),
                    MatMut::new(&mut dh_rec, d.batch, h),
                );
            }
        }

        // h_{t-1} aligned with each row's step; zero at the first step.
        let mut h_prev = vec![S::zero(); rows * h];
        for s in 1..d.frames {
            let (t, tp) = (d.time(s), d.time(s - 1));
            for b in 0..d.batch {
                let dst = (b * d.frames + t) * h;
                let src = (b * d.frames + tp) * h;
                h_prev[dst..dst + h].copy_from_slice(&hs[src..src + h]);
            }
        }
        let dg = MatRef::new(&dgates, rows, g4);
        let mut gw_hh = vec![S::zero(); h * g4];
        gemm(
            one,
            MatRef::new(&h_prev, rows, h).t(),
            dg,
            S::zero(),
            MatMut::new(&mut gw_hh, h, g4),
        );
        let mut gw_ih = vec![S::zero(); d.input * g4];
        gemm(
            one,
            MatRef::new(x, rows, d.input).t(),
            dg,
            S::zero(),
            MatMut::new(&mut gw_ih, d.input, g4),
        );
        let mut gx = vec![S::zero(); rows * d.input];
        gemm(
            one,
            dg,
            MatRef::new(w_ih, d.input, g4).t(),
            S::zero(),
            MatMut::new(&mut gx, rows, d.input),
        );
        let mut gb = vec![S::zero(); g4];
        for row in dgates.chunks(g4) {
            gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        vec![Some(gx), Some(gw_ih), Some(gw_hh), Some(gb)]
    }
}

impl<S: Real> Graph<S> {
    /// Single-direction LSTM; `reverse` runs from the last frame to the first.
    /// Output `[B, T, H]` is aligned with the input's time axis either way.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[1] == 0 {
            return Err(Error::validation(format!(
                "lstm: input must be [B, T>=1, D], got {xs:?}"
            )));
        }
        let hh = self.shape(w_hh).to_vec();
        if hh.len() != 2 || hh[1] != 4 * hh[0] {
            return Err(Error::validation(format!(
                "lstm: w_hh must be [H, 4H], got {hh:?}"
            )));
        }
        let h = hh[0];
        if self.shape(w_ih) != [xs[2], 4 * h] || self.shape(bias) != [4 * h] {
            return Err(Error::validation(format!(
                "lstm: w_ih {:?} / bias {:?} inconsistent with input {xs:?} and hidden {h}",
                self.shape(w_ih),
                self.shape(bias)
            )));
        }
        let d = Dims {
            batch: xs[0],
            frames: xs[1],
            input: xs[2],
            hidden: h,
            reverse,
        };
        let (g4, rows) = (4 * h, d.rows());

        let mut gates = Vec::with_capacity(rows * g4);
        for _ in 0..rows {
            gates.extend_from_slice(self.value(bias).data());
        }
        gemm(
            S::one(),
            MatRef::new(self.value(x).data(), rows, d.input),
            MatRef::new(self.value(w_ih).data(), d.input, g4),
            S::one(),
            MatMut::new(&mut gates, rows, g4),
        );

        let w_hh_v = self.value(w_hh).data();
        let mut hs = vec![S::zero(); rows * h];
        let mut cells = vec![S::zero(); rows * h];
        for s in 0..d.frames {
            let t = d.time(s);
            let prev = (s > 0).then(|| d.time(s - 1));
            if let Some(tp) = prev {
                gemm(
                    S::one(),
                    d.at_time(&hs, tp, h),
                    MatRef::new(w_hh_v, h, g4),
                    S::one(),
                    d.at_time_mut(&mut gates, t, g4),
                );
            }
            for b in 0..d.batch {
                let r = b * d.frames + t;
                let row = &mut gates[r * g4..(r + 1) * g4];
                for k in 0..h {
                    let gi = sigmoid(row[k]);
                    let gf = sigmoid(row[h + k]);
                    let gg = row[2 * h + k].tanh();
                    let go = sigmoid(row[3 * h + k]);
                    row[k] = gi;
                    row[h + k] = gf;
                    row[2 * h + k] = gg;
                    row[3 * h + k] = go;
                    let c_prev = prev.map_or(S::zero(), |tp| cells[(b * d.frames + tp) * h + k]);
                    let c = gf * c_prev + gi * gg;
                    cells[r * h + k] = c;
                    hs[r * h + k] = go * c.tanh();
                }
            }
        }
        let out = Tensor::new(&[d.batch, d.frames, h], hs)?;
        Ok(self.push_op(
            out,
            vec![x, w_ih, w_hh, bias],
            Box::new(Lstm {
                dims: d,
                gates,
                cells,
            }),
        ))
    }
}
