//! Pointwise ops, linear layers, reshapes and the loss.

use crate::error::{Error, Result};
use crate::numerics::real::{gemm, MatMut, MatRef};
use crate::numerics::{Backward, Graph, Real, Tensor, Var};

struct Relu;

impl<S: Real> Backward<S> for Relu {
    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let g = inputs[0]
            .data()
            .iter()
            .zip(grad)
            .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
            .collect();
        vec![Some(g)]
    }
}

struct Sigmoid;

impl<S: Real> Backward<S> for Sigmoid {
    fn backward(&self, _inputs: &[&Tensor<S>], out: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let g = out
            .data()
            .iter()
            .zip(grad)
            .map(|(&y, &g)| g * y * (S::one() - y))
            .collect();
        vec![Some(g)]
    }
}

struct Mul;

impl<S: Real> Backward<S> for Mul {
    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let ga = b.iter().zip(grad).map(|(&b, &g)| b * g).collect();
        let gb = a.iter().zip(grad).map(|(&a, &g)| a * g).collect();
        vec![Some(ga), Some(gb)]
    }
}

struct Mse;

impl<S: Real> Backward<S> for Mse {
    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let (p, t) = (inputs[0].data(), inputs[1].data());
        let scale = grad[0] * S::c(2.0) / S::c(p.len() as f64);
        let gp: Vec<S> = p.iter().zip(t).map(|(&p, &t)| (p - t) * scale).collect();
        let gt = gp.iter().map(|&x| -x).collect();
        vec![Some(gp), Some(gt)]
    }
}

struct Reshape;

impl<S: Real> Backward<S> for Reshape {
    fn backward(
        &self,
        _inputs: &[&Tensor<S>],
        _out: &Tensor<S>,
        grad: &[S],
    ) -> Vec<Option<Vec<S>>> {
        vec![Some(grad.to_vec())]
    }
}

struct Linear {
    rows: usize,
    din: usize,
    dout: usize,
}

impl<S: Real> Backward<S> for Linear {
    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (n, din, dout) = (self.rows, self.din, self.dout);
        let gy = MatRef::new(grad, n, dout);
        let mut gx = vec![S::zero(); n * din];
        gemm(
            S::one(),
            gy,
            MatRef::new(w, din, dout).t(),
            S::zero(),
            MatMut::new(&mut gx, n, din),
        );
        let mut gw = vec![S::zero(); din * dout];
        gemm(
            S::one(),
            MatRef::new(x, n, din).t(),
            gy,
            S::zero(),
            MatMut::new(&mut gw, din, dout),
        );
        let mut gb = vec![S::zero(); dout];
        for row in grad.chunks(dout) {
            gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
        vec![Some(gx), Some(gw), Some(gb)]
    }
}

/// Splits concatenated last-axis gradients back to each part.
struct ConcatLast {
    rows: usize,
    widths: Vec<usize>,
}

impl<S: Real> Backward<S> for ConcatLast {
    fn backward(
        &self,
        _inputs: &[&Tensor<S>],
        _out: &Tensor<S>,
        grad: &[S],
    ) -> Vec<Option<Vec<S>>> {
        let total: usize = self.widths.iter().sum();
        let mut out: Vec<Vec<S>> = self
            .widths
            .iter()
            .map(|w| Vec::with_capacity(w * self.rows))
            .collect();
        for row in grad.chunks(total) {
            let mut start = 0;
            for (part, &w) in out.iter_mut().zip(&self.widths) {
                part.extend_from_slice(&row[start..start + w]);
                start += w;
            }
        }
        out.into_iter().map(Some).collect()
    }
}

struct TileConcat {
    batch: usize,
    frames: usize,
    feat: usize,
    dims: Vec<usize>,
}

impl<S: Real> Backward<S> for TileConcat {
    fn backward(
        &self,
        _inputs: &[&Tensor<S>],
        _out: &Tensor<S>,
        grad: &[S],
    ) -> Vec<Option<Vec<S>>> {
        let width = self.feat + self.dims.iter().sum::<usize>();
        let mut gf = Vec::with_capacity(self.batch * self.frames * self.feat);
        let mut ge: Vec<Vec<S>> = self
            .dims
            .iter()
            .map(|&d| vec![S::zero(); self.batch * d])
            .collect();
        for b in 0..self.batch {
            for t in 0..self.frames {
                let row = &grad[(b * self.frames + t) * width..(b * self.frames + t + 1) * width];
                gf.extend_from_slice(&row[..self.feat]);
                let mut start = self.feat;
                for (g, &d) in ge.iter_mut().zip(&self.dims) {
                    g[b * d..(b + 1) * d]
                        .iter_mut()
                        .zip(&row[start..start + d])
                        .for_each(|(a, &x)| *a += x);
                    start += d;
                }
            }
        }
        std::iter::once(Some(gf))
            .chain(ge.into_iter().map(Some))
            .collect()
    }
}

struct ChannelsToFrames {
    dims: [usize; 4],
}

impl<S: Real> Backward<S> for ChannelsToFrames {
    fn backward(
        &self,
        _inputs: &[&Tensor<S>],
        _out: &Tensor<S>,
        grad: &[S],
    ) -> Vec<Option<Vec<S>>> {
        let [b, c, t, f] = self.dims;
        let mut g = vec![S::zero(); b * c * t * f];
        for bi in 0..b {
            for ti in 0..t {
                for ci in 0..c {
                    let src = ((bi * t + ti) * c + ci) * f;
                    let dst = ((bi * c + ci) * t + ti) * f;
                    g[dst..dst + f].copy_from_slice(&grad[src..src + f]);
                }
            }
        }
        vec![Some(g)]
    }
}

fn same_shape<S: Real>(g: &Graph<S>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::validation(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

impl<S: Real> Graph<S> {
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(
            v.shape(),
            v.data()
                .iter()
                .map(|&x| if x < S::zero() { S::zero() } else { x })
                .collect(),
        )
        .unwrap();
        self.push_op(out, vec![x], Box::new(Relu))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&x| sigmoid(x)).collect()).unwrap();
        self.push_op(out, vec![x], Box::new(Sigmoid))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::new(
            va.shape(),
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| x * y)
                .collect(),
        )?;
        Ok(self.push_op(out, vec![a, b], Box::new(Mul)))
    }

    /// Mean of squared differences.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape(self, pred, target, "mse_loss")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len().max(1);
        let sum: f64 = p
            .iter()
            .zip(t)
            .map(|(&a, &b)| (a - b).as_f64().powi(2))
            .sum();
        let out = Tensor::scalar(S::c(sum / n as f64));
        Ok(self.push_op(out, vec![pred, target], Box::new(Mse)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push_op(out, vec![x], Box::new(Reshape)))
    }

    /// `x · w + b` over the last axis; `w` is `[din, dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (ws, bs) = (self.shape(w).to_vec(), self.shape(b).to_vec());
        let din = *xs
            .last()
            .ok_or_else(|| Error::validation("linear: scalar input"))?;
        if ws.len() != 2 || ws[0] != din || bs != [ws[1]] {
            return Err(Error::validation(format!(
                "linear: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let dout = ws[1];
        let rows = xs.iter().product::<usize>() / din.max(1);
        let mut out = Vec::with_capacity(rows * dout);
        for _ in 0..rows {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(
            S::one(),
            MatRef::new(self.value(x).data(), rows, din),
            MatRef::new(self.value(w).data(), din, dout),
            S::one(),
            MatMut::new(&mut out, rows, dout),
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let out = Tensor::new(&shape, out)?;
        Ok(self.push_op(out, vec![x, w, b], Box::new(Linear { rows, din, dout })))
    }

    /// Concatenate along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::validation("concat_last: leading shapes differ"));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let out = Tensor::new(&shape, out)?;
        Ok(self.push_op(out, parts.to_vec(), Box::new(ConcatLast { rows, widths })))
    }

    /// Append per-item vectors `[B, d_k]` to every frame of `[B, T, D]`.
    pub fn tile_concat(&mut self, features: Var, embeddings: &[Var]) -> Result<Var> {
        let fs = self.shape(features).to_vec();
        if fs.len() != 3 {
            return Err(Error::validation(format!(
                "tile_concat: features must be [B,T,D], got {fs:?}"
            )));
        }
        let (batch, frames, feat) = (fs[0], fs[1], fs[2]);
        let mut dims = Vec::new();
        for &e in embeddings {
            let s = self.shape(e);
            if s.len() != 2 || s[0] != batch {
                return Err(Error::validation(format!(
                    "tile_concat: embedding must be [{batch}, d], got {s:?}"
                )));
            }
            dims.push(s[1]);
        }
        let width = feat + dims.iter().sum::<usize>();
        let mut out = Vec::with_capacity(batch * frames * width);
        let fv = self.value(features).data();
        for b in 0..batch {
            for t in 0..frames {
                let start = (b * frames + t) * feat;
                out.extend_from_slice(&fv[start..start + feat]);
                for (&e, &d) in embeddings.iter().zip(&dims) {
                    out.extend_from_slice(&self.value(e).data()[b * d..(b + 1) * d]);
                }
            }
        }
        let out = Tensor::new(&[batch, frames, width], out)?;
        let mut inputs = vec![features];
        inputs.extend_from_slice(embeddings);
        Ok(self.push_op(
            out,
            inputs,
            Box::new(TileConcat {
                batch,
                frames,
                feat,
                dims,
            }),
        ))
    }

    /// `[B, C, T, F]` → `[B, T, C·F]`, channel-major within a frame.
    pub fn channels_to_frames(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::validation(format!(
                "channels_to_frames: expected 4-d input, got {s:?}"
            )));
        }
        let (b, c, t, f) = (s[0], s[1], s[2], s[3]);
        let v = self.value(x).data();
        let mut out = vec![S::zero(); v.len()];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let src = ((bi * c + ci) * t + ti) * f;
                    let dst = ((bi * t + ti) * c + ci) * f;
                    out[dst..dst + f].copy_from_slice(&v[src..src + f]);
                }
            }
        }
        let out = Tensor::new(&[b, t, c * f], out)?;
        Ok(self.push_op(
            out,
            vec![x],
            Box::new(ChannelsToFrames { dims: [b, c, t, f] }),
        ))
    }
}

#[inline]
pub fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
