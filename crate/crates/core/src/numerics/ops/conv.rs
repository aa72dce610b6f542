//! Dilated 2-d convolution with 'same' zero padding, stride 1.
//!
//! Cross-correlation convention:
//! `y[b,o,t,f] = bias[o] + Σ_{c,i,j} w[o,c,i,j] · x[b,c, t + i·dt − pt, f + j·df − pf]`
//! with `pt = (kt−1)·dt/2`, `pf = (kf−1)·df/2`.
//!
//! The input is copied once into a zero-padded buffer laid out as
//! `[C_in][B][block]`; each kernel tap is then a single GEMM against a
//! shifted view of that buffer. Columns that fall in the frequency padding
//! are computed and discarded. Narrow layers skip GEMM and run the same
//! per-tap products as column-blocked axpy/dot loops.

use crate::error::{Error, Result};
use crate::numerics::real::{gemm, MatMut, MatRef};
use crate::numerics::{Backward, Graph, Real, Tensor, Var};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    frames: usize,
    bins: usize,
    kt: usize,
    kf: usize,
    dt: usize,
    df: usize,
}

impl Geometry {
    fn pad_t(&self) -> usize {
        (self.kt - 1) * self.dt / 2
    }
    fn pad_f(&self) -> usize {
        (self.kf - 1) * self.df / 2
    }
    fn row(&self) -> usize {
        self.bins + 2 * self.pad_f()
    }
    fn block(&self) -> usize {
        (self.frames + 2 * self.pad_t()) * self.row() + 2 * self.pad_f()
    }
    /// GEMM column count covering every batch item.
    fn cols(&self) -> usize {
        (self.batch - 1) * self.block() + self.frames * self.row()
    }
    fn tap_offset(&self, i: usize, j: usize) -> usize {
        i * self.dt * self.row() + j * self.df
    }
    fn weight_view<'a, S>(&self, w: &'a [S], i: usize, j: usize) -> MatRef<'a, S> {
        let taps = self.kt * self.kf;
        MatRef::strided(
            w,
            i * self.kf + j,
            self.cout,
            self.cin,
            self.cin * taps,
            taps,
        )
    }
    fn input_view<'a, S>(&self, xpad: &'a [S], i: usize, j: usize) -> MatRef<'a, S> {
        MatRef::strided(
            xpad,
            self.tap_offset(i, j),
            self.cin,
            self.cols(),
            self.batch * self.block(),
            1,
        )
    }
    /// Position of valid output (b, t, f) within a `cols()`-wide row.
    fn out_col(&self, b: usize, t: usize, f: usize) -> usize {
        b * self.block() + t * self.row() + f
    }
    /// Position of input (c, b, t, f) within the padded buffer.
    fn pad_index(&self, c: usize, b: usize, t: usize, f: usize) -> usize {
        c * self.batch * self.block()
            + b * self.block()
            + (t + self.pad_t()) * self.row()
            + f
            + self.pad_f()
    }
}

/// Layers at most this wide (`c_in · c_out`) use the direct loops.
const DIRECT_MAX_PAIRS: usize = 64;
/// Column block for the direct loops.
const CHUNK: usize = 2048;

impl Geometry {
    fn direct(&self) -> bool {
        self.cin * self.cout <= DIRECT_MAX_PAIRS
    }
    fn channel_stride(&self) -> usize {
        self.batch * self.block()
    }
    fn w_index(&self, o: usize, c: usize, i: usize, j: usize) -> usize {
        ((o * self.cin + c) * self.kt + i) * self.kf + j
    }
}

#[inline]
fn axpy<S: Real>(a: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<S: Real>(x: &[S], y: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for k in 0..8 {
            acc[k] += a[k] * b[k];
        }
    }
    let mut s = acc.iter().copied().sum::<S>();
    for (a, b) in xr.iter().zip(yr) {
        s += *a * *b;
    }
    s
}

fn forward_direct<S: Real>(geo: &Geometry, w: &[S], xpad: &[S], ypad: &mut [S]) {
    let cols = geo.cols();
    let cs = geo.channel_stride();
    for start in (0..cols).step_by(CHUNK) {
        let len = CHUNK.min(cols - start);
        for o in 0..geo.cout {
            let y = &mut ypad[o * cols + start..o * cols + start + len];
            for c in 0..geo.cin {
                for i in 0..geo.kt {
                    for j in 0..geo.kf {
                        let off = c * cs + geo.tap_offset(i, j) + start;
                        axpy(w[geo.w_index(o, c, i, j)], &xpad[off..off + len], y);
                    }
                }
            }
        }
    }
}

fn backward_direct<S: Real>(
    geo: &Geometry,
    w: &[S],
    xpad: &[S],
    gy: &[S],
    gw: &mut [S],
    gxpad: &mut [S],
) {
    let cols = geo.cols();
    let cs = geo.channel_stride();
    for start in (0..cols).step_by(CHUNK) {
        let len = CHUNK.min(cols - start);
        for o in 0..geo.cout {
            let g = &gy[o * cols + start..o * cols + start + len];
            for c in 0..geo.cin {
                for i in 0..geo.kt {
                    for j in 0..geo.kf {
                        let off = c * cs + geo.tap_offset(i, j) + start;
                        let wi = geo.w_index(o, c, i, j);
                        gw[wi] += dot(g, &xpad[off..off + len]);
                        axpy(w[wi], g, &mut gxpad[off..off + len]);
                    }
                }
            }
        }
    }
}

struct Conv2d<S> {
    geo: Geometry,
    xpad: Vec<S>,
}

impl<S: Real> Backward<S> for Conv2d<S> {
    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>> {
        let geo = self.geo;
        let w = inputs[1].data();
        let (tt, ff) = (geo.frames, geo.bins);
        let cols = geo.cols();

        let mut gypad = vec![S::zero(); geo.cout * cols];
        let mut gb = vec![S::zero(); geo.cout];
        for b in 0..geo.batch {
            for o in 0..geo.cout {
                for t in 0..tt {
                    let src = ((b * geo.cout + o) * tt + t) * ff;
                    let dst = o * cols + geo.out_col(b, t, 0);
                    let row = &grad[src..src + ff];
                    gypad[dst..dst + ff].copy_from_slice(row);
                    gb[o] += row.iter().copied().sum::<S>();
                }
            }
        }

        let mut gw = vec![S::zero(); w.len()];
        let mut gxpad = vec![S::zero(); self.xpad.len()];
        let gy = MatRef::new(&gypad, geo.cout, cols);
        let taps = geo.kt * geo.kf;
        if geo.direct() {
            backward_direct(&geo, w, &self.xpad, &gypad, &mut gw, &mut gxpad);
        } else {
            for i in 0..geo.kt {
                for j in 0..geo.kf {
                    let xv = geo.input_view(&self.xpad, i, j);
                    let gw_view = MatMut::strided(
                        &mut gw,
                        i * geo.kf + j,
                        geo.cout,
                        geo.cin,
                        geo.cin * taps,
                        taps,
                    );
                    gemm(S::one(), gy, xv.t(), S::zero(), gw_view);
                    let gx_view = MatMut::strided(
                        &mut gxpad,
                        geo.tap_offset(i, j),
                        geo.cin,
                        cols,
                        geo.batch * geo.block(),
                        1,
                    );
                    gemm(
                        S::one(),
                        geo.weight_view(w, i, j).t(),
                        gy,
                        S::one(),
                        gx_view,
                    );
                }
            }
        }

        let mut gx = Vec::with_capacity(geo.batch * geo.cin * tt * ff);
        for b in 0..geo.batch {
            for c in 0..geo.cin {
                for t in 0..tt {
                    let start = geo.pad_index(c, b, t, 0);
                    gx.extend_from_slice(&gxpad[start..start + ff]);
                }
            }
        }
        vec![Some(gx), Some(gw), Some(gb)]
    }
}

impl<S: Real> Graph<S> {
    /// `x: [B, C_in, T, F]`, `w: [C_out, C_in, k_t, k_f]`, `bias: [C_out]`.
    /// Kernel sizes must be odd.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Var, dilation: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::validation(format!(
                "conv2d: input {xs:?}, kernel {ws:?}"
            )));
        }
        if ws[1] != xs[1] || self.shape(bias) != [ws[0]] {
            return Err(Error::validation(format!(
                "conv2d: input {xs:?}, kernel {ws:?}, bias {:?}",
                self.shape(bias)
            )));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(Error::validation(format!(
                "conv2d: kernel {}x{} must be odd in both dimensions",
                ws[2], ws[3]
            )));
        }
        if dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::validation("conv2d: dilation must be positive"));
        }
        let geo = Geometry {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            frames: xs[2],
            bins: xs[3],
            kt: ws[2],
            kf: ws[3],
            dt: dilation.0,
            df: dilation.1,
        };
        let (tt, ff) = (geo.frames, geo.bins);
        if geo.batch == 0 || tt == 0 || ff == 0 {
            return Err(Error::validation("conv2d: empty input"));
        }

        let xv = self.value(x).data();
        let mut xpad = vec![S::zero(); geo.cin * geo.batch * geo.block()];
        for b in 0..geo.batch {
            for c in 0..geo.cin {
                for t in 0..tt {
                    let src = ((b * geo.cin + c) * tt + t) * ff;
                    let dst = geo.pad_index(c, b, t, 0);
                    xpad[dst..dst + ff].copy_from_slice(&xv[src..src + ff]);
                }
            }
        }

        let cols = geo.cols();
        let mut ypad = vec![S::zero(); geo.cout * cols];
        let wv = self.value(w).data();
        if geo.direct() {
            forward_direct(&geo, wv, &xpad, &mut ypad);
        } else {
            for i in 0..geo.kt {
                for j in 0..geo.kf {
                    gemm(
                        S::one(),
                        geo.weight_view(wv, i, j),
                        geo.input_view(&xpad, i, j),
                        S::one(),
                        MatMut::new(&mut ypad, geo.cout, cols),
                    );
                }
            }
        }

        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(geo.batch * geo.cout * tt * ff);
        for b in 0..geo.batch {
            for o in 0..geo.cout {
                for t in 0..tt {
                    let start = o * cols + geo.out_col(b, t, 0);
                    out.extend(ypad[start..start + ff].iter().map(|&y| y + bv[o]));
                }
            }
        }
        let out = Tensor::new(&[geo.batch, geo.cout, tt, ff], out)?;
        Ok(self.push_op(out, vec![x, w, bias], Box::new(Conv2d { geo, xpad })))
    }
}
