//! Central finite-difference verification of every differentiable op.
//!
//! Each case builds a small double-precision graph ending in an MSE against
//! a fixed random target, runs the reverse pass, and compares every element
//! of every trainable input's gradient with `(L(θ+h) − L(θ−h)) / 2h`.
//!
//! Element error is `|analytic − numeric| / max(|analytic|, |numeric|, floor)`
//! where `floor` is 1e-3 of the largest numeric gradient in that tensor, so
//! elements whose true gradient is ~0 are judged on an absolute scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, LstmVars, Tensor, Var};
use crate::error::Result;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub elements: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// A leaf tensor and whether its gradient is checked.
pub struct Leaf {
    pub value: Tensor<f64>,
    pub trainable: bool,
}

impl Leaf {
    pub fn param(value: Tensor<f64>) -> Self {
        Self {
            value,
            trainable: true,
        }
    }

    pub fn input(value: Tensor<f64>) -> Self {
        Self {
            value,
            trainable: true,
        }
    }

    pub fn fixed(value: Tensor<f64>) -> Self {
        Self {
            value,
            trainable: false,
        }
    }
}

/// Compare analytic and numeric gradients of `build` w.r.t. every trainable leaf.
/// `build` returns the node whose MSE against a fixed random target is the loss.
pub fn check<F>(name: &str, leaves: &[Leaf], seed: u64, build: F) -> Result<CheckResult>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut target: Option<Tensor<f64>> = None;
    let mut eval =
        |values: &[Tensor<f64>], want_grad: bool| -> Result<(f64, Vec<Option<Vec<f64>>>)> {
            let mut g = Graph::new();
            let vars: Vec<Var> = values
                .iter()
                .zip(leaves)
                .map(|(v, l)| g.leaf(v.clone(), l.trainable))
                .collect();
            let out = build(&mut g, &vars)?;
            let tgt = target
                .get_or_insert_with(|| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                    Tensor::uniform(g.shape(out), 1.0, &mut rng)
                })
                .clone();
            let t = g.constant(tgt);
            let loss = g.mse_loss(out, t)?;
            let value = g.value(loss).data()[0];
            if !want_grad {
                return Ok((value, Vec::new()));
            }
            g.backward(loss)?;
            Ok((
                value,
                vars.iter()
                    .map(|&v| g.grad(v).map(<[f64]>::to_vec))
                    .collect(),
            ))
        };

    let mut values: Vec<Tensor<f64>> = leaves.iter().map(|l| l.value.clone()).collect();
    let (loss0, analytic) = eval(&values, true)?;
    // Rounding noise of a central difference counts as at most TOLERANCE.
    let noise = 16.0 * f64::EPSILON * loss0.abs().max(1.0) / STEP / TOLERANCE;
    let mut worst: f64 = 0.0;
    let mut elements = 0;
    for (li, leaf) in leaves.iter().enumerate() {
        if !leaf.trainable {
            continue;
        }
        let a = analytic[li]
            .clone()
            .unwrap_or_else(|| vec![0.0; leaf.value.len()]);
        let mut numeric = vec![0.0; leaf.value.len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let orig = values[li].data()[e];
            values[li].data_mut()[e] = orig + STEP;
            let (lp, _) = eval(&values, false)?;
            values[li].data_mut()[e] = orig - STEP;
            let (lm, _) = eval(&values, false)?;
            values[li].data_mut()[e] = orig;
            *slot = (lp - lm) / (2.0 * STEP);
        }
        let floor = 1e-3 * numeric.iter().fold(0.0f64, |m, x| m.max(x.abs())) + noise;
        for (x, n) in a.iter().zip(&numeric) {
            let err = (x - n).abs() / x.abs().max(n.abs()).max(floor);
            worst = worst.max(err);
        }
        elements += numeric.len();
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: worst,
        elements,
    })
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<f64> {
    Tensor::uniform(shape, bound, rng)
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Kernel/dilation rows of the mask network's conv stack.
pub const CONV_ROWS: [(&str, (usize, usize), (usize, usize)); 7] = [
    ("conv2d cnn1 1x7", (1, 7), (1, 1)),
    ("conv2d cnn2 7x1", (7, 1), (1, 1)),
    ("conv2d cnn3 5x5 d2", (5, 5), (2, 1)),
    ("conv2d cnn4 5x5 d4", (5, 5), (4, 1)),
    ("conv2d cnn5 5x5 d8", (5, 5), (8, 1)),
    ("conv2d cnn6 5x5 d16", (5, 5), (16, 1)),
    ("conv2d cnn7 1x1", (1, 1), (1, 1)),
];

/// Run the full suite.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for (i, (name, (kt, kf), dil)) in CONV_ROWS.iter().enumerate() {
        let leaves = [
            Leaf::input(rand_tensor(&mut rng, &[2, 2, 12, 6], 1.0)),
            Leaf::param(rand_tensor(&mut rng, &[2, 2, *kt, *kf], 0.5)),
            Leaf::param(rand_tensor(&mut rng, &[2], 0.5)),
        ];
        let dil = *dil;
        out.push(check(name, &leaves, seed + i as u64, |g, v| {
            g.conv2d(v[0], v[1], v[2], dil)
        })?);
    }

    let leaves = [
        Leaf::input(rand_tensor(&mut rng, &[1, 9, 8, 5], 1.0)),
        Leaf::param(rand_tensor(&mut rng, &[8, 9, 3, 3], 0.3)),
        Leaf::param(rand_tensor(&mut rng, &[8], 0.5)),
    ];
    out.push(check("conv2d wide 3x3 d2", &leaves, seed + 10, |g, v| {
        g.conv2d(v[0], v[1], v[2], (2, 1))
    })?);

    for reverse in [false, true] {
        let leaves = [
            Leaf::input(rand_tensor(&mut rng, &[2, 4, 3], 1.0)),
            Leaf::param(rand_tensor(&mut rng, &[3, 12], 0.6)),
            Leaf::param(rand_tensor(&mut rng, &[3, 12], 0.6)),
            Leaf::param(rand_tensor(&mut rng, &[12], 0.3)),
        ];
        let name = if reverse {
            "lstm reverse"
        } else {
            "lstm forward"
        };
        out.push(check(name, &leaves, seed + 20, |g, v| {
            g.lstm(v[0], v[1], v[2], v[3], reverse)
        })?);
    }

    let leaves = [
        Leaf::input(rand_tensor(&mut rng, &[1, 5, 3], 1.0)),
        Leaf::param(rand_tensor(&mut rng, &[3, 8], 0.6)),
        Leaf::param(rand_tensor(&mut rng, &[2, 8], 0.6)),
        Leaf::param(rand_tensor(&mut rng, &[8], 0.3)),
        Leaf::param(rand_tensor(&mut rng, &[3, 8], 0.6)),
        Leaf::param(rand_tensor(&mut rng, &[2, 8], 0.6)),
        Leaf::param(rand_tensor(&mut rng, &[8], 0.3)),
    ];
    out.push(check("bilstm", &leaves, seed + 21, |g, v| {
        let fwd = LstmVars {
            w_ih: v[1],
            w_hh: v[2],
            bias: v[3],
        };
        let bwd = LstmVars {
            w_ih: v[4],
            w_hh: v[5],
            bias: v[6],
        };
        g.bilstm(v[0], fwd, bwd)
    })?);

    let leaves = [
        Leaf::input(rand_tensor(&mut rng, &[2, 3, 4], 1.0)),
        Leaf::param(rand_tensor(&mut rng, &[4, 5], 0.6)),
        Leaf::param(rand_tensor(&mut rng, &[5], 0.3)),
    ];
    out.push(check("linear", &leaves, seed + 22, |g, v| {
        g.linear(v[0], v[1], v[2])
    })?);

    let leaves = [
        Leaf::input(rand_tensor(&mut rng, &[2, 3, 4, 5], 1.0)),
        Leaf::param(rand_tensor(&mut rng, &[3], 1.0)),
        Leaf::param(rand_tensor(&mut rng, &[3], 1.0)),
    ];
    out.push(check(
        "batchnorm train (channel axis 1)",
        &leaves,
        seed + 23,
        |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1)?.0),
    )?);
    let leaves = [
        Leaf::input(rand_tensor(&mut rng, &[3, 4, 5], 1.0)),
        Leaf::param(rand_tensor(&mut rng, &[5], 1.0)),
        Leaf::param(rand_tensor(&mut rng, &[5], 1.0)),
    ];
    out.push(check(
        "batchnorm train (channels last)",
        &leaves,
        seed + 24,
        |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 2)?.0),
    )?);
    let running_mean = vec![0.1, -0.2, 0.3];
    let running_var = vec![0.5, 1.5, 2.0];
    let leaves = [
        Leaf::input(rand_tensor(&mut rng, &[2, 3, 4], 1.0)),
        Leaf::param(rand_tensor(&mut rng, &[3], 1.0)),
        Leaf::param(rand_tensor(&mut rng, &[3], 1.0)),
    ];
    out.push(check("batchnorm eval", &leaves, seed + 25, |g, v| {
        g.batch_norm_eval(v[0], v[1], v[2], &running_mean, &running_var, 1)
    })?);

    let leaves = [Leaf::input(rand_tensor(&mut rng, &[3, 7], 3.0))];
    out.push(check("sigmoid", &leaves, seed + 26, |g, v| {
        Ok(g.sigmoid(v[0]))
    })?);
    let leaves = [Leaf::input(away_from_zero(&mut rng, &[3, 7]))];
    out.push(check("relu", &leaves, seed + 27, |g, v| Ok(g.relu(v[0])))?);
    let leaves = [
        Leaf::input(rand_tensor(&mut rng, &[3, 7], 1.0)),
        Leaf::input(rand_tensor(&mut rng, &[3, 7], 1.0)),
    ];
    out.push(check("mul", &leaves, seed + 28, |g, v| g.mul(v[0], v[1]))?);
    let leaves = [
        Leaf::input(rand_tensor(&mut rng, &[2, 3, 4], 1.0)),
        Leaf::input(rand_tensor(&mut rng, &[2, 2], 1.0)),
        Leaf::input(rand_tensor(&mut rng, &[2, 3], 1.0)),
    ];
    out.push(check("tile_concat", &leaves, seed + 29, |g, v| {
        g.tile_concat(v[0], &[v[1], v[2]])
    })?);
    let leaves = [Leaf::input(rand_tensor(&mut rng, &[2, 3, 4, 5], 1.0))];
    out.push(check("channels_to_frames", &leaves, seed + 30, |g, v| {
        g.channels_to_frames(v[0])
    })?);
    let leaves = [Leaf::input(rand_tensor(&mut rng, &[4, 3], 1.0))];
    out.push(check("mse_loss", &leaves, seed + 31, |g, v| {
        let t = g.constant(Tensor::full(&[4, 3], 0.25));
        let l = g.mse_loss(v[0], t)?;
        g.reshape(l, &[1])
    })?);

    out.push(micro_network(&mut rng, seed + 40)?);
    Ok(out)
}

/// 2 conv (+BN+ReLU) → flatten → tile embedding → BiLSTM → FC → sigmoid mask,
/// loss on the masked magnitude.
fn micro_network(rng: &mut ChaCha8Rng, seed: u64) -> Result<CheckResult> {
    // Redraw until every ReLU input sits well clear of the kink.
    let leaves = loop {
        let leaves = micro_leaves(rng)?;
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves
            .iter()
            .map(|l| g.leaf(l.value.clone(), l.trainable))
            .collect();
        let mut pre = Vec::new();
        micro_forward(&mut g, &vars, &mut pre)?;
        let margin = pre
            .iter()
            .flat_map(|&p| g.value(p).data().iter().map(|x| x.abs()))
            .fold(f64::INFINITY, f64::min);
        if margin > KINK_MARGIN {
            break leaves;
        }
    };
    check(
        "micro network (2 conv + bilstm + fc)",
        &leaves,
        seed,
        |g, v| micro_forward(g, v, &mut Vec::new()),
    )
}

const KINK_MARGIN: f64 = 1e-2;

fn micro_leaves(rng: &mut ChaCha8Rng) -> Result<Vec<Leaf>> {
    let (b, t, f, c, h, d) = (2, 5, 4, 2, 3, 2);
    let flat = c * f + d;
    Ok(vec![
        Leaf::fixed(rand_tensor(rng, &[b, 1, t, f], 1.0)),
        Leaf::fixed(Tensor::new(
            &[b, t, f],
            (0..b * t * f).map(|_| rng.gen_range(0.1..1.0)).collect(),
        )?),
        Leaf::fixed(rand_tensor(rng, &[b, d], 1.0)),
        Leaf::param(rand_tensor(rng, &[c, 1, 1, 3], 0.8)),
        Leaf::param(rand_tensor(rng, &[c], 0.2)),
        Leaf::param(Tensor::full(&[c], 1.0)),
        Leaf::param(Tensor::zeros(&[c])),
        Leaf::param(rand_tensor(rng, &[c, c, 3, 3], 0.5)),
        Leaf::param(rand_tensor(rng, &[c], 0.2)),
        Leaf::param(Tensor::full(&[c], 1.0)),
        Leaf::param(rand_tensor(rng, &[c], 0.1)),
        Leaf::param(rand_tensor(rng, &[flat, 4 * h], 0.5)),
        Leaf::param(rand_tensor(rng, &[h, 4 * h], 0.5)),
        Leaf::param(rand_tensor(rng, &[4 * h], 0.2)),
        Leaf::param(rand_tensor(rng, &[flat, 4 * h], 0.5)),
        Leaf::param(rand_tensor(rng, &[h, 4 * h], 0.5)),
        Leaf::param(rand_tensor(rng, &[4 * h], 0.2)),
        Leaf::param(rand_tensor(rng, &[2 * h, f], 0.5)),
        Leaf::param(rand_tensor(rng, &[f], 0.2)),
    ])
}

/// Forward pass of the micro network; ReLU inputs are pushed onto `pre`.
fn micro_forward(g: &mut Graph<f64>, v: &[Var], pre: &mut Vec<Var>) -> Result<Var> {
    let x = g.conv2d(v[0], v[3], v[4], (1, 1))?;
    let (x, _) = g.batch_norm_train(x, v[5], v[6], 1)?;
    pre.push(x);
    let x = g.relu(x);
    let x = g.conv2d(x, v[7], v[8], (2, 1))?;
    let (x, _) = g.batch_norm_train(x, v[9], v[10], 1)?;
    pre.push(x);
    let x = g.relu(x);
    let x = g.channels_to_frames(x)?;
    let x = g.tile_concat(x, &[v[2]])?;
    let fwd = LstmVars {
        w_ih: v[11],
        w_hh: v[12],
        bias: v[13],
    };
    let bwd = LstmVars {
        w_ih: v[14],
        w_hh: v[15],
        bias: v[16],
    };
    let x = g.bilstm(x, fwd, bwd)?;
    let x = g.linear(x, v[17], v[18])?;
    let mask = g.sigmoid(x);
    g.mul(mask, v[1])
}
