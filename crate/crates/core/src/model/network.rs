use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{BatchStats, Graph, LstmVars, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<S>,
}

/// Ordered, named parameter tensors of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S> {
    params: Vec<Param<S>>,
}

impl<S: Real> ParamSet<S> {
    pub fn new(params: Vec<Param<S>>) -> Self {
        Self { params }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::format(format!("missing parameter '{name}'")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.params[self.index_of(name)?].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        let i = self.index_of(name)?;
        Ok(&mut self.params[i].tensor)
    }

    pub fn by_index(&self, i: usize) -> &Param<S> {
        &self.params[i]
    }

    pub fn trainable_indices(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params[i].kind == ParamKind::Trainable)
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        match self.params.iter().find(|p| !p.tensor.all_finite()) {
            Some(p) => Err(p.name.clone()),
            None => Ok(()),
        }
    }

    pub fn cast<T: Real>(&self) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-item conditioning vectors, `[B, d]` each.
#[derive(Debug, Clone)]
pub struct Conditioning<S> {
    pub voice: Option<Tensor<S>>,
    pub face: Option<Tensor<S>>,
}

/// Result of a forward pass: the mask node plus what training needs.
pub struct ForwardOutput<S> {
    pub mask: Var,
    /// `(parameter index, graph node)` for every trainable parameter.
    pub param_vars: Vec<(usize, Var)>,
    /// `(batch-norm layer prefix, batch statistics)` in training mode.
    pub bn_stats: Vec<(String, BatchStats<S>)>,
}

fn xavier<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<f32> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}

fn push(params: &mut Vec<Param<f32>>, name: String, kind: ParamKind, tensor: Tensor<f32>) {
    params.push(Param { name, kind, tensor });
}

fn push_bn(params: &mut Vec<Param<f32>>, prefix: &str, channels: usize) {
    push(
        params,
        format!("{prefix}.bn.gamma"),
        ParamKind::Trainable,
        Tensor::full(&[channels], 1.0),
    );
    push(
        params,
        format!("{prefix}.bn.beta"),
        ParamKind::Trainable,
        Tensor::zeros(&[channels]),
    );
    push(
        params,
        format!("{prefix}.bn.running_mean"),
        ParamKind::Buffer,
        Tensor::zeros(&[channels]),
    );
    push(
        params,
        format!("{prefix}.bn.running_var"),
        ParamKind::Buffer,
        Tensor::full(&[channels], 1.0),
    );
}

/// Number of conv layers followed by batch norm and ReLU (all but the last).
fn conv_has_bn(config: &ModelConfig, i: usize) -> bool {
    i + 1 < config.convs.len()
}

/// Deterministic initial parameters.
///
/// Conv and FC weights are Xavier-uniform, LSTM weights uniform in
/// ±1/√H, biases zero except the LSTM forget gate (1).
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamSet<f32>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut cin = 1;
    for (i, c) in config.convs.iter().enumerate() {
        let name = format!("cnn{}", i + 1);
        let (kt, kf) = c.kernel;
        let receptive = kt * kf;
        let w = xavier(
            &[c.channels, cin, kt, kf],
            cin * receptive,
            c.channels * receptive,
            &mut rng,
        );
        push(
            &mut params,
            format!("{name}.weight"),
            ParamKind::Trainable,
            w,
        );
        push(
            &mut params,
            format!("{name}.bias"),
            ParamKind::Trainable,
            Tensor::zeros(&[c.channels]),
        );
        if conv_has_bn(config, i) {
            push_bn(&mut params, &name, c.channels);
        }
        cin = c.channels;
    }
    let h = config.lstm_hidden;
    let bound = 1.0 / (h as f64).sqrt();
    let mut din = config.lstm_input_dim();
    for l in 0..config.lstm_layers {
        for dir in ["fwd", "bwd"] {
            let name = format!("lstm{}.{dir}", l + 1);
            push(
                &mut params,
                format!("{name}.w_ih"),
                ParamKind::Trainable,
                Tensor::uniform(&[din, 4 * h], bound, &mut rng),
            );
            push(
                &mut params,
                format!("{name}.w_hh"),
                ParamKind::Trainable,
                Tensor::uniform(&[h, 4 * h], bound, &mut rng),
            );
            let mut bias = Tensor::zeros(&[4 * h]);
            bias.data_mut()[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
            push(
                &mut params,
                format!("{name}.bias"),
                ParamKind::Trainable,
                bias,
            );
        }
        din = 2 * h;
    }
    for (j, &dout) in config.fc_sizes.iter().enumerate() {
        let name = format!("fc{}", j + 1);
        push(
            &mut params,
            format!("{name}.weight"),
            ParamKind::Trainable,
            xavier(&[din, dout], din, dout, &mut rng),
        );
        push(
            &mut params,
            format!("{name}.bias"),
            ParamKind::Trainable,
            Tensor::zeros(&[dout]),
        );
        push_bn(&mut params, &name, dout);
        din = dout;
    }
    Ok(ParamSet::new(params))
}

struct Builder<'a, S: Real> {
    params: &'a ParamSet<S>,
    g: &'a mut Graph<S>,
    mode: Mode,
    param_vars: Vec<(usize, Var)>,
    bn_stats: Vec<(String, BatchStats<S>)>,
}

impl<S: Real> Builder<'_, S> {
    fn var(&mut self, name: &str) -> Result<Var> {
        let i = self.params.index_of(name)?;
        let v = self.g.param(self.params.by_index(i).tensor.clone());
        self.param_vars.push((i, v));
        Ok(v)
    }

    fn batch_norm(&mut self, x: Var, prefix: &str, axis: usize) -> Result<Var> {
        let gamma = self.var(&format!("{prefix}.bn.gamma"))?;
        let beta = self.var(&format!("{prefix}.bn.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.g.batch_norm_train(x, gamma, beta, axis)?;
                self.bn_stats.push((prefix.to_string(), stats));
                Ok(y)
            }
            Mode::Eval => {
                let mean = self
                    .params
                    .get(&format!("{prefix}.bn.running_mean"))?
                    .data()
                    .to_vec();
                let var = self
                    .params
                    .get(&format!("{prefix}.bn.running_var"))?
                    .data()
                    .to_vec();
                self.g.batch_norm_eval(x, gamma, beta, &mean, &var, axis)
            }
        }
    }

    fn lstm_vars(&mut self, prefix: &str) -> Result<LstmVars> {
        Ok(LstmVars {
            w_ih: self.var(&format!("{prefix}.w_ih"))?,
            w_hh: self.var(&format!("{prefix}.w_hh"))?,
            bias: self.var(&format!("{prefix}.bias"))?,
        })
    }
}

fn check_embedding<S: Real>(
    t: Option<&Tensor<S>>,
    kind: &str,
    batch: usize,
    dim: usize,
) -> Result<Tensor<S>> {
    let t = t.ok_or_else(|| {
        Error::validation(format!("{kind} embedding required by conditioning mode"))
    })?;
    if t.shape() != [batch, dim] {
        return Err(Error::validation(format!(
            "{kind} embedding has shape {:?}, expected [{batch}, {dim}]",
            t.shape()
        )));
    }
    Ok(t.clone())
}

/// Build the mask network on `g`.
///
/// `input` is `[B, T, F]` normalized mixture magnitudes. The returned mask
/// node is `[B, T, F]` with values in (0, 1).
pub fn forward<S: Real>(
    config: &ModelConfig,
    params: &ParamSet<S>,
    g: &mut Graph<S>,
    input: Tensor<S>,
    cond: &Conditioning<S>,
    mode: Mode,
) -> Result<ForwardOutput<S>> {
    let s = input.shape().to_vec();
    if s.len() != 3 || s[2] != config.freq_bins {
        return Err(Error::validation(format!(
            "model input must be [B, T, {}], got {s:?}",
            config.freq_bins
        )));
    }
    let (batch, frames) = (s[0], s[1]);
    if mode == Mode::Train && batch * frames < 2 {
        return Err(Error::validation("training batch needs at least 2 frames"));
    }
    let mut embeddings = Vec::new();
    if config.conditioning_mode.uses_voice() {
        embeddings.push(check_embedding(
            cond.voice.as_ref(),
            "voice",
            batch,
            config.embedding_dims.voice,
        )?);
    }
    if config.conditioning_mode.uses_face() {
        embeddings.push(check_embedding(
            cond.face.as_ref(),
            "face",
            batch,
            config.embedding_dims.face,
        )?);
    }

    let mut b = Builder {
        params,
        g,
        mode,
        param_vars: Vec::new(),
        bn_stats: Vec::new(),
    };
    let x =
        b.g.constant(input.reshape(&[batch, 1, frames, config.freq_bins])?);
    let mut x = x;
    for (i, c) in config.convs.iter().enumerate() {
        let name = format!("cnn{}", i + 1);
        let w = b.var(&format!("{name}.weight"))?;
        let bias = b.var(&format!("{name}.bias"))?;
        x = b.g.conv2d(x, w, bias, c.dilation)?;
        if conv_has_bn(config, i) {
            x = b.batch_norm(x, &name, 1)?;
            x = b.g.relu(x);
        }
    }
    let mut x = b.g.channels_to_frames(x)?;
    if !embeddings.is_empty() {
        let evars: Vec<Var> = embeddings.into_iter().map(|e| b.g.constant(e)).collect();
        x = b.g.tile_concat(x, &evars)?;
    }
    for l in 0..config.lstm_layers {
        let fwd = b.lstm_vars(&format!("lstm{}.fwd", l + 1))?;
        let bwd = b.lstm_vars(&format!("lstm{}.bwd", l + 1))?;
        x = b.g.bilstm(x, fwd, bwd)?;
    }
    let last = config.fc_sizes.len() - 1;
    for j in 0..config.fc_sizes.len() {
        let name = format!("fc{}", j + 1);
        let w = b.var(&format!("{name}.weight"))?;
        let bias = b.var(&format!("{name}.bias"))?;
        x = b.g.linear(x, w, bias)?;
        x = b.batch_norm(x, &name, 2)?;
        x = if j == last {
            b.g.sigmoid(x)
        } else {
            b.g.relu(x)
        };
    }
    Ok(ForwardOutput {
        mask: x,
        param_vars: b.param_vars,
        bn_stats: b.bn_stats,
    })
}

/// Blend batch statistics into the running statistics:
/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn update_running_stats<S: Real>(
    params: &mut ParamSet<S>,
    stats: &[(String, BatchStats<S>)],
    momentum: f64,
) -> Result<()> {
    let m = S::c(momentum);
    let keep = S::c(1.0 - momentum);
    for (prefix, st) in stats {
        for (suffix, batch) in [("running_mean", &st.mean), ("running_var", &st.var)] {
            let t = params.get_mut(&format!("{prefix}.bn.{suffix}"))?;
            if t.len() != batch.len() {
                return Err(Error::validation(format!(
                    "{prefix}.bn.{suffix}: size mismatch"
                )));
            }
            for (r, &v) in t.data_mut().iter_mut().zip(batch.iter()) {
                *r = keep * *r + m * v;
            }
        }
    }
    Ok(())
}
