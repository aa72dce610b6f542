//! Mask-network training: batching, normalization statistics, Adam with a
//! per-epoch learning-rate anneal, checkpoints and loss logs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditionProvider, DEFAULT_POSE_SIGMA};
use crate::data::{iterate_batches, jsonl, Manifest, MixtureSample};
use crate::dsp::{BinStats, BinStatsAccumulator, Stft, Waveform};
use crate::embeddings::derive_seed;
use crate::error::{Error, Result};
use crate::model::{
    batch_conditions, forward, update_running_stats, Checkpoint, CheckpointMeta, Condition,
    ConditioningMode, Mode, Model, ModelConfig,
};
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor};
use crate::parallel::parallel_map;
use crate::profile::Profile;

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
/// Per-step metrics, one JSON object per line.
pub const METRICS_FILE: &str = "metrics.jsonl";
/// Per-epoch summaries, one JSON object per line.
pub const EPOCHS_FILE: &str = "epochs.jsonl";

/// Training length of every clip, in seconds.
pub const CLIP_SECONDS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub conditioning_mode: ConditioningMode,
    pub batch_size: usize,
    pub epochs: u32,
    pub initial_lr: f64,
    pub anneal_divisor: f64,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    pub profile: Profile,
    pub pose_sigma: f64,
    /// Network widths; the profile default when absent.
    pub model: Option<ModelConfig>,
    /// Worker threads for batch preparation (the optimizer step is serial).
    pub threads: usize,
    /// Record elapsed time in the metrics logs; zero when off.
    pub wall_clock: bool,
}

impl TrainConfig {
    pub fn new(
        conditioning_mode: ConditioningMode,
        profile: Profile,
        checkpoint_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            conditioning_mode,
            batch_size: 8,
            epochs: 30,
            initial_lr: 1e-3,
            anneal_divisor: 1.1,
            seed: 0,
            checkpoint_dir: checkpoint_dir.into(),
            profile,
            pose_sigma: DEFAULT_POSE_SIGMA,
            model: None,
            threads: 1,
            wall_clock: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::validation("initial_lr must be positive"));
        }
        if !(self.anneal_divisor >= 1.0 && self.anneal_divisor.is_finite()) {
            return Err(Error::validation("anneal_divisor must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be positive"));
        }
        if !(self.pose_sigma >= 0.0 && self.pose_sigma.is_finite()) {
            return Err(Error::validation("pose_sigma must be nonnegative"));
        }
        self.model_config().validate()
    }

    /// Network configuration with the conditioning mode applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self
            .model
            .clone()
            .unwrap_or_else(|| self.profile.model(self.conditioning_mode));
        m.conditioning_mode = self.conditioning_mode;
        m
    }

    fn record(&self, best: Option<f64>) -> TrainRecord {
        TrainRecord {
            conditioning_mode: self.conditioning_mode,
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            anneal_divisor: self.anneal_divisor,
            profile: self.profile,
            best_score: best,
        }
    }
}

/// Training settings stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainRecord {
    conditioning_mode: ConditioningMode,
    batch_size: usize,
    initial_lr: f64,
    anneal_divisor: f64,
    profile: Profile,
    best_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: u32,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u32,
    pub mean_loss: f64,
    pub validation_loss: Option<f64>,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State after the final epoch (also written as `last.ckpt`).
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochSummary>,
}

/// Network inputs and loss targets of a batch, each `[B, T, F]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub frames: usize,
    pub bins: usize,
    pub input: Vec<f32>,
    pub mix_mag: Vec<f32>,
    pub target_mag: Vec<f32>,
    pub conditions: Vec<Condition>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Everything needed to turn manifest samples into batches.
pub struct BatchLoader<'a> {
    pub manifest: &'a Manifest,
    pub provider: &'a ConditionProvider,
    pub stft: Stft,
    pub stats: BinStats,
    pub mode: ConditioningMode,
    pub clip_len: usize,
    pub threads: usize,
}

/// Pad or crop to exactly `len` samples.
pub fn fit_length(w: &Waveform, len: usize) -> Waveform {
    w.segment(0, len)
}

fn clip_len(profile: Profile) -> usize {
    (CLIP_SECONDS * profile.sample_rate() as f64).round() as usize
}

/// Per-bin statistics of the training mixtures, each fitted to the clip length.
pub fn mixture_stats(
    manifest: &Manifest,
    stft: &Stft,
    clip_len: usize,
    threads: usize,
) -> Result<BinStats> {
    let mags = parallel_map(manifest.samples.len(), threads, |i| {
        let audio = manifest.load_audio(&manifest.samples[i])?;
        Ok(stft
            .forward_padded(&fit_length(&audio.mixture, clip_len))?
            .magnitude())
    })?;
    let mut acc = BinStatsAccumulator::default();
    for m in &mags {
        acc.add(m)?;
    }
    acc.finish()
}

impl BatchLoader<'_> {
    /// Load samples `indices`; `variants[k]` picks the face variant of item k.
    pub fn load(&self, indices: &[usize], variants: &[usize]) -> Result<Batch> {
        let bins = self.stft.config().freq_bins();
        let items = parallel_map(indices.len(), self.threads, |k| {
            let s: &MixtureSample = &self.manifest.samples[indices[k]];
            let audio = self.manifest.load_audio(s)?;
            let mix = self
                .stft
                .forward_padded(&fit_length(&audio.mixture, self.clip_len))?;
            let target = self
                .stft
                .forward_padded(&fit_length(&audio.target, self.clip_len))?;
            let mm = mix.magnitude_f32();
            let tm = target.magnitude_f32();
            let input = self.stats.normalize_f32(&mm)?;
            let cond = self
                .provider
                .for_sample(self.manifest, s, variants[k], self.mode)?;
            Ok((s.id.clone(), mix.frames, input, mm, tm, cond))
        })?;
        let frames = items.first().map_or(0, |it| it.1);
        let mut b = Batch {
            ids: Vec::new(),
            frames,
            bins,
            input: Vec::new(),
            mix_mag: Vec::new(),
            target_mag: Vec::new(),
            conditions: Vec::new(),
        };
        for (id, _, input, mm, tm, cond) in items {
            b.ids.push(id);
            b.input.extend(input);
            b.mix_mag.extend(mm);
            b.target_mag.extend(tm);
            b.conditions.push(cond);
        }
        Ok(b)
    }
}

/// Loss of `model` on a batch without updating anything.
pub fn batch_loss(model: &Model, batch: &Batch, mode: Mode) -> Result<f64> {
    let mut g = Graph::new();
    let (loss, _) = build_loss(model, batch, &mut g, mode)?;
    Ok(f64::from(g.value(loss).data()[0]))
}

fn build_loss(
    model: &Model,
    batch: &Batch,
    g: &mut Graph<f32>,
    mode: Mode,
) -> Result<(crate::numerics::Var, crate::model::ForwardOutput<f32>)> {
    let shape = [batch.len(), batch.frames, batch.bins];
    let cond = batch_conditions(&batch.conditions, &model.config)?;
    let input = Tensor::new(&shape, batch.input.clone())?;
    let out = forward(&model.config, &model.params, g, input, &cond, mode)?;
    let mix = g.constant(Tensor::new(&shape, batch.mix_mag.clone())?);
    let target = g.constant(Tensor::new(&shape, batch.target_mag.clone())?);
    let est = g.mul(out.mask, mix)?;
    let loss = g.mse_loss(est, target)?;
    Ok((loss, out))
}

fn non_finite(epoch: u32, step: u64, what: String) -> Error {
    Error::numerical(format!("epoch {epoch} step {step}: {what}"))
}

/// One optimizer step. Returns the pre-step loss.
fn train_step(
    model: &mut Model,
    adam: &mut AdamState<f32>,
    batch: &Batch,
    epoch: u32,
    step: u64,
) -> Result<f64> {
    if let Err(name) = model.params.all_finite() {
        return Err(non_finite(
            epoch,
            step,
            format!("parameter {name} is not finite"),
        ));
    }
    let mut g = Graph::new();
    let (loss_var, out) = build_loss(model, batch, &mut g, Mode::Train)?;
    let loss = f64::from(g.value(loss_var).data()[0]);
    g.backward(loss_var)?;
    let mut grads = Vec::with_capacity(out.param_vars.len());
    for &(idx, var) in &out.param_vars {
        let grad = g
            .take_grad(var)
            .unwrap_or_else(|| vec![0.0; g.value(var).len()]);
        if grad.iter().any(|v| !v.is_finite()) {
            let name = &model.params.by_index(idx).name;
            return Err(non_finite(
                epoch,
                step,
                format!("loss is {loss}; gradient of parameter {name} is not finite"),
            ));
        }
        grads.push((idx, grad));
    }
    if !loss.is_finite() {
        return Err(non_finite(
            epoch,
            step,
            format!(
                "loss is {loss} with finite parameters (batch {:?})",
                batch.ids
            ),
        ));
    }
    let trainable = model.params.trainable_indices();
    if trainable.len() != grads.len() || trainable.iter().zip(&grads).any(|(a, (b, _))| a != b) {
        return Err(Error::validation(
            "forward pass did not touch every trainable parameter in order",
        ));
    }
    {
        let mut slices: Vec<&mut [f32]> = model
            .params
            .iter_mut()
            .filter(|p| p.kind == crate::model::ParamKind::Trainable)
            .map(|p| p.tensor.data_mut())
            .collect();
        let gs: Vec<&[f32]> = grads.iter().map(|(_, g)| g.as_slice()).collect();
        adam.step(&mut slices, &gs)?;
    }
    update_running_stats(&mut model.params, &out.bn_stats, model.config.bn_momentum)?;
    if let Err(name) = model.params.all_finite() {
        return Err(non_finite(
            epoch,
            step,
            format!("parameter {name} became non-finite after the update"),
        ));
    }
    Ok(loss)
}

struct Session<'a> {
    cfg: &'a TrainConfig,
    loader: BatchLoader<'a>,
    validation: Option<BatchLoader<'a>>,
    n_variants: usize,
}

/// Train from scratch.
pub fn train(
    manifest: &Manifest,
    cfg: &TrainConfig,
    provider: &ConditionProvider,
    validation: Option<&Manifest>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let stft = Stft::new(cfg.profile.stft())?;
    check_inputs(manifest, cfg, provider)?;
    if let Some(v) = validation {
        check_inputs(v, cfg, provider)?;
    }
    let clip = clip_len(cfg.profile);
    let stats = mixture_stats(manifest, &stft, clip, cfg.threads)?;
    let model_config = cfg.model_config();
    let model = Model::new(model_config, derive_seed(cfg.seed, "init", 0))?;
    let sizes: Vec<usize> = model
        .params
        .trainable_indices()
        .iter()
        .map(|&i| model.params.by_index(i).tensor.len())
        .collect();
    let adam = AdamState::new(
        AdamConfig {
            lr: cfg.initial_lr,
            ..AdamConfig::default()
        },
        &sizes,
    );
    let ckpt = Checkpoint {
        model,
        meta: CheckpointMeta {
            stft: cfg.profile.stft(),
            face_pose_sigma: cfg.pose_sigma,
            train: serde_json::to_value(cfg.record(None))?,
        },
        optimizer: Some(adam),
        stats,
        epoch: 0,
        seed: cfg.seed,
    };
    std::fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;
    for f in [METRICS_FILE, EPOCHS_FILE] {
        let p = cfg.checkpoint_dir.join(f);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    run(ckpt, manifest, cfg, provider, validation)
}

/// Continue training from a checkpoint written by [`train`] up to `cfg.epochs`.
pub fn resume(
    checkpoint: &Path,
    manifest: &Manifest,
    cfg: &TrainConfig,
    provider: &ConditionProvider,
    validation: Option<&Manifest>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    check_inputs(manifest, cfg, provider)?;
    if let Some(v) = validation {
        check_inputs(v, cfg, provider)?;
    }
    if ckpt.optimizer.is_none() {
        return Err(Error::validation(format!(
            "{}: no optimizer state to resume from",
            checkpoint.display()
        )));
    }
    if ckpt.model.config != cfg.model_config()
        || ckpt.meta.stft != cfg.profile.stft()
        || ckpt.seed != cfg.seed
    {
        return Err(Error::validation(format!(
            "{}: network, profile or seed differ from the training configuration",
            checkpoint.display()
        )));
    }
    let rec: TrainRecord = serde_json::from_value(ckpt.meta.train.clone())?;
    if rec.batch_size != cfg.batch_size
        || rec.anneal_divisor != cfg.anneal_divisor
        || rec.initial_lr != cfg.initial_lr
    {
        return Err(Error::validation(
            "batch size or learning-rate schedule differ from the checkpoint",
        ));
    }
    std::fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;
    run(ckpt, manifest, cfg, provider, validation)
}

fn check_inputs(
    manifest: &Manifest,
    cfg: &TrainConfig,
    provider: &ConditionProvider,
) -> Result<()> {
    if manifest.samples.is_empty() {
        return Err(Error::validation(format!(
            "{}: manifest is empty",
            manifest.path.display()
        )));
    }
    let sr = manifest.sample_rate()?;
    if sr != cfg.profile.sample_rate() {
        return Err(Error::validation(format!(
            "{}: audio is {sr} Hz but the {} profile expects {} Hz",
            manifest.path.display(),
            cfg.profile,
            cfg.profile.sample_rate()
        )));
    }
    let m = cfg.model_config();
    if provider.voice_dim != m.embedding_dims.voice || provider.face_dim != m.embedding_dims.face {
        return Err(Error::validation(
            "embedding provider dims differ from the network",
        ));
    }
    provider.check_manifest(manifest, cfg.conditioning_mode)
}

fn loader<'a>(
    manifest: &'a Manifest,
    provider: &'a ConditionProvider,
    cfg: &TrainConfig,
    stats: &BinStats,
) -> Result<BatchLoader<'a>> {
    Ok(BatchLoader {
        manifest,
        provider,
        stft: Stft::new(cfg.profile.stft())?,
        stats: stats.clone(),
        mode: cfg.conditioning_mode,
        clip_len: clip_len(cfg.profile),
        threads: cfg.threads,
    })
}

fn run(
    mut ckpt: Checkpoint,
    manifest: &Manifest,
    cfg: &TrainConfig,
    provider: &ConditionProvider,
    validation: Option<&Manifest>,
) -> Result<TrainOutcome> {
    let session = Session {
        cfg,
        loader: loader(manifest, provider, cfg, &ckpt.stats)?,
        validation: validation
            .map(|v| loader(v, provider, cfg, &ckpt.stats))
            .transpose()?,
        n_variants: if cfg.conditioning_mode.uses_face() {
            manifest
                .samples
                .iter()
                .map(|s| s.face_variant_ids.len())
                .min()
                .unwrap_or(0)
        } else {
            1
        },
    };
    let mut rec: TrainRecord = serde_json::from_value(ckpt.meta.train.clone())?;
    let mut adam = ckpt.optimizer.take().expect("checked by caller");
    let steps_per_epoch = manifest.samples.len().div_ceil(cfg.batch_size) as u64;
    let mut summaries = Vec::new();
    let metrics_path = cfg.checkpoint_dir.join(METRICS_FILE);
    let epochs_path = cfg.checkpoint_dir.join(EPOCHS_FILE);
    let start = Instant::now();
    for epoch in ckpt.epoch..cfg.epochs {
        let t0 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "epoch", u64::from(epoch)));
        let batches = iterate_batches(manifest.samples.len(), cfg.batch_size, Some(rng.gen()))?;
        let lr = adam.lr;
        let mut total = 0.0;
        let mut step_metrics = Vec::with_capacity(batches.len());
        for (b, idx) in batches.iter().enumerate() {
            let variants: Vec<usize> = idx
                .iter()
                .map(|_| rng.gen_range(0..session.n_variants))
                .collect();
            let batch = session.loader.load(idx, &variants)?;
            let step = u64::from(epoch) * steps_per_epoch + b as u64;
            let loss = train_step(&mut ckpt.model, &mut adam, &batch, epoch, step)?;
            total += loss;
            step_metrics.push(StepMetrics {
                epoch,
                step,
                loss,
                lr,
                wall_ms: elapsed_ms(cfg, start),
            });
        }
        jsonl::append_all(&metrics_path, &step_metrics)?;
        let mean_loss = total / batches.len() as f64;
        let validation_loss = session
            .validation
            .as_ref()
            .map(|v| validation_loss(&ckpt.model, v, session.cfg.batch_size))
            .transpose()?;
        adam.anneal(cfg.anneal_divisor);
        ckpt.epoch = epoch + 1;
        let score = validation_loss.unwrap_or(mean_loss);
        let improved = rec.best_score.is_none_or(|b| score < b);
        if improved {
            rec.best_score = Some(score);
        }
        ckpt.meta.train = serde_json::to_value(&rec)?;
        ckpt.optimizer = Some(adam);
        ckpt.save(&cfg.checkpoint_dir.join(LAST_CHECKPOINT))?;
        if improved {
            ckpt.save(&cfg.checkpoint_dir.join(BEST_CHECKPOINT))?;
        }
        adam = ckpt.optimizer.take().unwrap();
        let summary = EpochSummary {
            epoch,
            mean_loss,
            validation_loss,
            lr,
            wall_ms: elapsed_ms(cfg, t0),
        };
        log::info!(
            "epoch {epoch}: loss {mean_loss:.6}{} lr {lr:.6} ({} ms)",
            validation_loss.map_or(String::new(), |v| format!(" val {v:.6}")),
            summary.wall_ms
        );
        jsonl::append(&epochs_path, &summary)?;
        summaries.push(summary);
    }
    ckpt.optimizer = Some(adam);
    Ok(TrainOutcome {
        checkpoint: ckpt,
        epochs: summaries,
    })
}

fn elapsed_ms(cfg: &TrainConfig, since: Instant) -> u64 {
    if cfg.wall_clock {
        since.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// Eval-mode loss over a whole manifest, using each sample's first face variant.
pub fn validation_loss(model: &Model, loader: &BatchLoader<'_>, batch_size: usize) -> Result<f64> {
    let n = loader.manifest.samples.len();
    let (mut total, mut count) = (0.0, 0usize);
    for idx in iterate_batches(n, batch_size, None)? {
        let batch = loader.load(&idx, &vec![0; idx.len()])?;
        total += batch_loss(model, &batch, Mode::Eval)? * idx.len() as f64;
        count += idx.len();
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests;
