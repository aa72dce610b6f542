//! Mask-estimation network, mask application and checkpoints.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ConditioningMode, ConvSpec, EmbeddingDims, ModelConfig};
pub use network::{
    forward, init_params, update_running_stats, Conditioning, ForwardOutput, Mode, Param,
    ParamKind, ParamSet,
};

use crate::dsp::{BinStats, ComplexSpectrogram, Stft, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};

/// A T×F time-frequency mask with entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

impl Mask {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::validation(format!(
                "mask has {} values, expected {frames}x{bins}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self {
            frames,
            bins,
            values,
        })
    }

    pub fn filled(frames: usize, bins: usize, value: f64) -> Self {
        Self {
            frames,
            bins,
            values: vec![value.clamp(0.0, 1.0); frames * bins],
        }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }
}

/// Scale the mixture magnitude pointwise by the mask, keeping its phase.
pub fn apply_mask(mix: &ComplexSpectrogram, mask: &Mask) -> Result<ComplexSpectrogram> {
    if mix.frames != mask.frames || mix.bins != mask.bins {
        return Err(Error::validation(format!(
            "mask is {}x{}, spectrogram is {}x{}",
            mask.frames, mask.bins, mix.frames, mix.bins
        )));
    }
    let mut out = mix.clone();
    for (c, &m) in out.data.iter_mut().zip(&mask.values) {
        *c *= m;
    }
    Ok(out)
}

/// Conditioning vectors for a single separation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Condition {
    pub voice: Option<Vec<f32>>,
    pub face: Option<Vec<f32>>,
}

impl Condition {
    pub fn voice(v: Vec<f32>) -> Self {
        Self {
            voice: Some(v),
            face: None,
        }
    }

    pub fn face(f: Vec<f32>) -> Self {
        Self {
            voice: None,
            face: Some(f),
        }
    }

    fn to_batch(&self, config: &ModelConfig) -> Result<Conditioning<f32>> {
        let mode = config.conditioning_mode;
        let one = |v: &Option<Vec<f32>>,
                   kind: &str,
                   needed: bool,
                   dim: usize|
         -> Result<Option<Tensor<f32>>> {
            if !needed {
                return Ok(None);
            }
            let v = v.as_ref().ok_or_else(|| {
                Error::validation(format!(
                    "{kind} embedding required by conditioning mode '{mode}'"
                ))
            })?;
            if v.len() != dim {
                return Err(Error::validation(format!(
                    "{kind} embedding has dim {}, model expects {dim}",
                    v.len()
                )));
            }
            Ok(Some(Tensor::new(&[1, dim], v.clone())?))
        };
        Ok(Conditioning {
            voice: one(
                &self.voice,
                "voice",
                mode.uses_voice(),
                config.embedding_dims.voice,
            )?,
            face: one(
                &self.face,
                "face",
                mode.uses_face(),
                config.embedding_dims.face,
            )?,
        })
    }
}

/// Stack per-item conditions into `[B, d]` tensors.
pub fn batch_conditions(conds: &[Condition], config: &ModelConfig) -> Result<Conditioning<f32>> {
    let parts = conds
        .iter()
        .map(|c| c.to_batch(config))
        .collect::<Result<Vec<_>>>()?;
    let stack =
        |pick: fn(&Conditioning<f32>) -> Option<&Tensor<f32>>| -> Result<Option<Tensor<f32>>> {
            let rows: Option<Vec<&Tensor<f32>>> = parts.iter().map(pick).collect();
            match rows {
                Some(rows) if !rows.is_empty() => {
                    let dim = rows[0].len();
                    let data = rows.iter().flat_map(|t| t.data().iter().copied()).collect();
                    Ok(Some(Tensor::new(&[rows.len(), dim], data)?))
                }
                _ => Ok(None),
            }
        };
    Ok(Conditioning {
        voice: stack(|c| c.voice.as_ref())?,
        face: stack(|c| c.face.as_ref())?,
    })
}

/// Append embeddings to every frame of `features` (`[T, D]`, row-major),
/// in the order voice then face.
pub fn tile_and_concat(
    features: &[f32],
    frames: usize,
    config: &ModelConfig,
    cond: &Condition,
) -> Result<Vec<f32>> {
    let feat = config.conv_flat_dim();
    if features.len() != frames * feat {
        return Err(Error::validation(format!(
            "features have {} values, expected {frames}x{feat}",
            features.len()
        )));
    }
    let batch = cond.to_batch(config)?;
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(&[1, frames, feat], features.to_vec())?);
    let embs: Vec<_> = [batch.voice, batch.face]
        .into_iter()
        .flatten()
        .map(|t| g.constant(t))
        .collect();
    if embs.is_empty() {
        return Err(Error::validation("no conditioning embeddings supplied"));
    }
    let y = g.tile_concat(x, &embs)?;
    Ok(g.value(y).data().to_vec())
}

/// A network configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Eval-mode mask for one utterance of normalized magnitudes (`T×F`).
    pub fn predict_mask(
        &self,
        normalized: &[f32],
        frames: usize,
        cond: &Condition,
    ) -> Result<Mask> {
        let f = self.config.freq_bins;
        if normalized.len() != frames * f {
            return Err(Error::validation(format!(
                "input has {} values, expected {frames}x{f}",
                normalized.len()
            )));
        }
        let batch = cond.to_batch(&self.config)?;
        let mut g = Graph::new();
        let input = Tensor::new(&[1, frames, f], normalized.to_vec())?;
        let out = forward(
            &self.config,
            &self.params,
            &mut g,
            input,
            &batch,
            Mode::Eval,
        )?;
        let values = g
            .value(out.mask)
            .data()
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        Mask::new(frames, f, values)
    }

    /// Zero the final FC layer so the mask is exactly 0.5 everywhere.
    pub fn zero_output_layer(&mut self) -> Result<()> {
        let last = self.config.fc_sizes.len();
        for suffix in ["weight", "bias", "bn.gamma", "bn.beta"] {
            let t = self.params.get_mut(&format!("fc{last}.{suffix}"))?;
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(())
    }
}

/// Normalized network input for a magnitude spectrogram.
pub fn normalized_input(mix: &ComplexSpectrogram, stats: &BinStats) -> Result<Vec<f32>> {
    stats.normalize_f32(&mix.magnitude_f32())
}

/// STFT, normalize, predict a mask, apply it to the mixture and resynthesize
/// with the mixture phase. The output has the mixture's length.
pub fn separate_with(
    mixture: &Waveform,
    cond: &Condition,
    model: &Model,
    stats: &BinStats,
    stft_config: StftConfig,
) -> Result<Waveform> {
    let stft = Stft::new(stft_config)?;
    let spec = stft.forward_padded(mixture)?;
    let input = normalized_input(&spec, stats)?;
    let mask = model.predict_mask(&input, spec.frames, cond)?;
    stft.inverse_padded(&apply_mask(&spec, &mask)?, mixture.len())
}

/// Separate the conditioned speaker from `mixture` using a checkpoint.
pub fn separate(mixture: &Waveform, cond: &Condition, checkpoint: &Checkpoint) -> Result<Waveform> {
    separate_with(
        mixture,
        cond,
        &checkpoint.model,
        &checkpoint.stats,
        checkpoint.meta.stft,
    )
}
