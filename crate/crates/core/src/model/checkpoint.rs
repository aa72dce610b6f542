//! Versioned binary checkpoint.
//!
//! Layout (little-endian): magic `MSEP`, version u32, u32-length-prefixed
//! JSON config, parameter tensors (name, shape as u32 rank + dims, f32 data),
//! optional Adam state, per-bin statistics, epoch u32, seed u64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{Param, ParamKind, ParamSet};
use super::Model;
use crate::dsp::{BinStats, StftConfig};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSEP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Non-tensor settings stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stft: StftConfig,
    pub face_pose_sigma: f64,
    /// Training settings, opaque to this module.
    #[serde(default)]
    pub train: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ConfigBlob {
    model: ModelConfig,
    #[serde(flatten)]
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub optimizer: Option<AdamState<f32>>,
    pub stats: BinStats,
    pub epoch: u32,
    pub seed: u64,
}

fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v)
            .map_err(|_| Error::format(format!("value {v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.u32(b.len())?;
        self.0.extend_from_slice(b);
        Ok(())
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::format("checkpoint string is not UTF-8"))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format("tensor too large"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION as usize)?;
        let blob = ConfigBlob {
            model: self.model.config.clone(),
            meta: self.meta.clone(),
        };
        w.bytes(serde_json::to_string(&blob)?.as_bytes())?;

        let params = &self.model.params;
        w.u32(params.len())?;
        for p in params.iter() {
            w.bytes(p.name.as_bytes())?;
            w.u32(p.tensor.shape().len())?;
            for &d in p.tensor.shape() {
                w.u32(d)?;
            }
            w.f32s(p.tensor.data());
        }

        match &self.optimizer {
            None => w.u8(0),
            Some(a) => {
                w.u8(1);
                w.u64(a.step);
                w.f64(a.lr);
                w.f64(a.beta1);
                w.f64(a.beta2);
                w.f64(a.eps);
                w.u32(a.m.len())?;
                for (m, v) in a.m.iter().zip(&a.v) {
                    w.u32(m.len())?;
                    w.f32s(m);
                    w.f32s(v);
                }
            }
        }

        w.u32(self.stats.mean.len())?;
        for &m in &self.stats.mean {
            w.f64(m);
        }
        for &s in &self.stats.std {
            w.f64(s);
        }
        w.u32(self.epoch as usize)?;
        w.u64(self.seed);
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::format(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let blob: ConfigBlob = serde_json::from_slice(r.bytes()?)?;
        blob.model.validate()?;

        let n = r.u32()?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.ok_or_else(|| Error::format(format!("{name}: shape overflow")))?;
            let data = r.f32s(len)?;
            let kind = if is_buffer(&name) {
                ParamKind::Buffer
            } else {
                ParamKind::Trainable
            };
            params.push(Param {
                name,
                kind,
                tensor: Tensor::new(&shape, data)?,
            });
        }
        let params = ParamSet::new(params);
        check_layout(&blob.model, &params)?;

        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let count = r.u32()?;
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for _ in 0..count {
                    let len = r.u32()?;
                    m.push(r.f32s(len)?);
                    v.push(r.f32s(len)?);
                }
                let sizes: Vec<usize> = params
                    .trainable_indices()
                    .into_iter()
                    .map(|i| params.by_index(i).tensor.len())
                    .collect();
                if m.iter().map(Vec::len).ne(sizes.iter().copied()) {
                    return Err(Error::format(
                        "optimizer moments do not match trainable parameters",
                    ));
                }
                Some(AdamState {
                    step,
                    lr,
                    beta1,
                    beta2,
                    eps,
                    m,
                    v,
                })
            }
            other => return Err(Error::format(format!("bad optimizer flag {other}"))),
        };

        let bins = r.u32()?;
        let mean = (0..bins).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let std = (0..bins).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if bins != blob.model.freq_bins {
            return Err(Error::format(format!(
                "checkpoint statistics have {bins} bins, model has {}",
                blob.model.freq_bins
            )));
        }
        let epoch = r.u32()? as u32;
        let seed = r.u64()?;
        if r.pos != buf.len() {
            return Err(Error::format(format!(
                "{} trailing bytes in checkpoint",
                buf.len() - r.pos
            )));
        }
        Ok(Self {
            model: Model {
                config: blob.model,
                params,
            },
            meta: blob.meta,
            optimizer,
            stats: BinStats { mean, std },
            epoch,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// The stored tensors must be exactly those the config would create.
fn check_layout(config: &ModelConfig, params: &ParamSet<f32>) -> Result<()> {
    let expected = super::network::init_params(config, 0)?;
    if expected.len() != params.len() {
        return Err(Error::format(format!(
            "checkpoint has {} tensors, config implies {}",
            params.len(),
            expected.len()
        )));
    }
    for (e, p) in expected.iter().zip(params.iter()) {
        if e.name != p.name || e.tensor.shape() != p.tensor.shape() {
            return Err(Error::format(format!(
                "checkpoint tensor {} {:?} does not match expected {} {:?}",
                p.name,
                p.tensor.shape(),
                e.name,
                e.tensor.shape()
            )));
        }
    }
    Ok(())
}
