//! Identity embeddings: voice-statistics oracle, synthetic faces, the
//! embedding file format and dispersion statistics.

mod dispersion;
mod face;
mod file;
mod identity;
mod voice;

pub use dispersion::{dispersion_stats, Dispersion};
pub use face::{
    face_embedding_synthetic, face_identity_direction, FACE_ATTRIBUTE_SHARE, FACE_SEED_SALT,
};
pub use file::{
    load_embeddings, read_embeddings, save_embeddings, write_embeddings, EMB_MAGIC, EMB_VERSION,
};
pub use identity::{Formant, SpeakerIdentity, F0_RANGE, FORMANT_GAINS_DB, FORMANT_RANGES};
pub use voice::{
    voice_embedding_oracle, voice_stft_config, VOICE_MELS, VOICE_MIN_SECONDS, VOICE_PROJECTION_SEED,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Voice,
    Face,
}

impl EmbeddingKind {
    pub fn code(self) -> u8 {
        match self {
            Self::Voice => 0,
            Self::Face => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::Voice),
            1 => Ok(Self::Face),
            other => Err(Error::format(format!(
                "unknown embedding kind code {other}"
            ))),
        }
    }
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Voice => "voice",
            Self::Face => "face",
        })
    }
}

impl std::str::FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voice" => Ok(Self::Voice),
            "face" => Ok(Self::Face),
            other => Err(Error::Usage(format!(
                "unknown embedding kind '{other}' (expected voice or face)"
            ))),
        }
    }
}

/// A unit-norm identity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    pub kind: EmbeddingKind,
    pub speaker_id: String,
    /// Utterance id (voice) or face-variant index (face).
    pub source_id: String,
    pub values: Vec<f32>,
}

impl ConditionEmbedding {
    /// Normalize `values` to unit length; rejects empty, non-finite or zero vectors.
    pub fn new(
        kind: EmbeddingKind,
        speaker_id: String,
        source_id: String,
        values: Vec<f64>,
    ) -> Result<Self> {
        let values = normalize(&values)?;
        Ok(Self {
            kind,
            speaker_id,
            source_id,
            values: values.into_iter().map(|v| v as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::validation("empty embedding"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("embedding contains non-finite values"));
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-12 {
        return Err(Error::numerical("embedding has zero norm"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Deterministic 64-bit mix of a base seed with a tag and index.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for b in tag.bytes().chain(index.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01B3).rotate_left(17) ^ (h >> 29);
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
