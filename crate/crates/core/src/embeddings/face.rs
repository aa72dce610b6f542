//! Synthetic face embeddings with pose jitter.
//!
//! A speaker's base vector mixes a seeded random direction with a fixed
//! linear image of the speaker's synthesis attributes (pitch and resonance
//! positions), so faces carry some information about the voice the way real
//! faces do. Each variant adds seeded Gaussian jitter scaled by `pose_sigma`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{derive_seed, normalize, ConditionEmbedding, EmbeddingKind, SpeakerIdentity};
use crate::error::{Error, Result};

/// Fraction of the base vector's energy that encodes voice attributes.
pub const FACE_ATTRIBUTE_SHARE: f64 = 0.9;
pub const FACE_SEED_SALT: u64 = 0x6661_6365_5f76_3031;

fn gaussian(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            scale * {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            }
        })
        .collect()
}

/// The speaker-specific random direction, before attributes are mixed in.
pub fn face_identity_direction(identity: &SpeakerIdentity, dim: usize) -> Result<Vec<f64>> {
    normalize(&gaussian(
        dim,
        derive_seed(FACE_SEED_SALT, "identity", identity.seed),
    ))
}

/// Unit base vector of a speaker's face.
pub fn face_base(identity: &SpeakerIdentity, dim: usize) -> Result<Vec<f64>> {
    let attrs = identity.attributes();
    // Mean squared attribute for values uniform on [-1, 1] is 1/3.
    let attr_gain = (FACE_ATTRIBUTE_SHARE / (attrs.len() as f64 / 3.0)).sqrt();
    let mut v: Vec<f64> = gaussian(dim, derive_seed(FACE_SEED_SALT, "identity", identity.seed))
        .into_iter()
        .map(|x| x * (1.0 - FACE_ATTRIBUTE_SHARE).sqrt())
        .collect();
    for (k, &a) in attrs.iter().enumerate() {
        let axis = gaussian(dim, derive_seed(FACE_SEED_SALT, "attribute", k as u64));
        v.iter_mut()
            .zip(&axis)
            .for_each(|(x, u)| *x += attr_gain * a * u);
    }
    normalize(&v)
}

/// Variant `variant_index` of a speaker's face: `normalize(base + σ·jitter)`.
pub fn face_embedding_synthetic(
    identity: &SpeakerIdentity,
    variant_index: u64,
    pose_sigma: f64,
    dim: usize,
) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::validation("embedding dim must be positive"));
    }
    if !(pose_sigma >= 0.0 && pose_sigma.is_finite()) {
        return Err(Error::validation(format!(
            "pose_sigma must be >= 0, got {pose_sigma}"
        )));
    }
    let base = face_base(identity, dim)?;
    if pose_sigma == 0.0 {
        return Ok(base);
    }
    let jitter_seed = derive_seed(identity.seed ^ FACE_SEED_SALT, "pose", variant_index);
    let jitter = gaussian(dim, jitter_seed);
    let v: Vec<f64> = base
        .iter()
        .zip(&jitter)
        .map(|(b, j)| b + pose_sigma * j)
        .collect();
    normalize(&v)
}

impl ConditionEmbedding {
    pub fn synthetic_face(
        identity: &SpeakerIdentity,
        variant_index: u64,
        pose_sigma: f64,
        dim: usize,
    ) -> Result<Self> {
        Self::new(
            EmbeddingKind::Face,
            identity.speaker_id.clone(),
            variant_index.to_string(),
            face_embedding_synthetic(identity, variant_index, pose_sigma, dim)?,
        )
    }
}
