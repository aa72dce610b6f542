//! Looks up the voice and face embeddings that condition a sample.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::data::{Manifest, MixtureSample};
use crate::dsp::read_wav;
use crate::embeddings::{
    face_embedding_synthetic, load_embeddings, voice_embedding_oracle, EmbeddingKind,
    SpeakerIdentity,
};
use crate::error::{Error, Result};
use crate::model::{Condition, ConditioningMode};

/// Default pose jitter of synthetic face embeddings.
pub const DEFAULT_POSE_SIGMA: f64 = 0.4;

type Table = HashMap<(String, String), Vec<f32>>;

/// Source of conditioning vectors.
///
/// Voice vectors come from an embedding file keyed by (speaker, utterance
/// id of the reference) or else from the spectral oracle on the reference
/// audio. Face vectors come from an embedding file keyed by (speaker,
/// variant index) or else from the synthetic generator.
pub struct ConditionProvider {
    pub voice_dim: usize,
    pub face_dim: usize,
    pub pose_sigma: f64,
    identities: HashMap<String, SpeakerIdentity>,
    voice_table: Option<Table>,
    face_table: Option<Table>,
    voice_cache: Mutex<HashMap<PathBuf, Vec<f32>>>,
}

fn load_table(path: &Path, kind: EmbeddingKind, dim: usize) -> Result<Table> {
    let embs = load_embeddings(path)?;
    let mut t = Table::new();
    for e in embs {
        if e.kind != kind {
            return Err(Error::validation(format!(
                "{}: contains {} embeddings, expected {kind}",
                path.display(),
                e.kind
            )));
        }
        if e.dim() != dim {
            return Err(Error::validation(format!(
                "{}: embedding dim {} does not match model dim {dim}",
                path.display(),
                e.dim()
            )));
        }
        t.insert((e.speaker_id, e.source_id), e.values);
    }
    Ok(t)
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

impl ConditionProvider {
    pub fn new(
        identities: Vec<SpeakerIdentity>,
        voice_dim: usize,
        face_dim: usize,
        pose_sigma: f64,
    ) -> Self {
        Self {
            voice_dim,
            face_dim,
            pose_sigma,
            identities: identities
                .into_iter()
                .map(|s| (s.speaker_id.clone(), s))
                .collect(),
            voice_table: None,
            face_table: None,
            voice_cache: Mutex::new(HashMap::new()),
        }
    }

    /// Provider for a manifest, reading `speakers.json` beside it when present.
    pub fn for_manifest(
        manifest: &Manifest,
        voice_dim: usize,
        face_dim: usize,
        pose_sigma: f64,
    ) -> Result<Self> {
        let ids = if manifest.dir.join(crate::data::SPEAKERS_FILE).is_file() {
            manifest.speakers()?
        } else {
            Vec::new()
        };
        Ok(Self::new(ids, voice_dim, face_dim, pose_sigma))
    }

    pub fn with_voice_file(mut self, path: &Path) -> Result<Self> {
        self.voice_table = Some(load_table(path, EmbeddingKind::Voice, self.voice_dim)?);
        Ok(self)
    }

    pub fn with_face_file(mut self, path: &Path) -> Result<Self> {
        self.face_table = Some(load_table(path, EmbeddingKind::Face, self.face_dim)?);
        Ok(self)
    }

    pub fn identity(&self, speaker_id: &str) -> Option<&SpeakerIdentity> {
        self.identities.get(speaker_id)
    }

    /// Voice vector of `speaker_id` from the reference utterance at `path`.
    pub fn voice(&self, speaker_id: &str, path: &Path) -> Result<Vec<f32>> {
        if let Some(t) = &self.voice_table {
            let source = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            return t
                .get(&(speaker_id.to_string(), source.clone()))
                .cloned()
                .ok_or_else(|| {
                    Error::validation(format!("no voice embedding for {speaker_id}/{source}"))
                });
        }
        if let Some(v) = self.voice_cache.lock().unwrap().get(path) {
            return Ok(v.clone());
        }
        let w = read_wav(path)?;
        let v = to_f32(voice_embedding_oracle(&w, self.voice_dim)?);
        self.voice_cache
            .lock()
            .unwrap()
            .insert(path.to_path_buf(), v.clone());
        Ok(v)
    }

    /// Face vector `variant` of `speaker_id`.
    pub fn face(&self, speaker_id: &str, variant: u64) -> Result<Vec<f32>> {
        if let Some(t) = &self.face_table {
            return t
                .get(&(speaker_id.to_string(), variant.to_string()))
                .cloned()
                .ok_or_else(|| {
                    Error::validation(format!("no face embedding for {speaker_id}/{variant}"))
                });
        }
        let id = self
            .identities
            .get(speaker_id)
            .ok_or_else(|| Error::validation(format!("no identity for speaker {speaker_id}; face embeddings need speakers.json or a face embedding file")))?;
        Ok(to_f32(face_embedding_synthetic(
            id,
            variant,
            self.pose_sigma,
            self.face_dim,
        )?))
    }

    /// Conditioning for the target of `sample`; `variant` indexes the
    /// sample's face variant list.
    pub fn for_sample(
        &self,
        manifest: &Manifest,
        sample: &MixtureSample,
        variant: usize,
        mode: ConditioningMode,
    ) -> Result<Condition> {
        let voice = if mode.uses_voice() {
            Some(self.voice(&sample.speaker_id, &manifest.resolve(&sample.reference_wav))?)
        } else {
            None
        };
        let face = if mode.uses_face() {
            let id = *sample.face_variant_ids.get(variant).ok_or_else(|| {
                Error::validation(format!("{}: no face variant {variant}", sample.id))
            })?;
            Some(self.face(&sample.speaker_id, id)?)
        } else {
            None
        };
        Ok(Condition { voice, face })
    }

    /// Fail early if any sample lacks a required embedding source.
    pub fn check_manifest(&self, manifest: &Manifest, mode: ConditioningMode) -> Result<()> {
        for s in &manifest.samples {
            if mode.uses_face() {
                if s.face_variant_ids.is_empty() {
                    return Err(Error::validation(format!(
                        "{}: face mode needs face variants",
                        s.id
                    )));
                }
                if self.face_table.is_none() && !self.identities.contains_key(&s.speaker_id) {
                    return Err(Error::validation(format!(
                        "{}: no face source for speaker {}",
                        s.id, s.speaker_id
                    )));
                }
            }
            if mode.uses_voice()
                && self.voice_table.is_none()
                && !manifest.resolve(&s.reference_wav).is_file()
            {
                return Err(Error::validation(format!(
                    "{}: missing voice reference",
                    s.id
                )));
            }
        }
        Ok(())
    }
}
