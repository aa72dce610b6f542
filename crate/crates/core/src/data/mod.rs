//! Synthetic corpora, two-speaker mixtures and manifests.

pub mod jsonl;
mod mix;
mod synth;

pub use mix::{
    build_mixtures, split_speakers, MixConfig, MixSummary, CLIP_GUARD_PEAK, SUMMARY_FILE,
    TEST_MANIFEST, TRAIN_MANIFEST,
};
pub use synth::{
    read_json, speaker_id, synth_corpus, synth_utterance, write_json, Corpus, CorpusIndex,
    CorpusSpec, SpeakerFile, Utterance, UtteranceRecord, Word, SPEAKERS_FILE, SYLLABLES,
    TARGET_RMS, UTTERANCES_FILE,
};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{read_wav, Waveform};
use crate::embeddings::SpeakerIdentity;
use crate::error::{Error, Result};

pub const FACE_VARIANTS_PER_SAMPLE: usize = 10;
/// Face variant ids are drawn from `0..FACE_VARIANT_POOL` per speaker.
pub const FACE_VARIANT_POOL: u64 = 100;

/// One training or test mixture. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSample {
    pub id: String,
    pub target_wav: String,
    pub interferer_wav: String,
    pub mixture_wav: String,
    pub reference_wav: String,
    pub speaker_id: String,
    pub interferer_id: String,
    pub face_variant_ids: Vec<u64>,
    pub transcript: Option<String>,
    pub crop_offset_s: f64,
}

/// The three aligned signals of a sample.
#[derive(Debug, Clone)]
pub struct SampleAudio {
    pub mixture: Waveform,
    pub target: Waveform,
    pub interferer: Waveform,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub dir: PathBuf,
    pub samples: Vec<MixtureSample>,
}

impl Manifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn load_audio(&self, s: &MixtureSample) -> Result<SampleAudio> {
        let mixture = read_wav(self.resolve(&s.mixture_wav))?;
        let target = read_wav(self.resolve(&s.target_wav))?;
        let interferer = read_wav(self.resolve(&s.interferer_wav))?;
        for (name, w) in [("target", &target), ("interferer", &interferer)] {
            if w.len() != mixture.len() || w.sample_rate != mixture.sample_rate {
                return Err(Error::validation(format!(
                    "{}: {name} does not match the mixture's length and rate",
                    s.id
                )));
            }
        }
        Ok(SampleAudio {
            mixture,
            target,
            interferer,
        })
    }

    pub fn load_reference(&self, s: &MixtureSample) -> Result<Waveform> {
        read_wav(self.resolve(&s.reference_wav))
    }

    /// Speaker identities stored next to the manifest, if present.
    pub fn speakers(&self) -> Result<Vec<SpeakerIdentity>> {
        let sf: SpeakerFile = read_json(&self.dir.join(SPEAKERS_FILE))?;
        Ok(sf.speakers)
    }

    pub fn sample_rate(&self) -> Result<u32> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::validation("manifest is empty"))?;
        Ok(read_wav(self.resolve(&first.mixture_wav))?.sample_rate)
    }
}

fn validate_sample(dir: &Path, s: &MixtureSample) -> Result<()> {
    if s.speaker_id == s.interferer_id {
        return Err(Error::validation(format!(
            "{}: target and interferer are the same speaker",
            s.id
        )));
    }
    if s.face_variant_ids.len() != FACE_VARIANTS_PER_SAMPLE {
        return Err(Error::validation(format!(
            "{}: expected {FACE_VARIANTS_PER_SAMPLE} face variants, found {}",
            s.id,
            s.face_variant_ids.len()
        )));
    }
    if !(s.crop_offset_s >= 0.0 && s.crop_offset_s.is_finite()) {
        return Err(Error::validation(format!("{}: bad crop offset", s.id)));
    }
    for p in [
        &s.target_wav,
        &s.interferer_wav,
        &s.mixture_wav,
        &s.reference_wav,
    ] {
        if !dir.join(p).is_file() {
            return Err(Error::validation(format!("{}: missing file {p}", s.id)));
        }
    }
    Ok(())
}

/// Parse a JSON-lines manifest and check every sample's invariants.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let samples: Vec<MixtureSample> = jsonl::read(path)?;
    let dir = path
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    for s in &samples {
        validate_sample(&dir, s)?;
    }
    Ok(Manifest {
        path: path.to_path_buf(),
        dir,
        samples,
    })
}

/// Sample indices grouped into batches, shuffled deterministically per seed.
/// The last batch may be smaller.
pub fn iterate_batches(
    n_samples: usize,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::validation("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests;
