//! Two-speaker mixtures with speaker-disjoint train/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{write_json, CorpusIndex, SpeakerFile, SPEAKERS_FILE};
use super::{jsonl, MixtureSample, FACE_VARIANTS_PER_SAMPLE, FACE_VARIANT_POOL};
use crate::dsp::{quantize, write_pcm16, Waveform};
use crate::embeddings::derive_seed;
use crate::error::{Error, Result};
use crate::parallel::parallel_map;

/// Mixtures whose peak would reach this are scaled down to `CLIP_GUARD_PEAK`.
const CLIP_THRESHOLD: f64 = 32767.0 / 32768.0;
pub const CLIP_GUARD_PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub clip_seconds: f64,
    pub seed: u64,
    /// Target-to-interferer power ratio; `None` adds at unity gain.
    pub snr_db: Option<f64>,
    /// Share of eligible speakers held out for the test split.
    pub test_speaker_fraction: f64,
    pub threads: usize,
}

impl MixConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            n_train: 2000,
            n_test: 200,
            clip_seconds: 3.0,
            seed,
            snr_db: None,
            test_speaker_fraction: 1.0 / 6.0,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSummary {
    pub train_speakers: Vec<String>,
    pub test_speakers: Vec<String>,
    /// Speakers dropped for having fewer than two utterances.
    pub excluded_speakers: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    /// Samples that needed the clip-guard gain.
    pub clip_guarded: usize,
    pub config: MixConfig,
}

pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const TEST_MANIFEST: &str = "test.jsonl";
pub const SUMMARY_FILE: &str = "split.json";

/// Shuffle eligible speakers and hold out a fraction (at least 2) for test.
pub fn split_speakers(
    eligible: &[String],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if eligible.len() < 4 {
        return Err(Error::validation(format!(
            "need at least 4 speakers with 2+ utterances for disjoint splits, have {}",
            eligible.len()
        )));
    }
    let mut ids = eligible.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed, "split", 0,
    )));
    let n_test = ((eligible.len() as f64 * fraction).round() as usize).clamp(2, eligible.len() - 2);
    let mut test = ids.split_off(ids.len() - n_test);
    ids.sort();
    test.sort();
    Ok((ids, test))
}

struct Plan<'a> {
    corpus: &'a CorpusIndex,
    audio: &'a [Waveform],
    by_speaker: &'a BTreeMap<String, Vec<usize>>,
    clip_len: usize,
    cfg: &'a MixConfig,
}

fn crop(w: &Waveform, offset: usize, len: usize) -> Vec<f64> {
    w.segment(offset, len).samples
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

impl Plan<'_> {
    fn make(
        &self,
        split: &str,
        speakers: &[String],
        index: usize,
        out: &Path,
    ) -> Result<(MixtureSample, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, split, index as u64));
        let target_spk = &speakers[rng.gen_range(0..speakers.len())];
        let mut interferer_spk = target_spk;
        while interferer_spk == target_spk {
            interferer_spk = &speakers[rng.gen_range(0..speakers.len())];
        }
        let utts = &self.by_speaker[target_spk];
        let picks = rand::seq::index::sample(&mut rng, utts.len(), 2);
        let (target_u, reference_u) = (utts[picks.index(0)], utts[picks.index(1)]);
        let others = &self.by_speaker[interferer_spk];
        let interferer_u = others[rng.gen_range(0..others.len())];

        let sr = self.corpus.spec.sample_rate;
        let offset_of = |rng: &mut ChaCha8Rng, w: &Waveform| {
            let slack = w.len().saturating_sub(self.clip_len);
            if slack == 0 {
                0
            } else {
                rng.gen_range(0..=slack)
            }
        };
        let t_off = offset_of(&mut rng, &self.audio[target_u]);
        let i_off = offset_of(&mut rng, &self.audio[interferer_u]);
        let mut target = crop(&self.audio[target_u], t_off, self.clip_len);
        let mut interferer = crop(&self.audio[interferer_u], i_off, self.clip_len);

        if let Some(snr) = self.cfg.snr_db {
            let (pt, pi) = (power(&target), power(&interferer));
            if pt > 0.0 && pi > 0.0 {
                let g = (pt / pi / 10f64.powf(snr / 10.0)).sqrt();
                interferer.iter_mut().for_each(|v| *v *= g);
            }
        }
        let peak = target
            .iter()
            .zip(&interferer)
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max);
        let guarded = peak >= CLIP_THRESHOLD;
        if guarded {
            let g = CLIP_GUARD_PEAK / peak;
            target.iter_mut().for_each(|v| *v *= g);
            interferer.iter_mut().for_each(|v| *v *= g);
        }
        let tq: Vec<i16> = target.iter().map(|&v| quantize(v)).collect();
        let iq: Vec<i16> = interferer.iter().map(|&v| quantize(v)).collect();
        let mq = tq
            .iter()
            .zip(&iq)
            .map(|(&a, &b)| i16::try_from(i32::from(a) + i32::from(b)))
            .collect::<std::result::Result<Vec<i16>, _>>()
            .map_err(|_| Error::numerical("mixture exceeds the PCM16 range after clip guard"))?;

        let id = format!("{split}_{index:05}");
        let rel = |kind: &str| format!("{split}/{id}_{kind}.wav");
        write_pcm16(out.join(rel("target")), &tq, sr)?;
        write_pcm16(out.join(rel("interferer")), &iq, sr)?;
        write_pcm16(out.join(rel("mixture")), &mq, sr)?;

        let t0 = t_off as f64 / f64::from(sr);
        let t1 = t0 + self.clip_len as f64 / f64::from(sr);
        let words: Vec<&str> = self.corpus.utterances[target_u]
            .words
            .iter()
            .filter(|w| {
                let mid = 0.5 * (w.start_s + w.end_s);
                mid >= t0 && mid < t1
            })
            .map(|w| w.token.as_str())
            .collect();
        let variants = rand::seq::index::sample(
            &mut rng,
            FACE_VARIANT_POOL as usize,
            FACE_VARIANTS_PER_SAMPLE,
        );
        let sample = MixtureSample {
            id: id.clone(),
            target_wav: rel("target"),
            interferer_wav: rel("interferer"),
            mixture_wav: rel("mixture"),
            reference_wav: format!("refs/{}.wav", self.corpus.utterances[reference_u].id),
            speaker_id: target_spk.clone(),
            interferer_id: interferer_spk.clone(),
            face_variant_ids: variants.into_iter().map(|v| v as u64).collect(),
            transcript: Some(words.join(" ")),
            crop_offset_s: t0,
        };
        Ok((sample, guarded))
    }
}

/// Build train and test mixtures from a corpus on disk into `out`.
///
/// Writes `train/`, `test/` and `refs/` WAVs, `train.jsonl`, `test.jsonl`,
/// a copy of `speakers.json` and a `split.json` summary.
pub fn build_mixtures(corpus: &CorpusIndex, out: &Path, cfg: &MixConfig) -> Result<MixSummary> {
    if !(cfg.clip_seconds > 0.0) {
        return Err(Error::validation("clip_seconds must be positive"));
    }
    let sr = corpus.spec.sample_rate;
    let clip_len = (cfg.clip_seconds * f64::from(sr)).round() as usize;

    let mut by_speaker: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for s in &corpus.speakers {
        by_speaker.insert(s.speaker_id.clone(), Vec::new());
    }
    for (i, u) in corpus.utterances.iter().enumerate() {
        by_speaker
            .get_mut(&u.speaker_id)
            .expect("validated on load")
            .push(i);
    }
    let mut excluded = Vec::new();
    by_speaker.retain(|id, utts| {
        let keep = utts.len() >= 2;
        if !keep {
            log::warn!(
                "excluding speaker {id}: needs at least 2 utterances, has {}",
                utts.len()
            );
            excluded.push(id.clone());
        }
        keep
    });
    let eligible: Vec<String> = by_speaker.keys().cloned().collect();
    let (train_spk, test_spk) = split_speakers(&eligible, cfg.test_speaker_fraction, cfg.seed)?;

    let audio = parallel_map(corpus.utterances.len(), cfg.threads, |i| {
        let w = corpus.read_audio(&corpus.utterances[i])?;
        if w.sample_rate != sr {
            return Err(Error::validation(format!(
                "{}: sample rate {} Hz, corpus is {sr} Hz",
                corpus.utterances[i].id, w.sample_rate
            )));
        }
        Ok(w)
    })?;

    for dir in ["train", "test", "refs"] {
        let d = out.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let plan = Plan {
        corpus,
        audio: &audio,
        by_speaker: &by_speaker,
        clip_len,
        cfg,
    };
    let mut guarded = 0;
    let mut refs = BTreeSet::new();
    for (split, speakers, n, manifest) in [
        ("train", &train_spk, cfg.n_train, TRAIN_MANIFEST),
        ("test", &test_spk, cfg.n_test, TEST_MANIFEST),
    ] {
        let made = parallel_map(n, cfg.threads, |i| plan.make(split, speakers, i, out))?;
        let samples: Vec<MixtureSample> = made
            .into_iter()
            .map(|(s, g)| {
                guarded += usize::from(g);
                s
            })
            .collect();
        refs.extend(samples.iter().map(|s| s.reference_wav.clone()));
        jsonl::write(&out.join(manifest), &samples)?;
    }
    for r in &refs {
        let utt = r.trim_start_matches("refs/").trim_end_matches(".wav");
        let u = corpus
            .utterances
            .iter()
            .find(|u| u.id == utt)
            .expect("reference comes from the corpus");
        let (src, dst) = (corpus.dir.join(&u.path), out.join(r));
        std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
    }
    write_json(
        &out.join(SPEAKERS_FILE),
        &SpeakerFile {
            spec: corpus.spec,
            speakers: corpus.speakers.clone(),
        },
    )?;
    let summary = MixSummary {
        train_speakers: train_spk,
        test_speakers: test_spk,
        excluded_speakers: excluded,
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        clip_guarded: guarded,
        config: *cfg,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
