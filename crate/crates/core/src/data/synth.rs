//! Synthetic multi-speaker corpus.
//!
//! Each utterance is a harmonic series on the speaker's f0 (with a little
//! vibrato) shaped by the speaker's resonance envelope and gated by a random
//! sequence of syllables. Every syllable carries a token from a small
//! vocabulary, which nudges the lower resonances, and the token sequence is
//! the utterance's transcript.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::jsonl;
use crate::dsp::{read_wav, write_wav, Waveform};
use crate::embeddings::{derive_seed, SpeakerIdentity};
use crate::error::{Error, Result};
use crate::parallel::parallel_map;

pub const SYLLABLES: [&str; 24] = [
    "ba", "di", "ko", "mu", "ne", "pa", "ri", "so", "tu", "ve", "ga", "hi", "jo", "lu", "me", "no",
    "pe", "ra", "si", "to", "wa", "ye", "zo", "ku",
];
/// Target RMS of every utterance after synthesis.
pub const TARGET_RMS: f64 = 0.1;
const PEAK_LIMIT: f64 = 0.95;
const VIBRATO_HZ: f64 = 5.0;
const VIBRATO_DEPTH: f64 = 0.015;
const BREATH_LEVEL: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub utterance_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl CorpusSpec {
    /// 24 speakers × 12 utterances × 6 s at 8 kHz.
    pub fn desk(seed: u64) -> Self {
        Self {
            n_speakers: 24,
            utterances_per_speaker: 12,
            utterance_seconds: 6.0,
            sample_rate: 8000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::validation("corpus needs at least 2 speakers"));
        }
        if self.utterances_per_speaker == 0 {
            return Err(Error::validation(
                "corpus needs at least 1 utterance per speaker",
            ));
        }
        if !(self.utterance_seconds >= 3.0 && self.utterance_seconds.is_finite()) {
            return Err(Error::validation(format!(
                "utterance_seconds must be at least 3, got {}",
                self.utterance_seconds
            )));
        }
        if self.sample_rate < 4000 {
            return Err(Error::validation("sample_rate must be at least 4000"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub token: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub waveform: Waveform,
    pub words: Vec<Word>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub speakers: Vec<SpeakerIdentity>,
    pub utterances: Vec<Utterance>,
}

/// `speakers.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerFile {
    pub spec: CorpusSpec,
    pub speakers: Vec<SpeakerIdentity>,
}

/// One line of `utterances.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker_id: String,
    pub path: String,
    pub duration_s: f64,
    pub words: Vec<Word>,
}

pub const SPEAKERS_FILE: &str = "speakers.json";
pub const UTTERANCES_FILE: &str = "utterances.jsonl";

struct Syllable {
    start: usize,
    end: usize,
    amp: f64,
    token: usize,
}

fn schedule(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<Syllable> {
    let mut out = Vec::new();
    let mut t = rng.gen_range(0.05..0.2);
    let total = n as f64 / sr;
    loop {
        let dur = rng.gen_range(0.12..0.30);
        if t + dur > total - 0.05 {
            break;
        }
        out.push(Syllable {
            start: (t * sr) as usize,
            end: ((t + dur) * sr) as usize,
            amp: rng.gen_range(0.6..1.0),
            token: rng.gen_range(0..SYLLABLES.len()),
        });
        t += dur
            + if rng.gen_bool(0.15) {
                rng.gen_range(0.2..0.4)
            } else {
                rng.gen_range(0.03..0.15)
            };
    }
    out
}

/// Lower-resonance scale applied for a syllable token, 0.94..1.06.
fn token_shift(token: usize) -> f64 {
    0.94 + 0.12 * ((token * 7) % SYLLABLES.len()) as f64 / (SYLLABLES.len() - 1) as f64
}

fn syllable_gate(i: usize, len: usize, sr: f64) -> f64 {
    let attack = (0.02 * sr) as usize;
    let release = (0.04 * sr) as usize;
    let ramp = |k: usize, n: usize| 0.5 - 0.5 * (PI * k as f64 / n as f64).cos();
    if i < attack {
        ramp(i, attack)
    } else if i + release > len {
        ramp(len - i, release)
    } else {
        1.0
    }
}

/// Synthesize one utterance for `identity`.
pub fn synth_utterance(
    identity: &SpeakerIdentity,
    index: usize,
    seconds: f64,
    sample_rate: u32,
) -> (Waveform, Vec<Word>) {
    let sr = f64::from(sample_rate);
    let n = (seconds * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(identity.seed, "utterance", index as u64));
    let syllables = schedule(&mut rng, n, sr);
    let nyquist = sr / 2.0;
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let mut x = vec![0.0; n];
    let mut words = Vec::with_capacity(syllables.len());
    for syl in &syllables {
        let shift = token_shift(syl.token);
        let mut shifted = identity.clone();
        for f in shifted.formants.iter_mut().take(2) {
            f.freq_hz *= shift;
        }
        let harmonics =
            ((0.95 * nyquist) / (identity.f0_hz * (1.0 + VIBRATO_DEPTH))).floor() as usize;
        // Complex coefficient per harmonic: amplitude with a random start phase.
        let coeffs: Vec<Complex64> = (1..=harmonics)
            .map(|k| {
                let a = shifted.envelope(k as f64 * identity.f0_hz) / k as f64;
                Complex64::from_polar(a, rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        let len = syl.end - syl.start;
        let mut phase = 0.0;
        for i in 0..len {
            let t = (syl.start + i) as f64 / sr;
            let f0 = identity.f0_hz
                * (1.0 + VIBRATO_DEPTH * (2.0 * PI * VIBRATO_HZ * t + vib_phase).sin());
            phase += 2.0 * PI * f0 / sr;
            let z = Complex64::from_polar(1.0, phase);
            let mut acc = Complex64::new(0.0, 0.0);
            for c in coeffs.iter().rev() {
                acc = (acc + c) * z;
            }
            let breath: f64 = StandardNormal.sample(&mut rng);
            x[syl.start + i] = syl.amp
                * syllable_gate(i, len, sr)
                * (acc.im + BREATH_LEVEL * breath * coeffs[0].norm());
        }
        words.push(Word {
            token: SYLLABLES[syl.token].to_string(),
            start_s: syl.start as f64 / sr,
            end_s: syl.end as f64 / sr,
        });
    }
    let mut w = Waveform::new(x, sample_rate);
    let rms = w.rms();
    if rms > 0.0 {
        let mut gain = TARGET_RMS / rms;
        let peak = w.peak() * gain;
        if peak > PEAK_LIMIT {
            gain *= PEAK_LIMIT / peak;
        }
        w.samples.iter_mut().for_each(|s| *s *= gain);
    }
    (w, words)
}

pub fn speaker_id(index: usize) -> String {
    format!("spk{index:03}")
}

/// Generate the whole corpus in memory.
pub fn synth_corpus(spec: &CorpusSpec, threads: usize) -> Result<Corpus> {
    spec.validate()?;
    let speakers: Vec<SpeakerIdentity> = (0..spec.n_speakers)
        .map(|i| {
            SpeakerIdentity::generate(speaker_id(i), derive_seed(spec.seed, "speaker", i as u64))
        })
        .collect();
    let mut seeds: Vec<u64> = speakers.iter().map(|s| s.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() != speakers.len() {
        return Err(Error::validation(
            "speaker seed collision; choose another corpus seed",
        ));
    }
    let k = spec.utterances_per_speaker;
    let utterances = parallel_map(spec.n_speakers * k, threads, |j| {
        let (s, u) = (j / k, j % k);
        let (waveform, words) =
            synth_utterance(&speakers[s], u, spec.utterance_seconds, spec.sample_rate);
        Ok(Utterance {
            id: format!("{}_u{u:03}", speakers[s].speaker_id),
            speaker_id: speakers[s].speaker_id.clone(),
            waveform,
            words,
        })
    })?;
    Ok(Corpus {
        spec: *spec,
        speakers,
        utterances,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

impl Corpus {
    /// Write `speakers.json`, `utterances.jsonl` and `wavs/<id>.wav` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let wavs = dir.join("wavs");
        std::fs::create_dir_all(&wavs).map_err(|e| Error::io(&wavs, e))?;
        write_json(
            &dir.join(SPEAKERS_FILE),
            &SpeakerFile {
                spec: self.spec,
                speakers: self.speakers.clone(),
            },
        )?;
        let mut records = Vec::with_capacity(self.utterances.len());
        for u in &self.utterances {
            let rel = format!("wavs/{}.wav", u.id);
            write_wav(dir.join(&rel), &u.waveform)?;
            records.push(UtteranceRecord {
                id: u.id.clone(),
                speaker_id: u.speaker_id.clone(),
                path: rel,
                duration_s: u.waveform.duration_s(),
                words: u.words.clone(),
            });
        }
        jsonl::write(&dir.join(UTTERANCES_FILE), &records)
    }
}

/// A corpus on disk: identities and utterance records, audio read on demand.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    pub dir: PathBuf,
    pub spec: CorpusSpec,
    pub speakers: Vec<SpeakerIdentity>,
    pub utterances: Vec<UtteranceRecord>,
}

impl CorpusIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let sf: SpeakerFile = read_json(&dir.join(SPEAKERS_FILE))?;
        for s in &sf.speakers {
            s.validate()?;
        }
        let utterances: Vec<UtteranceRecord> = jsonl::read(&dir.join(UTTERANCES_FILE))?;
        for u in &utterances {
            if !sf.speakers.iter().any(|s| s.speaker_id == u.speaker_id) {
                return Err(Error::validation(format!(
                    "utterance {} has unknown speaker {}",
                    u.id, u.speaker_id
                )));
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            spec: sf.spec,
            speakers: sf.speakers,
            utterances,
        })
    }

    pub fn read_audio(&self, u: &UtteranceRecord) -> Result<Waveform> {
        read_wav(self.dir.join(&u.path))
    }
}
