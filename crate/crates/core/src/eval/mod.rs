//! Separation quality (SDR, SI-SDR), word error rate and the
//! conditioning-swap test.

mod sdr;
mod wer;

pub use sdr::{
    ratio_db, sdr_bsseval, si_sdr, SdrProjector, DEFAULT_FILTER_TAPS, GRAM_REGULARIZATION,
    SDR_CLAMP_DB,
};
pub use wer::{tokens, wer, WerCounts};

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::ConditionProvider;
use crate::data::{jsonl, Manifest};
use crate::dsp::{ComplexSpectrogram, Stft, Waveform};
use crate::error::{Error, Result};
use crate::model::{apply_mask, normalized_input, Checkpoint, Condition, ConditioningMode};
use crate::parallel::parallel_map;

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

/// Mean and population standard deviation. The deviation is exactly zero
/// when all values are equal.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let x0 = values[0];
    let d_mean = values.iter().map(|v| v - x0).sum::<f64>() / n;
    let d_sq = values.iter().map(|v| (v - x0) * (v - x0)).sum::<f64>() / n;
    (mean, (d_sq - d_mean * d_mean).max(0.0).sqrt())
}

/// Standard deviation of the mean over `resamples` bootstrap draws.
pub fn bootstrap_std(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.is_empty() || resamples == 0 {
        return f64::NAN;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..resamples)
        .map(|_| {
            (0..values.len())
                .map(|_| values[rng.gen_range(0..values.len())])
                .sum::<f64>()
                / values.len() as f64
        })
        .collect();
    mean_std(&means).1
}

/// Mask-and-resynthesize with a checkpoint's network.
pub struct Separator<'a> {
    checkpoint: &'a Checkpoint,
    stft: Stft,
}

/// A mixture's spectrogram and network input, reusable across conditions.
pub struct PreparedMixture {
    len: usize,
    spec: ComplexSpectrogram,
    input: Vec<f32>,
}

impl<'a> Separator<'a> {
    pub fn new(checkpoint: &'a Checkpoint) -> Result<Self> {
        Ok(Self {
            checkpoint,
            stft: Stft::new(checkpoint.meta.stft)?,
        })
    }

    pub fn prepare(&self, mixture: &Waveform) -> Result<PreparedMixture> {
        if mixture.sample_rate != self.checkpoint.meta.stft.sample_rate {
            return Err(Error::validation(format!(
                "mixture is {} Hz, checkpoint expects {} Hz",
                mixture.sample_rate, self.checkpoint.meta.stft.sample_rate
            )));
        }
        let spec = self.stft.forward_padded(mixture)?;
        let input = normalized_input(&spec, &self.checkpoint.stats)?;
        Ok(PreparedMixture {
            len: mixture.len(),
            spec,
            input,
        })
    }

    /// Separated waveform with the mixture's length.
    pub fn separate(&self, mix: &PreparedMixture, cond: &Condition) -> Result<Waveform> {
        let mask = self
            .checkpoint
            .model
            .predict_mask(&mix.input, mix.spec.frames, cond)?;
        self.stft
            .inverse_padded(&apply_mask(&mix.spec, &mask)?, mix.len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrItem {
    pub sample_id: String,
    /// Face variant used for conditioning; absent for voice-only runs.
    pub variant_id: Option<u64>,
    pub sdr_db: f64,
    pub si_sdr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadKind {
    /// Standard deviation over per-variant corpus means.
    FaceVariants,
    /// Bootstrap standard deviation of the corpus mean over items.
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineItem {
    pub sample_id: String,
    pub sdr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrReport {
    pub mode: ConditioningMode,
    pub per_item: Vec<SdrItem>,
    pub mean_db: f64,
    pub std_db: f64,
    pub std_kind: SpreadKind,
    /// Corpus mean per face variant index (one entry for voice-only runs).
    pub variant_means_db: Vec<f64>,
    pub mean_si_sdr_db: f64,
    /// SDR of the unprocessed mixture against the target.
    pub baseline_per_item: Vec<BaselineItem>,
    pub baseline_mean_db: f64,
    pub improvement_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerItem {
    pub sample_id: String,
    #[serde(flatten)]
    pub counts: WerCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub per_item: Vec<WerItem>,
    pub totals: WerCounts,
    /// Errors over reference words, pooled over the corpus.
    pub wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sdr: SdrReport,
    pub wer: Option<WerReport>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per separated item.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let baseline: HashMap<&str, f64> = self
            .sdr
            .baseline_per_item
            .iter()
            .map(|b| (b.sample_id.as_str(), b.sdr_db))
            .collect();
        let mut out = String::from("sample_id,variant_id,sdr_db,si_sdr_db,baseline_sdr_db\n");
        for it in &self.sdr.per_item {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                it.sample_id,
                it.variant_id.map_or(String::new(), |v| v.to_string()),
                it.sdr_db,
                it.si_sdr_db,
                baseline
                    .get(it.sample_id.as_str())
                    .copied()
                    .unwrap_or(f64::NAN)
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One recognizer output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub sample_id: String,
    pub words: Words,
}

/// A token list or a whitespace-separated string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Words {
    List(Vec<String>),
    Text(String),
}

impl Words {
    pub fn tokens(&self) -> Vec<String> {
        match self {
            Self::List(v) => v.clone(),
            Self::Text(s) => tokens(s).into_iter().map(str::to_string).collect(),
        }
    }
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<Hypothesis>> {
    jsonl::read(path)
}

/// Pooled WER of hypotheses against the manifest transcripts.
pub fn wer_report(manifest: &Manifest, hypotheses: &[Hypothesis]) -> Result<WerReport> {
    let by_id: HashMap<&str, &crate::data::MixtureSample> = manifest
        .samples
        .iter()
        .map(|s| (s.id.as_str(), s))
        .collect();
    let mut per_item = Vec::with_capacity(hypotheses.len());
    let mut totals = WerCounts::default();
    for h in hypotheses {
        let s = by_id.get(h.sample_id.as_str()).ok_or_else(|| {
            Error::validation(format!("hypothesis for unknown sample {}", h.sample_id))
        })?;
        let reference = s
            .transcript
            .as_deref()
            .ok_or_else(|| Error::validation(format!("sample {} has no transcript", s.id)))?;
        let counts = wer(&tokens(reference), &h.words.tokens());
        totals.add(&counts);
        per_item.push(WerItem {
            sample_id: h.sample_id.clone(),
            counts,
        });
    }
    if totals.ref_words == 0 {
        return Err(Error::validation("WER needs at least one reference word"));
    }
    Ok(WerReport {
        per_item,
        totals,
        wer: totals.wer(),
    })
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub threads: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    pub filter_taps: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            seed: 0,
            filter_taps: DEFAULT_FILTER_TAPS,
        }
    }
}

fn check_mode(checkpoint: &Checkpoint, mode: ConditioningMode) -> Result<()> {
    let trained = checkpoint.model.config.conditioning_mode;
    if trained != mode {
        return Err(Error::validation(format!(
            "checkpoint was trained with {trained} conditioning, evaluation requested {mode}"
        )));
    }
    Ok(())
}

struct ItemResult {
    baseline: f64,
    /// `(variant id, sdr, si-sdr)` per variant index.
    rows: Vec<(Option<u64>, f64, f64)>,
}

/// SDR of separated test audio against the targets.
///
/// Face-conditioned modes separate each mixture once per face variant and
/// report the spread of the per-variant corpus means; voice-only runs
/// report a bootstrap spread over items.
pub fn evaluate_separation(
    manifest: &Manifest,
    checkpoint: &Checkpoint,
    mode: ConditioningMode,
    provider: &ConditionProvider,
    hypotheses: Option<&[Hypothesis]>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_mode(checkpoint, mode)?;
    if manifest.samples.is_empty() {
        return Err(Error::validation("evaluation manifest is empty"));
    }
    provider.check_manifest(manifest, mode)?;
    let sep = Separator::new(checkpoint)?;
    let n_variants = if mode.uses_face() {
        manifest
            .samples
            .iter()
            .map(|s| s.face_variant_ids.len())
            .min()
            .unwrap_or(0)
    } else {
        1
    };
    let results = parallel_map(manifest.samples.len(), opts.threads, |i| {
        let s = &manifest.samples[i];
        let audio = manifest.load_audio(s)?;
        let proj = SdrProjector::new(&audio.target, opts.filter_taps)?;
        let baseline = proj.sdr(&audio.mixture)?;
        let mix = sep.prepare(&audio.mixture)?;
        let mut rows = Vec::with_capacity(n_variants);
        for v in 0..n_variants {
            let cond = provider.for_sample(manifest, s, v, mode)?;
            let est = sep.separate(&mix, &cond)?;
            let variant_id = mode.uses_face().then(|| s.face_variant_ids[v]);
            rows.push((variant_id, proj.sdr(&est)?, si_sdr(&est, &audio.target)?));
        }
        Ok(ItemResult { baseline, rows })
    })?;

    let mut per_item = Vec::new();
    let mut baseline_per_item = Vec::new();
    for (s, r) in manifest.samples.iter().zip(&results) {
        baseline_per_item.push(BaselineItem {
            sample_id: s.id.clone(),
            sdr_db: r.baseline,
        });
        for &(variant_id, sdr_db, si_sdr_db) in &r.rows {
            per_item.push(SdrItem {
                sample_id: s.id.clone(),
                variant_id,
                sdr_db,
                si_sdr_db,
            });
        }
    }
    let n = results.len() as f64;
    let variant_means_db: Vec<f64> = (0..n_variants)
        .map(|v| results.iter().map(|r| r.rows[v].1).sum::<f64>() / n)
        .collect();
    let (mean_db, std_db, std_kind) = if mode.uses_face() {
        let (m, s) = mean_std(&variant_means_db);
        (m, s, SpreadKind::FaceVariants)
    } else {
        let items: Vec<f64> = results.iter().map(|r| r.rows[0].1).collect();
        (
            mean_std(&items).0,
            bootstrap_std(&items, opts.bootstrap_resamples, opts.seed),
            SpreadKind::Bootstrap,
        )
    };
    let mean_si_sdr_db = per_item.iter().map(|r| r.si_sdr_db).sum::<f64>() / per_item.len() as f64;
    let baseline_mean_db = results.iter().map(|r| r.baseline).sum::<f64>() / n;
    let sdr = SdrReport {
        mode,
        per_item,
        mean_db,
        std_db,
        std_kind,
        variant_means_db,
        mean_si_sdr_db,
        baseline_per_item,
        baseline_mean_db,
        improvement_db: mean_db - baseline_mean_db,
    };
    let wer = hypotheses.map(|h| wer_report(manifest, h)).transpose()?;
    Ok(EvalReport { sdr, wer })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapItem {
    pub sample_id: String,
    /// Conditioned on the target, the estimate is closer to the target.
    pub target_ok: bool,
    /// Conditioned on the interferer, the estimate is closer to the interferer.
    pub interferer_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub per_item: Vec<SwapItem>,
    pub trials: usize,
    pub successes: usize,
    pub fraction: f64,
    /// Mixtures whose interferer is never a target, so it has no reference.
    pub skipped: Vec<String>,
}

/// Separate every mixture twice, conditioned on each of its speakers, and
/// count how often the estimate is closer to the requested speaker.
///
/// The interferer's conditioning comes from the first other sample in the
/// manifest where that speaker is the target.
pub fn swap_test(
    manifest: &Manifest,
    checkpoint: &Checkpoint,
    provider: &ConditionProvider,
    opts: &EvalOptions,
) -> Result<SwapReport> {
    let mode = checkpoint.model.config.conditioning_mode;
    provider.check_manifest(manifest, mode)?;
    let sep = Separator::new(checkpoint)?;
    let donors: Vec<Option<usize>> = manifest
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            manifest
                .samples
                .iter()
                .enumerate()
                .position(|(j, d)| j != i && d.speaker_id == s.interferer_id)
        })
        .collect();
    let results = parallel_map(manifest.samples.len(), opts.threads, |i| {
        let s = &manifest.samples[i];
        let Some(d) = donors[i] else {
            return Ok(None);
        };
        let audio = manifest.load_audio(s)?;
        let pa = SdrProjector::new(&audio.target, opts.filter_taps)?;
        let pb = SdrProjector::new(&audio.interferer, opts.filter_taps)?;
        let mix = sep.prepare(&audio.mixture)?;
        let cond_a = provider.for_sample(manifest, s, 0, mode)?;
        let cond_b = provider.for_sample(manifest, &manifest.samples[d], 0, mode)?;
        let est_a = sep.separate(&mix, &cond_a)?;
        let est_b = sep.separate(&mix, &cond_b)?;
        Ok(Some(SwapItem {
            sample_id: s.id.clone(),
            target_ok: pa.sdr(&est_a)? > pb.sdr(&est_a)?,
            interferer_ok: pb.sdr(&est_b)? > pa.sdr(&est_b)?,
        }))
    })?;
    let mut per_item = Vec::new();
    let mut skipped = Vec::new();
    for (s, r) in manifest.samples.iter().zip(results) {
        match r {
            Some(item) => per_item.push(item),
            None => skipped.push(s.id.clone()),
        }
    }
    let trials = 2 * per_item.len();
    if trials == 0 {
        return Err(Error::validation(
            "swap test needs mixtures whose interferer is also a target elsewhere",
        ));
    }
    let successes = per_item
        .iter()
        .map(|it| usize::from(it.target_ok) + usize::from(it.interferer_ok))
        .sum();
    Ok(SwapReport {
        per_item,
        trials,
        successes,
        fraction: successes as f64 / trials as f64,
        skipped,
    })
}

#[cfg(test)]
mod tests;
