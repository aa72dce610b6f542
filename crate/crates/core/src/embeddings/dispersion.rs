use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{cosine, ConditionEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    /// Mean pairwise cosine within a speaker, averaged over speakers.
    pub within_mean_cos: f64,
    /// Mean cosine over all pairs from different speakers.
    pub between_mean_cos: f64,
    /// Per speaker: `1 − mean within-speaker cosine`.
    pub per_speaker_spread: BTreeMap<String, f64>,
}

/// Within- and between-speaker cosine statistics.
///
/// Speakers with a single embedding count as within-cosine 1. With only one
/// speaker the between value is reported as 1.
pub fn dispersion_stats(embs: &[ConditionEmbedding]) -> Dispersion {
    let mut by_speaker: BTreeMap<&str, Vec<&ConditionEmbedding>> = BTreeMap::new();
    for e in embs {
        by_speaker.entry(&e.speaker_id).or_default().push(e);
    }
    let mut per_speaker_spread = BTreeMap::new();
    let mut within_sum = 0.0;
    for (id, group) in &by_speaker {
        let (mut s, mut n) = (0.0, 0usize);
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                s += cosine(&group[i].values, &group[j].values);
                n += 1;
            }
        }
        let mean = if n == 0 { 1.0 } else { s / n as f64 };
        within_sum += mean;
        per_speaker_spread.insert(id.to_string(), 1.0 - mean);
    }
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            if embs[i].speaker_id != embs[j].speaker_id {
                s += cosine(&embs[i].values, &embs[j].values);
                n += 1;
            }
        }
    }
    Dispersion {
        within_mean_cos: if by_speaker.is_empty() {
            1.0
        } else {
            within_sum / by_speaker.len() as f64
        },
        between_mean_cos: if n == 0 { 1.0 } else { s / n as f64 },
        per_speaker_spread,
    }
}
