use serde::{Deserialize, Serialize};

/// Edit counts of one hypothesis against its reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
}

impl WerCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`; infinite for an empty reference with insertions.
    pub fn wer(&self) -> f64 {
        if self.ref_words == 0 {
            return if self.errors() == 0 {
                0.0
            } else {
                f64::INFINITY
            };
        }
        self.errors() as f64 / self.ref_words as f64
    }

    pub fn add(&mut self, other: &WerCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_words += other.ref_words;
    }
}

/// Levenshtein alignment with unit costs. Among minimum-cost alignments a
/// substitution is preferred to a deletion plus an insertion.
pub fn wer<R: AsRef<str>, H: AsRef<str>>(reference: &[R], hypothesis: &[H]) -> WerCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1]
                + usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut c = WerCounts {
        ref_words: n,
        ..WerCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if d[(i - 1) * w + j - 1] + usize::from(!same) == here {
                if !same {
                    c.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// Whitespace tokenization.
pub fn tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}
