use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::MixtureSample;

fn noise(n: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000)
}

fn scaled(w: &Waveform, k: f64) -> Waveform {
    Waveform::new(w.samples.iter().map(|x| k * x).collect(), w.sample_rate)
}

/// Remove from `v` its components along the delayed copies of `r`
/// (restricted to the first `v.len()` samples), by modified Gram-Schmidt.
fn orthogonalize(v: &[f64], r: &[f64], taps: usize) -> Vec<f64> {
    let n = v.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(taps);
    let mut out = v.to_vec();
    for k in 0..taps {
        let mut col: Vec<f64> = (0..n)
            .map(|t| if t >= k { r[t - k] } else { 0.0 })
            .collect();
        for b in &basis {
            let d: f64 = col.iter().zip(b).map(|(x, y)| x * y).sum();
            col.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        col.iter_mut().for_each(|x| *x /= norm);
        basis.push(col);
    }
    for _ in 0..2 {
        for b in &basis {
            let d: f64 = out.iter().zip(b).map(|(x, y)| x * y).sum();
            out.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
    }
    out
}

#[test]
fn identical_and_scaled_estimates_hit_the_clamp() {
    let r = noise(2048, 1);
    assert_eq!(sdr_bsseval(&r, &r, 64).unwrap(), SDR_CLAMP_DB);
    assert_eq!(sdr_bsseval(&scaled(&r, 0.5), &r, 64).unwrap(), SDR_CLAMP_DB);
    assert_eq!(si_sdr(&r, &r).unwrap(), SDR_CLAMP_DB);
}

#[test]
fn orthogonal_residual_of_equal_energy_is_zero_db() {
    let taps = 32;
    let r = noise(1024, 2);
    let n = orthogonalize(&noise(1024, 3).samples, &r.samples, taps);
    let scale = (r.samples.iter().map(|x| x * x).sum::<f64>()
        / n.iter().map(|x| x * x).sum::<f64>())
    .sqrt();
    let est = Waveform::new(
        r.samples
            .iter()
            .zip(&n)
            .map(|(a, b)| a + scale * b)
            .collect(),
        8000,
    );
    let sdr = sdr_bsseval(&est, &r, taps).unwrap();
    assert!(sdr.abs() < 1e-6, "{sdr}");
    let si = si_sdr(&est, &r).unwrap();
    assert!(si.abs() < 1e-6, "{si}");
}

#[test]
fn delayed_copy_is_fully_explained() {
    let mut r = noise(2048, 4);
    r.samples[2040..].iter_mut().for_each(|v| *v = 0.0);
    let mut d = vec![0.0; 2048];
    d[5..].copy_from_slice(&r.samples[..2043]);
    let est = Waveform::new(d, 8000);
    // A pure delay inside the filter span is absorbed; SI-SDR is not.
    assert!(sdr_bsseval(&est, &r, 16).unwrap() > 60.0);
    assert!(si_sdr(&est, &r).unwrap() < 0.0);
}

#[test]
fn power_of_two_gains_leave_sdr_unchanged() {
    let r = noise(2048, 5);
    let est = Waveform::new(
        r.samples
            .iter()
            .zip(&noise(2048, 6).samples)
            .map(|(a, b)| a + 0.7 * b)
            .collect(),
        8000,
    );
    let base = sdr_bsseval(&est, &r, 64).unwrap();
    for k in [0.25, 2.0, 8.0] {
        assert_eq!(sdr_bsseval(&scaled(&est, k), &r, 64).unwrap(), base);
    }
    for k in [0.3, 1.7, 13.0] {
        assert!((sdr_bsseval(&scaled(&est, k), &r, 64).unwrap() - base).abs() < 1e-9);
    }
}

#[test]
fn sdr_input_errors() {
    let r = noise(2048, 7);
    assert!(sdr_bsseval(&noise(2047, 8), &r, 64).is_err());
    let silent = Waveform::new(vec![0.0; 2048], 8000);
    assert_eq!(sdr_bsseval(&r, &silent, 64).unwrap_err().exit_code(), 3);
    assert!(si_sdr(&r, &silent).is_err());
    assert!(sdr_bsseval(&r, &r, 1024).is_err(), "shorter than 4x taps");
    let other_rate = Waveform::new(r.samples.clone(), 16000);
    assert!(sdr_bsseval(&other_rate, &r, 64).is_err());
}

#[test]
fn ratio_db_clamps_and_handles_zeros() {
    assert_eq!(ratio_db(1.0, 0.0), SDR_CLAMP_DB);
    assert_eq!(ratio_db(0.0, 1.0), -SDR_CLAMP_DB);
    assert_eq!(ratio_db(0.0, 0.0), -SDR_CLAMP_DB);
    assert!((ratio_db(10.0, 1.0) - 10.0).abs() < 1e-12);
    assert_eq!(ratio_db(1e-30, 1.0), -SDR_CLAMP_DB);
}

#[test]
fn wer_worked_examples() {
    let c = wer(&tokens("a b c"), &tokens("a b c"));
    assert_eq!((c.errors(), c.wer()), (0, 0.0));
    let c = wer(&tokens("a b c"), &tokens("a x c"));
    assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 0));
    assert!((c.wer() - 1.0 / 3.0).abs() < 1e-15);
    let c = wer(&tokens("a"), &tokens("a b"));
    assert_eq!((c.substitutions, c.deletions, c.insertions), (0, 0, 1));
    assert_eq!(c.wer(), 1.0);
    let c = wer(&tokens("a b"), &tokens("x y z w"));
    assert_eq!((c.substitutions, c.deletions, c.insertions), (2, 0, 2));
    assert_eq!(c.wer(), 2.0);
    let c = wer(&tokens("a b c"), &[] as &[&str]);
    assert_eq!((c.deletions, c.wer()), (3, 1.0));
}

#[test]
fn wer_prefers_substitution_on_ties() {
    // "a b" → "a c": one substitution, or one deletion and one insertion at cost 2.
    let c = wer(&tokens("a b"), &tokens("a c"));
    assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 0));
}

#[test]
fn mean_std_is_exactly_zero_for_constant_values() {
    let (m, s) = mean_std(&[3.1; 10]);
    assert!((m - 3.1).abs() < 1e-12);
    assert_eq!(s, 0.0);
    let (m, s) = mean_std(&[1.0, 3.0]);
    assert_eq!((m, s), (2.0, 1.0));
}

#[test]
fn bootstrap_is_seeded_and_shrinks_with_n() {
    let small: Vec<f64> = (0..20).map(|i| (i % 7) as f64).collect();
    let large: Vec<f64> = (0..2000).map(|i| (i % 7) as f64).collect();
    let a = bootstrap_std(&small, 500, 3);
    assert_eq!(a, bootstrap_std(&small, 500, 3));
    assert!(a > 0.0);
    assert!(bootstrap_std(&large, 500, 3) < a / 5.0);
    assert_eq!(bootstrap_std(&[2.0; 30], 100, 1), 0.0);
}

fn sample(id: &str, transcript: Option<&str>) -> MixtureSample {
    MixtureSample {
        id: id.into(),
        target_wav: String::new(),
        interferer_wav: String::new(),
        mixture_wav: String::new(),
        reference_wav: String::new(),
        speaker_id: "spk000".into(),
        interferer_id: "spk001".into(),
        face_variant_ids: vec![],
        transcript: transcript.map(str::to_string),
        crop_offset_s: 0.0,
    }
}

#[test]
fn wer_report_pools_over_the_corpus() {
    let manifest = Manifest {
        path: "m.jsonl".into(),
        dir: ".".into(),
        samples: vec![
            sample("s0", Some("a b c d")),
            sample("s1", Some("e")),
            sample("s2", None),
        ],
    };
    let hyps: Vec<Hypothesis> = serde_json::from_str::<Vec<Hypothesis>>(
        r#"[{"sample_id":"s0","words":"a b x d"},{"sample_id":"s1","words":["f","g"]}]"#,
    )
    .unwrap();
    let r = wer_report(&manifest, &hyps).unwrap();
    // 1 + 2 errors over 5 words; the per-item mean would be (0.25 + 2) / 2.
    assert_eq!(r.totals.ref_words, 5);
    assert!((r.wer - 3.0 / 5.0).abs() < 1e-15);
    let bad = vec![Hypothesis {
        sample_id: "s2".into(),
        words: Words::Text("a".into()),
    }];
    assert!(wer_report(&manifest, &bad).is_err());
    let unknown = vec![Hypothesis {
        sample_id: "zz".into(),
        words: Words::List(vec![]),
    }];
    assert!(wer_report(&manifest, &unknown).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn si_sdr_never_exceeds_sdr(seed in 0u64..1000, mix in 0.0f64..3.0, delay in 0usize..8) {
        let r = noise(512, seed);
        let n = noise(512, seed + 1);
        let est = Waveform::new(
            (0..512).map(|t| {
                let d = if t >= delay { r.samples[t - delay] } else { 0.0 };
                d + mix * n.samples[t]
            }).collect(),
            8000,
        );
        let a = si_sdr(&est, &r).unwrap();
        let b = sdr_bsseval(&est, &r, 16).unwrap();
        prop_assert!(a <= b + 1e-6, "si {a} sdr {b}");
    }

    #[test]
    fn wer_of_identical_sequences_is_zero(words in proptest::collection::vec("[a-d]", 0..12)) {
        let c = wer(&words, &words);
        prop_assert_eq!(c.errors(), 0);
    }
}
