use std::collections::BTreeSet;

use super::*;
use crate::dsp::read_wav;

fn small_corpus(dir: &Path, seed: u64) -> CorpusIndex {
    let spec = CorpusSpec {
        n_speakers: 6,
        utterances_per_speaker: 3,
        utterance_seconds: 3.5,
        sample_rate: 8000,
        seed,
    };
    synth_corpus(&spec, 1).unwrap().write(dir).unwrap();
    CorpusIndex::load(dir).unwrap()
}

fn small_mix(seed: u64) -> MixConfig {
    MixConfig {
        n_train: 12,
        n_test: 6,
        ..MixConfig::desk(seed)
    }
}

#[test]
fn mixtures_are_exact_sums_and_splits_disjoint() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&tmp.path().join("corpus"), 3);
    let out = tmp.path().join("mix");
    let summary = build_mixtures(&corpus, &out, &small_mix(4)).unwrap();
    let train: BTreeSet<_> = summary.train_speakers.iter().collect();
    assert!(summary.test_speakers.iter().all(|s| !train.contains(s)));

    let tr = load_manifest(&out.join(TRAIN_MANIFEST)).unwrap();
    let te = load_manifest(&out.join(TEST_MANIFEST)).unwrap();
    assert_eq!((tr.samples.len(), te.samples.len()), (12, 6));
    let spk = |m: &Manifest| -> BTreeSet<String> {
        m.samples
            .iter()
            .flat_map(|s| [s.speaker_id.clone(), s.interferer_id.clone()])
            .collect()
    };
    assert!(spk(&tr).is_disjoint(&spk(&te)));

    for m in [&tr, &te] {
        for s in &m.samples {
            let a = m.load_audio(s).unwrap();
            assert_eq!(a.mixture.len(), 24000);
            for i in 0..a.mixture.len() {
                assert_eq!(
                    a.mixture.samples[i],
                    a.target.samples[i] + a.interferer.samples[i]
                );
            }
            assert_ne!(s.speaker_id, s.interferer_id);
            let uniq: BTreeSet<_> = s.face_variant_ids.iter().collect();
            assert_eq!(uniq.len(), FACE_VARIANTS_PER_SAMPLE);
            // The reference is another utterance of the target speaker.
            assert!(s.reference_wav.contains(&format!("{}_u", s.speaker_id)));
            let r = m.load_reference(s).unwrap();
            let off = (s.crop_offset_s * 8000.0).round() as usize;
            let tgt_src = crate::dsp::read_wav(
                corpus
                    .dir
                    .join("wavs")
                    .join(s.reference_wav.trim_start_matches("refs/")),
            )
            .unwrap();
            assert_eq!(r, tgt_src);
            assert!(off + 24000 <= 28000);
        }
    }
}

#[test]
fn reference_differs_from_target_utterance() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&tmp.path().join("corpus"), 8);
    let out = tmp.path().join("mix");
    build_mixtures(&corpus, &out, &small_mix(2)).unwrap();
    let m = load_manifest(&out.join(TRAIN_MANIFEST)).unwrap();
    for s in &m.samples {
        let reference = m.load_reference(s).unwrap();
        let target = m.load_audio(s).unwrap().target;
        // The target crop never appears inside the reference utterance.
        let off = (s.crop_offset_s * 8000.0).round() as usize;
        let seg = reference.segment(off, target.len());
        assert_ne!(seg.samples, target.samples, "{}", s.id);
    }
}

#[test]
fn regeneration_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&tmp.path().join("corpus"), 5);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    build_mixtures(&corpus, &a, &small_mix(7)).unwrap();
    let mut cfg = small_mix(7);
    cfg.threads = 3;
    build_mixtures(&corpus, &b, &cfg).unwrap();
    for f in [TRAIN_MANIFEST, TEST_MANIFEST] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap()
        );
    }
    let m = load_manifest(&a.join(TRAIN_MANIFEST)).unwrap();
    for s in &m.samples {
        assert_eq!(
            std::fs::read(a.join(&s.mixture_wav)).unwrap(),
            std::fs::read(b.join(&s.mixture_wav)).unwrap()
        );
    }
}

#[test]
fn clip_guard_preserves_linearity() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&tmp.path().join("corpus"), 11);
    let out = tmp.path().join("mix");
    let mut cfg = small_mix(1);
    // A strongly boosted interferer forces the guard on most samples.
    cfg.snr_db = Some(-25.0);
    let summary = build_mixtures(&corpus, &out, &cfg).unwrap();
    assert!(summary.clip_guarded > 0);
    let m = load_manifest(&out.join(TRAIN_MANIFEST)).unwrap();
    for s in &m.samples {
        let a = m.load_audio(s).unwrap();
        assert!(a.mixture.peak() <= CLIP_GUARD_PEAK + 2.0 / 32768.0);
        for i in 0..a.mixture.len() {
            assert_eq!(
                a.mixture.samples[i],
                a.target.samples[i] + a.interferer.samples[i]
            );
        }
    }
}

#[test]
fn speakers_with_one_utterance_are_excluded() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("corpus");
    let mut corpus = small_corpus(&dir, 12);
    let dropped = corpus.speakers[0].speaker_id.clone();
    let mut seen = false;
    corpus.utterances.retain(|u| {
        if u.speaker_id != dropped {
            return true;
        }
        let keep = !seen;
        seen = true;
        keep
    });
    let summary = build_mixtures(&corpus, &tmp.path().join("mix"), &small_mix(3)).unwrap();
    assert_eq!(summary.excluded_speakers, vec![dropped.clone()]);
    assert!(
        !summary.train_speakers.contains(&dropped) && !summary.test_speakers.contains(&dropped)
    );
}

#[test]
fn three_second_clips_at_16k_are_48000_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("corpus");
    let spec = CorpusSpec {
        n_speakers: 4,
        utterances_per_speaker: 2,
        utterance_seconds: 3.0,
        sample_rate: 16000,
        seed: 1,
    };
    synth_corpus(&spec, 1).unwrap().write(&dir).unwrap();
    let corpus = CorpusIndex::load(&dir).unwrap();
    let out = tmp.path().join("mix");
    let cfg = MixConfig {
        n_train: 3,
        n_test: 2,
        ..MixConfig::desk(1)
    };
    build_mixtures(&corpus, &out, &cfg).unwrap();
    let m = load_manifest(&out.join(TEST_MANIFEST)).unwrap();
    for s in &m.samples {
        for p in [&s.target_wav, &s.interferer_wav, &s.mixture_wav] {
            assert_eq!(read_wav(m.resolve(p)).unwrap().len(), 48000);
        }
    }
}

#[test]
fn manifest_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&tmp.path().join("corpus"), 13);
    let out = tmp.path().join("mix");
    build_mixtures(&corpus, &out, &small_mix(5)).unwrap();
    let m = load_manifest(&out.join(TEST_MANIFEST)).unwrap();
    let mut bad = m.samples[0].clone();
    bad.interferer_id = bad.speaker_id.clone();
    let path = out.join("bad.jsonl");
    jsonl::write(&path, &[bad]).unwrap();
    assert_eq!(load_manifest(&path).unwrap_err().exit_code(), 3);
    let mut bad = m.samples[0].clone();
    bad.mixture_wav = "missing.wav".into();
    jsonl::write(&path, &[bad]).unwrap();
    assert!(load_manifest(&path)
        .unwrap_err()
        .to_string()
        .contains("missing"));
    std::fs::write(&path, "{not json}\n").unwrap();
    assert_eq!(load_manifest(&path).unwrap_err().exit_code(), 2);
}

#[test]
fn batches_are_deterministic_partitions() {
    let a = iterate_batches(23, 4, Some(9)).unwrap();
    assert_eq!(a, iterate_batches(23, 4, Some(9)).unwrap());
    assert_ne!(a, iterate_batches(23, 4, Some(10)).unwrap());
    assert_eq!(a.len(), 6);
    let mut all: Vec<usize> = a.concat();
    all.sort();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
    assert_eq!(
        iterate_batches(5, 2, None).unwrap(),
        vec![vec![0, 1], vec![2, 3], vec![4]]
    );
    assert!(iterate_batches(5, 0, None).is_err());
}
