//! Acceptance criteria. Prints one PASS/FAIL line per criterion and fails
//! if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msep::conditioning::ConditionProvider;
use msep::data::{
    build_mixtures, load_manifest, synth_corpus, CorpusIndex, CorpusSpec, Manifest, MixConfig,
    TEST_MANIFEST, TRAIN_MANIFEST,
};
use msep::dsp::{fft, Stft, StftConfig, Waveform};
use msep::embeddings::{dispersion_stats, ConditionEmbedding};
use msep::eval::{
    evaluate_separation, sdr_bsseval, si_sdr, swap_test, tokens, wer, EvalOptions, SdrReport,
    GRAM_REGULARIZATION, SDR_CLAMP_DB,
};
use msep::model::{Checkpoint, ConditioningMode, Model};
use msep::numerics::gradcheck;
use msep::profile::Profile;
use msep::training::{train, TrainConfig};

/// Epochs of each end-to-end training run.
const E2E_EPOCHS: u32 = 12;
const SEED: u64 = 2024;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn record(out: &mut Vec<Outcome>, name: &'static str, pass: bool, detail: String) {
    // Written to the real stdout so the line survives test-output capture.
    let mut so = std::io::stdout().lock();
    let _ = writeln!(
        so,
        "{} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = so.flush();
    out.push(Outcome { name, pass, detail });
}

fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn dsp_suite(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut fft_worst = 0.0f64;
    let mut parseval_worst = 0.0f64;
    for n in [4usize, 60, 512, 1200] {
        let x: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let fast = fft(&x).unwrap();
        fft_worst = fft_worst.max(rel_err(&fast, &common::naive_dft(&x)));
        let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let freq: f64 = fast.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        parseval_worst = parseval_worst.max((time - freq).abs() / time);
    }
    let mut rt_worst = 0.0f64;
    for cfg in [StftConfig::desk(), StftConfig::paper()] {
        let sr = cfg.sample_rate as usize;
        let w = Waveform::new(noise(sr, &mut rng), cfg.sample_rate);
        let st = Stft::new(cfg).unwrap();
        let back = st.inverse(&st.forward(&w).unwrap()).unwrap();
        let edge = cfg.win_length;
        let end = back.len().min(w.len()) - edge;
        let num: f64 = (edge..end)
            .map(|i| (back.samples[i] - w.samples[i]).powi(2))
            .sum();
        let den: f64 = (edge..end).map(|i| w.samples[i].powi(2)).sum();
        rt_worst = rt_worst.max((num / den).sqrt());
    }
    let secs = t.elapsed().as_secs_f64();
    record(
        out,
        "dsp",
        fft_worst <= 1e-9 && rt_worst < 1e-6 && parseval_worst <= 1e-9 && secs < 10.0,
        format!(
            "fft vs dft {fft_worst:.2e} (<= 1e-9), stft round trip {rt_worst:.2e} (< 1e-6), \
             parseval {parseval_worst:.2e} (<= 1e-9), {secs:.2} s (< 10 s)"
        ),
    );
}

fn gradient_suite(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let results = gradcheck::run_suite(SEED).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    let has_net = results.iter().any(|r| r.name.starts_with("micro network"));
    record(
        out,
        "gradient",
        failed.is_empty() && has_net && secs < 60.0,
        format!(
            "{} checks incl. micro network, worst rel err {worst:.2e} (< 1e-4), failed {failed:?}, {secs:.1} s (< 60 s)",
            results.len()
        ),
    );
}

/// Residual of `v` after removing its projection onto every delayed copy
/// of `r` restricted to `v`'s support, by repeated Gram-Schmidt. Since the
/// residual is zero past `v.len()`, it is also orthogonal to the full
/// zero-padded delayed copies.
fn orthogonal_to_delays(v: &[f64], r: &[f64], taps: usize) -> Vec<f64> {
    let n = v.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(taps);
    for k in 0..taps {
        let mut c: Vec<f64> = (0..n)
            .map(|t| if t >= k { r[t - k] } else { 0.0 })
            .collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = c.iter().zip(b).map(|(x, y)| x * y).sum();
                c.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        c.iter_mut().for_each(|x| *x /= norm);
        basis.push(c);
    }
    let mut o = v.to_vec();
    for _ in 0..2 {
        for b in &basis {
            let d: f64 = o.iter().zip(b).map(|(x, y)| x * y).sum();
            o.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
    }
    o
}

fn metric_suite(out: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let taps = 512;
    let len = 8000;
    let mut worst = 0.0f64;
    let mut si_ok = true;
    let mut scale_ok = true;
    for _ in 0..50 {
        let r = noise(len, &mut rng);
        let fir: Vec<f64> = (0..rng.gen_range(1..40))
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let gain = 10f64.powf(rng.gen_range(-1.5..1.0));
        let n = noise(len, &mut rng);
        let e: Vec<f64> = (0..len)
            .map(|t| {
                let f: f64 = fir
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k <= t)
                    .map(|(k, c)| c * r[t - k])
                    .sum();
                f + gain * n[t]
            })
            .collect();
        let (ew, rw) = (
            Waveform::new(e.clone(), 8000),
            Waveform::new(r.clone(), 8000),
        );
        let lib = sdr_bsseval(&ew, &rw, taps).unwrap();
        let oracle = common::dense_sdr(&e, &r, taps, GRAM_REGULARIZATION, SDR_CLAMP_DB);
        worst = worst.max((lib - oracle).abs());
        si_ok &= si_sdr(&ew, &rw).unwrap() <= lib + 1e-6;
        for k in [0.125, 0.5, 2.0, 8.0] {
            let scaled = Waveform::new(e.iter().map(|v| k * v).collect(), 8000);
            scale_ok &= sdr_bsseval(&scaled, &rw, taps).unwrap() == lib;
        }
    }

    // Orthogonal residual with the projection's energy: 0 dB.
    let r = noise(len, &mut rng);
    let o = orthogonal_to_delays(&noise(len, &mut rng), &r, taps);
    let r_energy: f64 = r.iter().map(|x| x * x).sum();
    let o_energy: f64 = o.iter().map(|x| x * x).sum();
    let est: Vec<f64> = (0..len)
        .map(|t| r[t] + (r_energy / o_energy).sqrt() * o[t])
        .collect();
    let ortho = sdr_bsseval(&Waveform::new(est, 8000), &Waveform::new(r, 8000), taps).unwrap();

    let mut wer_ok = true;
    let vocab = ["a", "b", "c", "d", "e"];
    for _ in 0..1000 {
        let words = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let n = rng.gen_range(0..12);
            (0..n)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
                .collect()
        };
        let (a, b) = (words(&mut rng), words(&mut rng));
        let c = wer(&a, &b);
        wer_ok &= c.errors() == common::edit_distance(&a, &b)
            && c.ref_words == a.len()
            && a.len() + c.insertions - c.deletions == b.len();
    }
    let ex = |r: &str, h: &str| wer(&tokens(r), &tokens(h));
    let e1 = ex("a b c", "a b c");
    let e2 = ex("a b c", "a x c");
    let e3 = ex("a", "a b");
    let examples_ok = e1.wer() == 0.0
        && (e2.substitutions, e2.deletions, e2.insertions) == (1, 0, 0)
        && e2.wer() == 1.0 / 3.0
        && e3.insertions == 1
        && e3.wer() == 1.0;

    record(
        out,
        "metric",
        worst <= 1e-6 && ortho.abs() <= 1e-6 && scale_ok && si_ok && wer_ok && examples_ok,
        format!(
            "sdr vs dense oracle worst {worst:.2e} dB over 50 pairs (<= 1e-6), orthogonal case {ortho:.2e} dB, \
             scale invariance exact {scale_ok}, si <= sdr {si_ok}, wer vs dp oracle (1000 pairs) {wer_ok}, worked examples {examples_ok}"
        ),
    );
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let fa = files_under(a);
    fa == files_under(b)
        && fa
            .iter()
            .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap())
}

fn dataset_suite(out: &mut Vec<Outcome>, root: &Path) {
    let spec = CorpusSpec {
        n_speakers: 8,
        utterances_per_speaker: 4,
        utterance_seconds: 3.5,
        sample_rate: 8000,
        seed: SEED,
    };
    let mix = MixConfig {
        n_train: 30,
        n_test: 10,
        ..MixConfig::desk(SEED)
    };
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let d = root.join(format!("dataset_{run}"));
        synth_corpus(&spec, 1)
            .unwrap()
            .write(&d.join("corpus"))
            .unwrap();
        let idx = CorpusIndex::load(&d.join("corpus")).unwrap();
        build_mixtures(&idx, &d.join("mix"), &mix).unwrap();
        dirs.push(d);
    }
    let identical = same_tree(&dirs[0], &dirs[1]);
    let tr = load_manifest(&dirs[0].join("mix").join(TRAIN_MANIFEST)).unwrap();
    let te = load_manifest(&dirs[0].join("mix").join(TEST_MANIFEST)).unwrap();
    let speakers = |m: &Manifest| -> BTreeSet<String> {
        m.samples
            .iter()
            .flat_map(|s| [s.speaker_id.clone(), s.interferer_id.clone()])
            .collect()
    };
    let disjoint = speakers(&tr).is_disjoint(&speakers(&te));
    let mut linear = true;
    for m in [&tr, &te] {
        for s in &m.samples {
            let a = m.load_audio(s).unwrap();
            linear &= a.mixture.len() == a.target.len()
                && a.mixture
                    .samples
                    .iter()
                    .zip(&a.target.samples)
                    .zip(&a.interferer.samples)
                    .all(|((x, t), i)| *x == t + i);
        }
    }
    record(
        out,
        "dataset",
        linear && disjoint && identical,
        format!("mixture = target + interferer exactly {linear}, speaker-disjoint splits {disjoint}, bit-identical regeneration {identical}"),
    );
}

fn embedding_suite(out: &mut Vec<Outcome>, corpus: &CorpusIndex) {
    let dims = Profile::Desk
        .model(ConditioningMode::VoiceAndFace)
        .embedding_dims;
    let voices: Vec<ConditionEmbedding> = corpus
        .utterances
        .iter()
        .map(|u| {
            ConditionEmbedding::voice_oracle(
                &corpus.read_audio(u).unwrap(),
                dims.voice,
                &u.speaker_id,
                &u.id,
            )
            .unwrap()
        })
        .collect();
    let faces: Vec<ConditionEmbedding> = corpus
        .speakers
        .iter()
        .flat_map(|s| {
            (0..10).map(move |v| ConditionEmbedding::synthetic_face(s, v, 0.4, dims.face).unwrap())
        })
        .collect();
    let (dv, df) = (dispersion_stats(&voices), dispersion_stats(&faces));
    record(
        out,
        "embedding",
        dv.within_mean_cos > df.within_mean_cos,
        format!(
            "within-speaker cosine: voice {:.4} > face {:.4} (pose sigma 0.4); between: voice {:.4}, face {:.4}",
            dv.within_mean_cos, df.within_mean_cos, dv.between_mean_cos, df.between_mean_cos
        ),
    );
}

struct ModeRun {
    report: SdrReport,
    checkpoint: Checkpoint,
}

fn run_mode(mode: ConditioningMode, root: &Path, train_m: &Manifest, test_m: &Manifest) -> ModeRun {
    let t = Instant::now();
    let mut cfg = TrainConfig::new(mode, Profile::Desk, root.join(format!("run_{mode}")));
    cfg.epochs = E2E_EPOCHS;
    cfg.seed = SEED;
    let dims = cfg.model_config().embedding_dims;
    let p =
        ConditionProvider::for_manifest(train_m, dims.voice, dims.face, cfg.pose_sigma).unwrap();
    let outcome = train(train_m, &cfg, &p, None).unwrap();
    let pt =
        ConditionProvider::for_manifest(test_m, dims.voice, dims.face, cfg.pose_sigma).unwrap();
    let opts = EvalOptions {
        seed: SEED,
        ..EvalOptions::default()
    };
    let report = evaluate_separation(test_m, &outcome.checkpoint, mode, &pt, None, &opts)
        .unwrap()
        .sdr;
    let mut so = std::io::stdout().lock();
    let _ = writeln!(
        so,
        "  {mode}: loss {:.4} -> {:.4}, SDR {:.2} ± {:.3} dB vs mixture {:.2} dB ({:.0} s)",
        outcome.epochs[0].mean_loss,
        outcome.epochs.last().unwrap().mean_loss,
        report.mean_db,
        report.std_db,
        report.baseline_mean_db,
        t.elapsed().as_secs_f64()
    );
    ModeRun {
        report,
        checkpoint: outcome.checkpoint,
    }
}

fn end_to_end(out: &mut Vec<Outcome>, root: &Path, corpus: &CorpusIndex) {
    build_mixtures(corpus, &root.join("mix"), &MixConfig::desk(SEED)).unwrap();
    let train_m = load_manifest(&root.join("mix").join(TRAIN_MANIFEST)).unwrap();
    let test_m = load_manifest(&root.join("mix").join(TEST_MANIFEST)).unwrap();
    let voice = run_mode(ConditioningMode::Voice, root, &train_m, &test_m);
    let face = run_mode(ConditioningMode::Face, root, &train_m, &test_m);
    let both = run_mode(ConditioningMode::VoiceAndFace, root, &train_m, &test_m);
    let (v, f, b) = (&voice.report, &face.report, &both.report);

    record(
        out,
        "e2e (a) voice gain",
        v.improvement_db >= 5.0,
        format!(
            "{:.2} dB over the mixture baseline (>= 5 dB)",
            v.improvement_db
        ),
    );
    record(
        out,
        "e2e (b) face gain and spread",
        f.improvement_db >= 3.0 && f.std_db > v.std_db,
        format!(
            "{:.2} dB over the mixture baseline (>= 3 dB); variant std {:.3} dB vs voice bootstrap std {:.3} dB (must be greater)",
            f.improvement_db, f.std_db, v.std_db
        ),
    );
    let floor = v.mean_db.max(f.mean_db) - 0.2;
    record(
        out,
        "e2e (c) voice_and_face",
        b.mean_db >= floor,
        format!(
            "{:.2} dB (>= {floor:.2} dB = max(voice {:.2}, face {:.2}) - 0.2)",
            b.mean_db, v.mean_db, f.mean_db
        ),
    );

    let dims = voice.checkpoint.model.config.embedding_dims;
    let pt = ConditionProvider::for_manifest(
        &test_m,
        dims.voice,
        dims.face,
        voice.checkpoint.meta.face_pose_sigma,
    )
    .unwrap();
    let opts = EvalOptions::default();
    let trained = swap_test(&test_m, &voice.checkpoint, &pt, &opts).unwrap();
    let mut untrained = voice.checkpoint.clone();
    untrained.model = Model::new(untrained.model.config.clone(), SEED).unwrap();
    untrained.model.zero_output_layer().unwrap();
    let control = swap_test(&test_m, &untrained, &pt, &opts).unwrap();
    record(
        out,
        "e2e (d) swap test",
        trained.fraction >= 0.95 && (0.3..=0.7).contains(&control.fraction) && control.trials >= 200,
        format!(
            "trained {:.3} over {} trials (>= 0.95); untrained control {:.3} over {} trials (in [0.3, 0.7])",
            trained.fraction, trained.trials, control.fraction, control.trials
        ),
    );
}

fn msep(dir: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_msep"))
        .current_dir(dir)
        .args(["--deterministic", "--seed", "7"])
        .args(args)
        .env_remove("MSEP_THREADS")
        .env("RUST_LOG", "warn")
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "msep {args:?} failed: {status}");
}

fn determinism(out: &mut Vec<Outcome>, root: &Path) {
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let d = root.join(format!("pipeline_{run}"));
        std::fs::create_dir_all(&d).unwrap();
        msep(
            &d,
            &[
                "synth",
                "--out",
                "corpus",
                "--speakers",
                "6",
                "--utts-per-speaker",
                "4",
                "--seconds",
                "3.5",
            ],
        );
        msep(
            &d,
            &[
                "mix", "--corpus", "corpus", "--out", "mix", "--train", "24", "--test", "8",
            ],
        );
        msep(
            &d,
            &[
                "embed",
                "--corpus",
                "corpus",
                "--kind",
                "voice",
                "--out",
                "voice.emb",
            ],
        );
        msep(
            &d,
            &[
                "embed", "--corpus", "corpus", "--kind", "face", "--out", "face.emb",
            ],
        );
        let embs = ["--voice-embs", "voice.emb", "--face-embs", "face.emb"];
        let mut train_args = vec![
            "train",
            "--manifest",
            "mix/train.jsonl",
            "--mode",
            "voice_and_face",
            "--epochs",
            "2",
            "--batch",
            "4",
            "--out",
            "run",
        ];
        train_args.extend(embs);
        msep(&d, &train_args);
        let mut eval_args = vec![
            "eval",
            "--manifest",
            "mix/test.jsonl",
            "--checkpoint",
            "run/last.ckpt",
            "--report",
            "report.json",
            "--csv",
            "report.csv",
        ];
        eval_args.extend(embs);
        msep(&d, &eval_args);
        dirs.push(d);
    }
    let files = files_under(&dirs[0]);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(dirs[0].join(f)).ok() != std::fs::read(dirs[1].join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let has_outputs = ["run/last.ckpt", "report.json"]
        .iter()
        .all(|f| files.contains(&PathBuf::from(f)));
    record(
        out,
        "determinism",
        differing.is_empty() && has_outputs && files == files_under(&dirs[1]),
        format!(
            "{} files compared across two --deterministic runs, differing: {differing:?}",
            files.len()
        ),
    );
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut out = Vec::new();
    dsp_suite(&mut out);
    gradient_suite(&mut out);
    metric_suite(&mut out);
    dataset_suite(&mut out, root);
    determinism(&mut out, root);

    synth_corpus(&CorpusSpec::desk(SEED), 0)
        .unwrap()
        .write(&root.join("corpus"))
        .unwrap();
    let corpus = CorpusIndex::load(&root.join("corpus")).unwrap();
    embedding_suite(&mut out, &corpus);
    end_to_end(&mut out, root, &corpus);

    let failed: Vec<String> = out
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
