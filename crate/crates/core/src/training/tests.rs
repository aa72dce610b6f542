use std::path::Path;

use super::*;
use crate::data::{
    build_mixtures, load_manifest, synth_corpus, CorpusIndex, CorpusSpec, MixConfig, SPEAKERS_FILE,
    TRAIN_MANIFEST,
};
use crate::dsp::{read_wav, stft, StftConfig, Waveform};
use crate::model::{ConvSpec, ParamKind};

fn fixture(dir: &Path) -> Manifest {
    let spec = CorpusSpec {
        n_speakers: 6,
        utterances_per_speaker: 3,
        utterance_seconds: 3.5,
        sample_rate: 8000,
        seed: 11,
    };
    synth_corpus(&spec, 1)
        .unwrap()
        .write(&dir.join("corpus"))
        .unwrap();
    let corpus = CorpusIndex::load(&dir.join("corpus")).unwrap();
    let cfg = MixConfig {
        n_train: 6,
        n_test: 2,
        threads: 1,
        ..MixConfig::desk(12)
    };
    build_mixtures(&corpus, &dir.join("mix"), &cfg).unwrap();
    load_manifest(&dir.join("mix").join(TRAIN_MANIFEST)).unwrap()
}

fn tiny(mode: ConditioningMode, out: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::new(mode, Profile::Desk, out);
    cfg.batch_size = 3;
    cfg.epochs = 3;
    cfg.seed = 5;
    let mut m = cfg.model_config();
    m.convs = m
        .convs
        .iter()
        .map(|c| ConvSpec::new(1, c.kernel, c.dilation))
        .collect();
    m.lstm_hidden = 4;
    m.lstm_layers = 1;
    m.embedding_dims.voice = 8;
    m.embedding_dims.face = 6;
    cfg.model = Some(m);
    cfg
}

fn provider(manifest: &Manifest, cfg: &TrainConfig) -> ConditionProvider {
    let m = cfg.model_config();
    ConditionProvider::for_manifest(
        manifest,
        m.embedding_dims.voice,
        m.embedding_dims.face,
        cfg.pose_sigma,
    )
    .unwrap()
}

/// 120 zeros in front; 120 behind plus 40 to land on a frame boundary.
fn edge_padded(w: &Waveform) -> Waveform {
    assert_eq!(w.len(), 24000);
    let mut v = vec![0.0; 120];
    v.extend_from_slice(&w.samples);
    v.extend(std::iter::repeat(0.0).take(160));
    Waveform::new(v, w.sample_rate)
}

#[test]
fn half_mask_loss_matches_scalar_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());
    let cfg = tiny(ConditioningMode::Voice, &tmp.path().join("run"));
    let p = provider(&manifest, &cfg);
    let st = Stft::new(StftConfig::desk()).unwrap();
    let stats = mixture_stats(&manifest, &st, 24000, 1).unwrap();
    let loader = BatchLoader {
        manifest: &manifest,
        provider: &p,
        stft: st,
        stats,
        mode: cfg.conditioning_mode,
        clip_len: 24000,
        threads: 1,
    };
    let idx = [0, 2, 4];
    let batch = loader.load(&idx, &[0; 3]).unwrap();
    let mut model = Model::new(cfg.model_config(), 1).unwrap();
    model.zero_output_layer().unwrap();
    let loss = batch_loss(&model, &batch, Mode::Train).unwrap();

    let (mut sum, mut count) = (0.0f64, 0usize);
    for &i in &idx {
        let s = &manifest.samples[i];
        let mix = read_wav(manifest.resolve(&s.mixture_wav)).unwrap();
        let tgt = read_wav(manifest.resolve(&s.target_wav)).unwrap();
        let ms = stft(&edge_padded(&mix), StftConfig::desk()).unwrap();
        let ts = stft(&edge_padded(&tgt), StftConfig::desk()).unwrap();
        for (a, b) in ms.data.iter().zip(&ts.data) {
            let d = 0.5 * a.norm() - b.norm();
            sum += d * d;
            count += 1;
        }
    }
    let expected = sum / count as f64;
    assert!(
        (loss - expected).abs() <= 1e-5 * expected,
        "{loss} vs {expected}"
    );
}

#[test]
fn learning_rate_is_annealed_and_logged() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());
    let out = tmp.path().join("run");
    let cfg = tiny(ConditioningMode::Voice, &out);
    let res = train(&manifest, &cfg, &provider(&manifest, &cfg), None).unwrap();
    let steps: Vec<StepMetrics> = jsonl::read(&out.join(METRICS_FILE)).unwrap();
    assert_eq!(steps.len(), 6);
    let expect = [0.001, 0.001 / 1.1, 0.001 / 1.1 / 1.1];
    for s in &steps {
        assert!((s.lr - expect[s.epoch as usize]).abs() < 1e-15);
        assert!(s.loss.is_finite());
    }
    assert!((expect[1] - 0.000_909_090_909).abs() < 1e-12);
    assert!((expect[2] - 0.000_826_446_281).abs() < 1e-12);
    assert_eq!(
        steps.iter().map(|s| s.step).collect::<Vec<_>>(),
        (0..6).collect::<Vec<_>>()
    );
    let epochs: Vec<EpochSummary> = jsonl::read(&out.join(EPOCHS_FILE)).unwrap();
    assert_eq!(epochs, res.epochs);
    assert_eq!(res.checkpoint.epoch, 3);
    assert!(out.join(LAST_CHECKPOINT).is_file() && out.join(BEST_CHECKPOINT).is_file());
    let adam = res.checkpoint.optimizer.as_ref().unwrap();
    assert!((adam.lr - 0.001 / 1.1f64.powi(3)).abs() < 1e-15);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());
    let full = tiny(ConditioningMode::VoiceAndFace, &tmp.path().join("full"));
    let p = provider(&manifest, &full);
    train(&manifest, &full, &p, None).unwrap();

    let mut part = tiny(ConditioningMode::VoiceAndFace, &tmp.path().join("part"));
    part.epochs = 2;
    train(&manifest, &part, &p, None).unwrap();
    part.epochs = 3;
    let last = part.checkpoint_dir.join(LAST_CHECKPOINT);
    resume(&last, &manifest, &part, &p, None).unwrap();

    let a = std::fs::read(full.checkpoint_dir.join(LAST_CHECKPOINT)).unwrap();
    let b = std::fs::read(&last).unwrap();
    assert!(a == b, "resumed checkpoint differs");

    let again = tiny(ConditioningMode::VoiceAndFace, &tmp.path().join("again"));
    train(&manifest, &again, &p, None).unwrap();
    let c = std::fs::read(again.checkpoint_dir.join(LAST_CHECKPOINT)).unwrap();
    assert!(a == c, "repeated run differs");
}

#[test]
fn face_mode_without_identities_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());
    std::fs::remove_file(manifest.dir.join(SPEAKERS_FILE)).unwrap();
    let out = tmp.path().join("run");
    let cfg = tiny(ConditioningMode::Face, &out);
    let err = train(&manifest, &cfg, &provider(&manifest, &cfg), None).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(!out.join(LAST_CHECKPOINT).exists());

    let mut no_variants = manifest.clone();
    no_variants.samples[1].face_variant_ids.clear();
    let err = train(&no_variants, &cfg, &provider(&manifest, &cfg), None).unwrap_err();
    assert!(err.to_string().contains("face"), "{err}");
}

#[test]
fn non_finite_parameter_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());
    let mut cfg = tiny(ConditioningMode::Voice, &tmp.path().join("run"));
    cfg.epochs = 1;
    let p = provider(&manifest, &cfg);
    let res = train(&manifest, &cfg, &p, None).unwrap();
    let mut ck = res.checkpoint;
    ck.model
        .params
        .get_mut("lstm1.bwd.w_hh")
        .unwrap()
        .data_mut()[3] = f32::NAN;
    let path = tmp.path().join("bad.ckpt");
    ck.save(&path).unwrap();
    cfg.epochs = 2;
    let err = resume(&path, &manifest, &cfg, &p, None).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("lstm1.bwd.w_hh"), "{err}");
}

#[test]
fn bilstm_input_width_covers_both_embeddings() {
    let cfg = tiny(ConditioningMode::VoiceAndFace, Path::new("unused"));
    let m = cfg.model_config();
    let model = Model::new(m.clone(), 0).unwrap();
    let w = model.params.get("lstm1.fwd.w_ih").unwrap();
    assert_eq!(w.shape()[0], m.conv_flat_dim() + 8 + 6);
    assert_eq!(m.lstm_input_dim(), m.conv_flat_dim() + 8 + 6);
    assert!(model
        .params
        .iter()
        .filter(|p| p.name.ends_with("running_var"))
        .all(|p| p.kind == ParamKind::Buffer));
}

#[test]
fn config_validation() {
    let mut cfg = tiny(ConditioningMode::Voice, Path::new("unused"));
    cfg.initial_lr = 0.0;
    assert!(cfg.validate().is_err());
    cfg.initial_lr = 1e-3;
    cfg.anneal_divisor = 0.9;
    assert!(cfg.validate().is_err());
    cfg.anneal_divisor = 1.0;
    assert!(cfg.validate().is_ok());
}

#[test]
fn training_reduces_the_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());
    let mut cfg = tiny(ConditioningMode::Voice, &tmp.path().join("run"));
    cfg.epochs = 6;
    cfg.initial_lr = 3e-3;
    let res = train(&manifest, &cfg, &provider(&manifest, &cfg), None).unwrap();
    let first = res.epochs.first().unwrap().mean_loss;
    let last = res.epochs.last().unwrap().mean_loss;
    assert!(last < first, "{first} -> {last}");
}
