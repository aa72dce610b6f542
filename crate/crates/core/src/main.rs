use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msep::conditioning::ConditionProvider;
use msep::data::{
    build_mixtures, load_manifest, synth_corpus, CorpusIndex, CorpusSpec, MixConfig,
    FACE_VARIANT_POOL,
};
use msep::dsp::{read_wav, write_wav};
use msep::embeddings::{
    dispersion_stats, load_embeddings, save_embeddings, ConditionEmbedding, EmbeddingKind,
};
use msep::eval::{evaluate_separation, read_hypotheses, swap_test, EvalOptions};
use msep::model::{separate, Checkpoint, Condition, ConditioningMode};
use msep::numerics::gradcheck;
use msep::parallel::parallel_map;
use msep::profile::Profile;
use msep::training::{resume, train, TrainConfig, LAST_CHECKPOINT};
use msep::{Error, Result};

/// Target-speaker separation with voice and face conditioning.
#[derive(Debug, Parser)]
#[command(name = "msep", version)]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, env = "MSEP_SEED", default_value_t = 0)]
    seed: u64,

    /// Signal-processing and network defaults.
    #[arg(long, global = true, env = "MSEP_PROFILE", default_value = "desk")]
    profile: Profile,

    /// Worker threads for data generation and evaluation; 0 uses every core.
    #[arg(long, global = true, env = "MSEP_THREADS", default_value_t = 1)]
    threads: usize,

    /// Single worker, no wall-clock fields: outputs depend only on inputs and seed.
    #[arg(long, global = true, env = "MSEP_DETERMINISTIC")]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic speech corpus.
    Synth(SynthArgs),
    /// Build train/test mixtures from a corpus.
    Mix(MixArgs),
    /// Write voice or face embeddings for a corpus.
    Embed(EmbedArgs),
    /// Train a mask network.
    Train(TrainArgs),
    /// Separate one mixture.
    Separate(SeparateArgs),
    /// Score separated test audio (SDR, SI-SDR) and optional transcripts (WER).
    Eval(EvalArgs),
    /// Check that conditioning picks the requested speaker.
    Swaptest(SwapArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of speakers [default: 24]
    #[arg(long, env = "MSEP_SPEAKERS")]
    speakers: Option<usize>,
    /// Utterances per speaker [default: 12]
    #[arg(long, env = "MSEP_UTTS_PER_SPEAKER")]
    utts_per_speaker: Option<usize>,
    /// Utterance length in seconds [default: 6]
    #[arg(long, env = "MSEP_SECONDS")]
    seconds: Option<f64>,
}

#[derive(Debug, Args)]
struct MixArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training mixtures [default: 2000]
    #[arg(long, env = "MSEP_TRAIN")]
    train: Option<usize>,
    /// Test mixtures [default: 200]
    #[arg(long, env = "MSEP_TEST")]
    test: Option<usize>,
    /// Target-to-interferer power ratio; unity gain when absent.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    kind: EmbeddingKind,
    /// Embedding width [default: the profile's model width for this kind]
    #[arg(long)]
    dim: Option<usize>,
    /// Pose jitter of face embeddings.
    #[arg(long, env = "MSEP_POSE_SIGMA", default_value_t = msep::conditioning::DEFAULT_POSE_SIGMA)]
    pose_sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EmbeddingSources {
    /// Voice embeddings keyed by reference utterance (from `embed --kind voice`).
    #[arg(long)]
    voice_embs: Option<PathBuf>,
    /// Face embeddings keyed by variant (from `embed --kind face`).
    #[arg(long)]
    face_embs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    mode: ConditioningMode,
    #[arg(long, env = "MSEP_EPOCHS", default_value_t = 30)]
    epochs: u32,
    #[arg(long, env = "MSEP_BATCH", default_value_t = 8)]
    batch: usize,
    #[arg(long, env = "MSEP_LR", default_value_t = 1e-3)]
    lr: f64,
    /// Learning-rate divisor applied after every epoch.
    #[arg(long, default_value_t = 1.1)]
    anneal: f64,
    /// Pose jitter of synthetic face embeddings.
    #[arg(long, env = "MSEP_POSE_SIGMA", default_value_t = msep::conditioning::DEFAULT_POSE_SIGMA)]
    pose_sigma: f64,
    /// Held-out manifest scored after every epoch to pick the best checkpoint.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Continue from the `last.ckpt` in the output directory.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    sources: EmbeddingSources,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SeparateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    mix: PathBuf,
    /// Embedding file whose first entry conditions on voice.
    #[arg(long)]
    voice_emb: Option<PathBuf>,
    /// Embedding file whose first entry conditions on face.
    #[arg(long)]
    face_emb: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Recognizer outputs as JSON: `[{"sample_id": .., "words": ..}]`.
    #[arg(long)]
    hyp: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// Optional per-item CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[command(flatten)]
    sources: EmbeddingSources,
}

#[derive(Debug, Args)]
struct SwapArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    sources: EmbeddingSources,
}

struct Globals {
    seed: u64,
    profile: Profile,
    threads: usize,
    deterministic: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let g = Globals {
        seed: cli.seed,
        profile: cli.profile,
        threads: if cli.deterministic { 1 } else { cli.threads },
        deterministic: cli.deterministic,
    };
    match run(cli.command, &g) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command, g: &Globals) -> Result<ExitCode> {
    match cmd {
        Command::Synth(a) => synth(a, g),
        Command::Mix(a) => mix(a, g),
        Command::Embed(a) => embed(a, g),
        Command::Train(a) => train_cmd(a, g),
        Command::Separate(a) => separate_cmd(a),
        Command::Eval(a) => eval_cmd(a, g),
        Command::Swaptest(a) => swap_cmd(a, g),
        Command::Gradcheck => gradcheck_cmd(g),
    }
}

fn synth(a: SynthArgs, g: &Globals) -> Result<ExitCode> {
    let d = CorpusSpec::desk(g.seed);
    let spec = CorpusSpec {
        n_speakers: a.speakers.unwrap_or(d.n_speakers),
        utterances_per_speaker: a.utts_per_speaker.unwrap_or(d.utterances_per_speaker),
        utterance_seconds: a.seconds.unwrap_or(d.utterance_seconds),
        sample_rate: g.profile.sample_rate(),
        seed: g.seed,
    };
    let corpus = synth_corpus(&spec, g.threads)?;
    corpus.write(&a.out)?;
    println!(
        "wrote {} utterances from {} speakers to {}",
        corpus.utterances.len(),
        corpus.speakers.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn mix(a: MixArgs, g: &Globals) -> Result<ExitCode> {
    let corpus = CorpusIndex::load(&a.corpus)?;
    let d = MixConfig::desk(g.seed);
    let cfg = MixConfig {
        n_train: a.train.unwrap_or(d.n_train),
        n_test: a.test.unwrap_or(d.n_test),
        snr_db: a.snr_db,
        threads: g.threads,
        ..d
    };
    let s = build_mixtures(&corpus, &a.out, &cfg)?;
    println!(
        "wrote {} train / {} test mixtures to {} ({} train speakers, {} test speakers, {} clip-guarded)",
        s.n_train,
        s.n_test,
        a.out.display(),
        s.train_speakers.len(),
        s.test_speakers.len(),
        s.clip_guarded
    );
    Ok(ExitCode::SUCCESS)
}

fn embed(a: EmbedArgs, g: &Globals) -> Result<ExitCode> {
    let corpus = CorpusIndex::load(&a.corpus)?;
    let dims = g
        .profile
        .model(ConditioningMode::VoiceAndFace)
        .embedding_dims;
    let embs: Vec<ConditionEmbedding> = match a.kind {
        EmbeddingKind::Voice => {
            let dim = a.dim.unwrap_or(dims.voice);
            parallel_map(corpus.utterances.len(), g.threads, |i| {
                let u = &corpus.utterances[i];
                ConditionEmbedding::voice_oracle(&corpus.read_audio(u)?, dim, &u.speaker_id, &u.id)
            })?
        }
        EmbeddingKind::Face => {
            let dim = a.dim.unwrap_or(dims.face);
            let mut out = Vec::new();
            for s in &corpus.speakers {
                for v in 0..FACE_VARIANT_POOL {
                    out.push(ConditionEmbedding::synthetic_face(s, v, a.pose_sigma, dim)?);
                }
            }
            out
        }
    };
    save_embeddings(&a.out, &embs)?;
    let d = dispersion_stats(&embs);
    println!(
        "wrote {} {} embeddings to {}; within-speaker cosine {:.4}, between-speaker cosine {:.4}",
        embs.len(),
        a.kind,
        a.out.display(),
        d.within_mean_cos,
        d.between_mean_cos
    );
    Ok(ExitCode::SUCCESS)
}

fn provider(
    manifest: &msep::data::Manifest,
    voice_dim: usize,
    face_dim: usize,
    pose_sigma: f64,
    sources: &EmbeddingSources,
) -> Result<ConditionProvider> {
    let mut p = ConditionProvider::for_manifest(manifest, voice_dim, face_dim, pose_sigma)?;
    if let Some(f) = &sources.voice_embs {
        p = p.with_voice_file(f)?;
    }
    if let Some(f) = &sources.face_embs {
        p = p.with_face_file(f)?;
    }
    Ok(p)
}

fn train_cmd(a: TrainArgs, g: &Globals) -> Result<ExitCode> {
    let manifest = load_manifest(&a.manifest)?;
    let validation = a.validation.as_deref().map(load_manifest).transpose()?;
    let mut cfg = TrainConfig::new(a.mode, g.profile, &a.out);
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.initial_lr = a.lr;
    cfg.anneal_divisor = a.anneal;
    cfg.seed = g.seed;
    cfg.pose_sigma = a.pose_sigma;
    cfg.threads = g.threads;
    cfg.wall_clock = !g.deterministic;
    let dims = cfg.model_config().embedding_dims;
    let p = provider(&manifest, dims.voice, dims.face, a.pose_sigma, &a.sources)?;
    let outcome = if a.resume {
        resume(
            &a.out.join(LAST_CHECKPOINT),
            &manifest,
            &cfg,
            &p,
            validation.as_ref(),
        )?
    } else {
        train(&manifest, &cfg, &p, validation.as_ref())?
    };
    for e in &outcome.epochs {
        println!(
            "epoch {:>3}  loss {:.6}{}  lr {:.3e}",
            e.epoch,
            e.mean_loss,
            e.validation_loss
                .map_or(String::new(), |v| format!("  val {v:.6}")),
            e.lr
        );
    }
    println!("checkpoints in {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn first_embedding(path: &Path, kind: EmbeddingKind) -> Result<Vec<f32>> {
    let e = load_embeddings(path)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::validation(format!("{}: no embeddings", path.display())))?;
    if e.kind != kind {
        return Err(Error::validation(format!(
            "{}: holds {} embeddings, expected {kind}",
            path.display(),
            e.kind
        )));
    }
    Ok(e.values)
}

fn separate_cmd(a: SeparateArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mode = ck.model.config.conditioning_mode;
    let cond = Condition {
        voice: a
            .voice_emb
            .as_deref()
            .map(|p| first_embedding(p, EmbeddingKind::Voice))
            .transpose()?,
        face: a
            .face_emb
            .as_deref()
            .map(|p| first_embedding(p, EmbeddingKind::Face))
            .transpose()?,
    };
    if mode.uses_voice() && cond.voice.is_none() {
        return Err(Error::validation(format!(
            "{mode} checkpoint needs a voice embedding (--voice-emb)"
        )));
    }
    if mode.uses_face() && cond.face.is_none() {
        return Err(Error::validation(format!(
            "{mode} checkpoint needs a face embedding (--face-emb)"
        )));
    }
    let mixture = read_wav(&a.mix)?;
    let out = separate(&mixture, &cond, &ck)?;
    write_wav(&a.out, &out)?;
    println!("wrote {} ({} samples)", a.out.display(), out.len());
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(a: EvalArgs, g: &Globals) -> Result<ExitCode> {
    let manifest = load_manifest(&a.manifest)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mode = ck.model.config.conditioning_mode;
    let dims = ck.model.config.embedding_dims;
    let p = provider(
        &manifest,
        dims.voice,
        dims.face,
        ck.meta.face_pose_sigma,
        &a.sources,
    )?;
    let hyps = a.hyp.as_deref().map(read_hypotheses).transpose()?;
    let opts = EvalOptions {
        threads: g.threads,
        bootstrap_resamples: a.bootstrap,
        seed: g.seed,
        ..EvalOptions::default()
    };
    let report = evaluate_separation(&manifest, &ck, mode, &p, hyps.as_deref(), &opts)?;
    report.write_json(&a.report)?;
    if let Some(csv) = &a.csv {
        report.write_csv(csv)?;
    }
    let s = &report.sdr;
    println!(
        "{mode}: SDR {:.2} ± {:.2} dB (mixture {:.2} dB, improvement {:.2} dB), SI-SDR {:.2} dB",
        s.mean_db, s.std_db, s.baseline_mean_db, s.improvement_db, s.mean_si_sdr_db
    );
    if let Some(w) = &report.wer {
        println!(
            "WER {:.2}% over {} words",
            100.0 * w.wer,
            w.totals.ref_words
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn swap_cmd(a: SwapArgs, g: &Globals) -> Result<ExitCode> {
    let manifest = load_manifest(&a.manifest)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let dims = ck.model.config.embedding_dims;
    let p = provider(
        &manifest,
        dims.voice,
        dims.face,
        ck.meta.face_pose_sigma,
        &a.sources,
    )?;
    let opts = EvalOptions {
        threads: g.threads,
        seed: g.seed,
        ..EvalOptions::default()
    };
    let r = swap_test(&manifest, &ck, &p, &opts)?;
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&r)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    }
    println!(
        "swap test: {}/{} correct ({:.3}); {} mixtures skipped",
        r.successes,
        r.trials,
        r.fraction,
        r.skipped.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(g: &Globals) -> Result<ExitCode> {
    let results = gradcheck::run_suite(g.seed)?;
    let mut failed = 0;
    for r in &results {
        println!(
            "{:<5} {:<40} max rel err {:.3e} over {} elements",
            if r.passed() { "ok" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.elements
        );
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Error::numerical(format!(
            "{failed} of {} gradient checks failed",
            results.len()
        )));
    }
    println!("all {} gradient checks passed", results.len());
    Ok(ExitCode::SUCCESS)
}
