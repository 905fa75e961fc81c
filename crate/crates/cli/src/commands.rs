//! One function per command line verb.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cogesture::checkpoint::Checkpoint;
use cogesture::corpus::{generate_corpus, Corpus};
use cogesture::diffusion::{inpaint_sample, MotionCodec, NoiseSchedule};
use cogesture::jcformer::{DenoiseCondition, EmotionChoice, Jcformer};
use cogesture::metrics::{GestureFeatureExtractor, MetricsReport};
use cogesture::motion::{
    aligned_gesture_frames, audio_from_csv, load_audio, load_motion, save_motion, AudioFeatureSequence, DatasetStats,
    GestureSequence,
};
use cogesture::pipeline::{eval_clips, evaluate, evaluate_real, synthesize, EvalClip, SynthesisOptions, SEED_FRAMES};
use cogesture::rng::{stream, Purpose};
use cogesture::training::{
    loss_log_csv, prepare_clips, validate, LossRecord, Trainer, ValidationSnapshot, LOSS_LOG_HEADER,
};
use log::info;

use crate::config::{Preset, RunConfig};
use crate::data::{create_dir, read_corpus, read_text, write, write_corpus, Manifest};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_LOG: &str = "loss.csv";
pub const VALIDATION: &str = "validation.json";
pub const EXTRACTOR: &str = "extractor.bin";

fn arg_err(msg: impl Into<String>) -> anyhow::Error {
    cogesture::Error::argument(msg).into()
}

pub fn cmd_init_config(preset: Preset, out: &Path) -> Result<RunConfig> {
    let c = RunConfig::preset(preset);
    c.save(out)?;
    Ok(c)
}

pub fn cmd_gen_data(config: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    let corpus = generate_corpus(&config.corpus, config.data.samples)?;
    let m = write_corpus(&corpus, out_dir)?;
    info!(
        "wrote {} samples ({} train, {} validation, {} test) to {}",
        corpus.len(),
        corpus.train.len(),
        corpus.validation.len(),
        corpus.test.len(),
        out_dir.display()
    );
    Ok(m)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: Option<PathBuf>,
    pub steps: Option<u64>,
    pub no_rec: bool,
    pub no_emotion: bool,
    pub no_spatial: bool,
}

impl TrainOptions {
    /// The configuration with the command line overrides applied.
    pub fn apply(&self, config: &RunConfig) -> RunConfig {
        let mut c = config.clone();
        if let Some(s) = self.steps {
            c.train.steps = s;
        }
        if self.no_rec {
            c.train.loss.lambda_rec = 0.0;
        }
        if self.no_emotion {
            c.model.emotion = false;
        }
        if self.no_spatial {
            c.model.spatial = false;
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LossRecord>,
    pub validation: Option<ValidationSnapshot>,
    pub checkpoint: PathBuf,
}

/// Corpus whose configuration agrees with the run configuration's model.
fn load_matching_corpus(config: &RunConfig, dir: &Path) -> Result<Corpus> {
    let corpus = read_corpus(dir)?;
    RunConfig {
        corpus: corpus.config.clone(),
        ..config.clone()
    }
    .validate()
    .with_context(|| format!("corpus {} does not fit the model configuration", dir.display()))?;
    Ok(corpus)
}

fn train_stats(corpus: &Corpus) -> Result<DatasetStats> {
    if corpus.train.is_empty() {
        return Err(arg_err("corpus has an empty training split"));
    }
    Ok(DatasetStats::compute(corpus.train.iter().map(|s| &s.motion))?)
}

/// Rows of an existing loss log strictly before `step`, kept verbatim.
fn previous_log(path: &Path, step: u64) -> Result<Vec<String>> {
    if !path.exists() || step == 0 {
        return Ok(Vec::new());
    }
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let s: u64 = line
            .split(',')
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| cogesture::Error::Parse {
                offset: 0,
                message: format!("malformed loss log row {line:?} in {}", path.display()),
            })?;
        if s < step {
            rows.push(line.to_string());
        }
    }
    Ok(rows)
}

fn write_log(path: &Path, previous: &[String], log: &[LossRecord]) -> Result<()> {
    let mut text = String::from(LOSS_LOG_HEADER);
    text.push('\n');
    for r in previous {
        text.push_str(r);
        text.push('\n');
    }
    text.push_str(loss_log_csv(log).split_once('\n').map_or("", |x| x.1));
    write(path, text)
}

pub fn cmd_train(config: &RunConfig, corpus_dir: &Path, out_dir: &Path, options: &TrainOptions) -> Result<TrainOutcome> {
    let cfg = options.apply(config);
    cfg.validate()?;
    let corpus = load_matching_corpus(&cfg, corpus_dir)?;
    let stats = train_stats(&corpus)?;
    let fps = corpus.train[0].motion.fps();
    let clips = prepare_clips::<f64>(&corpus.train, &stats, &cfg.train.window)?;
    create_dir(out_dir)?;
    let mut trainer = match &options.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.check_model(&cfg.model)?;
            let mut t = ckpt.trainer::<f64>()?;
            t.config.steps = cfg.train.steps;
            info!("resuming from {} at step {}", path.display(), t.step);
            t
        }
        None => {
            let model = Jcformer::new(cfg.model.clone(), cfg.seed)?;
            info!("model has {} parameters", model.params().element_count());
            Trainer::new(model, cfg.train.clone(), cfg.diffusion.build()?)?
        }
    };
    let log_path = out_dir.join(LOSS_LOG);
    let previous = previous_log(&log_path, trainer.step)?;
    let mut log: Vec<LossRecord> = Vec::new();
    let every = trainer.config.checkpoint_every;
    let log_every = trainer.config.log_every.max(1);
    while trainer.step < trainer.config.steps {
        let r = trainer.train_step(&clips)?;
        if r.step % log_every == 0 {
            info!("step {} L_mse {:.4} L_rec {:.4} L_ce {:.4} total {:.4}", r.step, r.mse, r.rec, r.ce, r.total);
        }
        log.push(r);
        if every > 0 && trainer.step % every == 0 && trainer.step < trainer.config.steps {
            let path = out_dir.join(format!("checkpoint-{:06}.ckpt", trainer.step));
            Checkpoint::from_trainer(&trainer, &cfg.diffusion, &stats, fps).save(&path)?;
            write_log(&log_path, &previous, &log)?;
        }
    }
    let checkpoint = out_dir.join(FINAL_CHECKPOINT);
    Checkpoint::from_trainer(&trainer, &cfg.diffusion, &stats, fps).save(&checkpoint)?;
    write_log(&log_path, &previous, &log)?;
    let validation = if corpus.validation.is_empty() {
        None
    } else {
        let window = cogesture::training::WindowConfig {
            mask_ratio: None,
            ..cfg.train.window
        };
        let val = prepare_clips::<f64>(&corpus.validation, &stats, &window)?;
        let snap = validate(&trainer.model, &trainer.schedule, &val, cfg.seed)?;
        write(&out_dir.join(VALIDATION), serde_json::to_string_pretty(&snap)? + "\n")?;
        info!("validation: mse {:.4} emotion accuracy {:?}", snap.mse, snap.emotion_accuracy);
        Some(snap)
    };
    Ok(TrainOutcome {
        log,
        validation,
        checkpoint,
    })
}

/// A checkpoint opened for inference.
pub struct Loaded {
    pub model: Jcformer<f64>,
    pub codec: MotionCodec,
    pub schedule: NoiseSchedule,
}

pub fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let ckpt = Checkpoint::load(path)?;
    Ok(Loaded {
        model: ckpt.model()?,
        codec: ckpt.codec()?,
        schedule: ckpt.meta.diffusion.build()?,
    })
}

/// Reads `.csv` feature tables (at `rate_hz`) or native audio containers.
pub fn read_audio(path: &Path, rate_hz: f64) -> Result<AudioFeatureSequence> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        Ok(audio_from_csv(&read_text(path)?, rate_hz)?)
    } else {
        Ok(load_audio(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub emotion: Option<usize>,
    pub speaker: usize,
    pub seed: u64,
    pub seed_pose: Option<PathBuf>,
    pub audio_rate_hz: f64,
}

fn emotion_choice(model: &Jcformer<f64>, emotion: Option<usize>) -> Result<EmotionChoice> {
    let c = model.config();
    match emotion {
        None => Ok(EmotionChoice::Predicted),
        Some(e) if e >= c.emotions => Err(arg_err(format!("emotion label {e} out of range [0, {})", c.emotions))),
        Some(e) => Ok(EmotionChoice::Label(e)),
    }
}

fn check_speaker(model: &Jcformer<f64>, speaker: usize) -> Result<()> {
    let n = model.config().speakers;
    if speaker >= n {
        return Err(arg_err(format!("speaker {speaker} out of range [0, {n})")));
    }
    Ok(())
}

pub fn cmd_sample(checkpoint: &Path, audio: &Path, out: &Path, options: &SampleOptions) -> Result<GestureSequence> {
    let l = load_checkpoint(checkpoint)?;
    let emotion = emotion_choice(&l.model, options.emotion)?;
    check_speaker(&l.model, options.speaker)?;
    let audio = read_audio(audio, options.audio_rate_hz)?;
    let seed_pose = match &options.seed_pose {
        Some(p) => {
            let s = load_motion(p)?;
            Some(s.slice(0, SEED_FRAMES.min(s.frames()))?)
        }
        None => None,
    };
    let opts = SynthesisOptions {
        speaker: options.speaker,
        emotion,
        seed: options.seed,
        clip_frames: None,
    };
    let motion = synthesize(&l.model, &l.codec, &l.schedule, &audio, seed_pose.as_ref(), &opts)?;
    save_motion(&motion, out)?;
    info!("wrote {} frames to {}", motion.frames(), out.display());
    Ok(motion)
}

#[derive(Debug, Clone)]
pub struct EditOptions {
    pub mask: String,
    pub emotion: Option<usize>,
    pub speaker: usize,
    pub seed: u64,
    pub audio_rate_hz: f64,
}

/// Regenerates the joints named by the mask and keeps the others. Long
/// references are processed in consecutive non-overlapping clips.
pub fn cmd_edit(checkpoint: &Path, reference: &Path, audio: &Path, out: &Path, options: &EditOptions) -> Result<GestureSequence> {
    let l = load_checkpoint(checkpoint)?;
    let emotion = emotion_choice(&l.model, options.emotion)?;
    check_speaker(&l.model, options.speaker)?;
    let reference = load_motion(reference)?;
    if reference.joint_count() != l.model.config().joints {
        return Err(arg_err(format!(
            "reference has {} joints, model expects {}",
            reference.joint_count(),
            l.model.config().joints
        )));
    }
    let mask = reference.skeleton().select(&options.mask)?;
    let audio = read_audio(audio, options.audio_rate_hz)?;
    let n = reference.frames();
    let expected = aligned_gesture_frames(audio.frames(), audio.source_rate_hz, l.codec.fps);
    if expected.abs_diff(n) > 1 {
        log::warn!("audio covers {expected} frames, reference has {n}; resampling audio to the reference");
    }
    let aligned = audio.resample(n, l.codec.fps)?;
    let clip = l.model.config().max_frames;
    let mut values = Vec::with_capacity(reference.values().len());
    for (k, start) in (0..n).step_by(clip).enumerate() {
        let len = clip.min(n - start);
        let cond = DenoiseCondition {
            audio: aligned.slice(start, len)?.to_tensor(),
            speaker: options.speaker,
            emotion,
        };
        let r = reference.slice(start, len)?;
        let mut rng = stream(options.seed, Purpose::Sampling, k as u64);
        let edited = inpaint_sample(&l.model, &cond, Some(&r), len, &mask, &l.codec, &l.schedule, &mut rng)?;
        values.extend_from_slice(edited.values());
    }
    let motion = GestureSequence::new(values, n, reference.fps(), reference.skeleton().clone())?;
    save_motion(&motion, out)?;
    Ok(motion)
}

/// Trains the latent feature extractor on windows of the training split.
pub fn train_extractor(config: &RunConfig, corpus: &Corpus) -> Result<GestureFeatureExtractor> {
    let stats = train_stats(corpus)?;
    let clips: Vec<GestureSequence> = eval_clips(&corpus.train, config.extractor.clip_frames)?
        .into_iter()
        .map(|c| c.real)
        .collect();
    let (ex, report) = GestureFeatureExtractor::train(&clips, stats, config.extractor.clone())?;
    info!(
        "extractor: reconstruction mse {:.4} after {} steps (converged: {})",
        report.final_mse, report.steps, report.converged
    );
    Ok(ex)
}

pub fn cmd_train_extractor(config: &RunConfig, corpus_dir: &Path, out: &Path) -> Result<GestureFeatureExtractor> {
    let corpus = read_corpus(corpus_dir)?;
    let ex = train_extractor(config, &corpus)?;
    ex.save(out)?;
    Ok(ex)
}

/// Loads `path` when given, otherwise trains on the corpus and saves the
/// result to `fallback`.
fn extractor_for(config: &RunConfig, corpus: &Corpus, path: Option<&Path>, fallback: &Path) -> Result<GestureFeatureExtractor> {
    match path {
        Some(p) => Ok(GestureFeatureExtractor::load(p)?),
        None => {
            let ex = train_extractor(config, corpus)?;
            ex.save(fallback)?;
            Ok(ex)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub extractor: Option<PathBuf>,
    pub repetitions: Option<usize>,
    pub max_clips: Option<usize>,
}

impl EvalOptions {
    fn apply(&self, config: &RunConfig) -> cogesture::pipeline::EvalConfig {
        let mut e = config.eval.clone();
        if let Some(r) = self.repetitions {
            e.repetitions = r;
        }
        if self.max_clips.is_some() {
            e.max_clips = self.max_clips;
        }
        e
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub real: MetricsReport,
    pub model: MetricsReport,
}

fn test_clips(config: &RunConfig, corpus: &Corpus) -> Result<Vec<EvalClip>> {
    if corpus.test.is_empty() {
        return Err(arg_err("corpus has an empty test split"));
    }
    Ok(eval_clips(&corpus.test, config.extractor.clip_frames)?)
}

fn write_reports(out_dir: &Path, name: &str, reports: &[&MetricsReport]) -> Result<()> {
    let mut text = String::new();
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        text.push_str(&r.to_text());
        let body = r.to_csv();
        csv.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |x| x.1) });
    }
    write(&out_dir.join(format!("{name}.txt")), text)?;
    write(&out_dir.join(format!("{name}.csv")), csv)
}

pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, corpus_dir: &Path, out_dir: &Path, options: &EvalOptions) -> Result<EvalOutcome> {
    let corpus = read_corpus(corpus_dir)?;
    let clips = test_clips(config, &corpus)?;
    create_dir(out_dir)?;
    let ex = extractor_for(config, &corpus, options.extractor.as_deref(), &out_dir.join(EXTRACTOR))?;
    let eval = options.apply(config);
    let l = load_checkpoint(checkpoint)?;
    let real = evaluate_real(&ex, &clips, &eval)?;
    let model = evaluate(&l.model, &l.codec, &l.schedule, &ex, &clips, &eval, "model")?;
    write_reports(out_dir, "report", &[&real, &model])?;
    Ok(EvalOutcome { real, model })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Csv,
    SvgFrames,
    Latents,
}

/// Writes the export and returns the number of rows or files produced.
pub fn cmd_export(motion: &Path, format: ExportFormat, out: &Path, keyframes: usize, extractor: Option<&Path>) -> Result<usize> {
    let seq = load_motion(motion)?;
    match format {
        ExportFormat::Csv => {
            write(out, cogesture::motion::motion_to_csv(&seq))?;
            Ok(seq.frames())
        }
        ExportFormat::SvgFrames => {
            if keyframes == 0 {
                return Err(arg_err("svg export needs at least one keyframe"));
            }
            create_dir(out)?;
            let frames = crate::svg::keyframe_indices(seq.frames(), keyframes);
            for (k, &f) in frames.iter().enumerate() {
                write(&out.join(format!("frame_{k:04}.svg")), crate::svg::stick_figure(&seq, f))?;
            }
            Ok(frames.len())
        }
        ExportFormat::Latents => {
            let path = extractor.ok_or_else(|| arg_err("latent export needs --extractor"))?;
            let ex = GestureFeatureExtractor::load(path)?;
            let clips = ex.clips_of(&seq)?;
            if clips.is_empty() {
                return Err(arg_err(format!(
                    "motion has {} frames, fewer than one {}-frame clip",
                    seq.frames(),
                    ex.config().clip_frames
                )));
            }
            let latents = ex.encode(&clips)?;
            let mut text = (0..ex.latent_dim()).map(|i| format!("z{i}")).collect::<Vec<_>>().join(",");
            text.push('\n');
            for z in &latents {
                let row: Vec<String> = z.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(text, "{}", row.join(","));
            }
            write(out, text)?;
            Ok(latents.len())
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HarnessOptions {
    pub steps: Option<u64>,
    pub eval: EvalOptions,
}

/// One trained and evaluated variant of a harness.
#[derive(Debug, Clone)]
pub struct HarnessRow {
    pub label: String,
    pub report: MetricsReport,
    pub final_loss: f64,
}

fn run_variants(
    config: &RunConfig,
    corpus_dir: &Path,
    out_dir: &Path,
    options: &HarnessOptions,
    variants: Vec<(String, TrainOptions, RunConfig)>,
) -> Result<(MetricsReport, Vec<HarnessRow>)> {
    let corpus = read_corpus(corpus_dir)?;
    let clips = test_clips(config, &corpus)?;
    create_dir(out_dir)?;
    let ex = extractor_for(config, &corpus, options.eval.extractor.as_deref(), &out_dir.join(EXTRACTOR))?;
    let eval = options.eval.apply(config);
    let real = evaluate_real(&ex, &clips, &eval)?;
    let mut rows = Vec::new();
    for (label, mut train, variant) in variants {
        train.steps = options.steps.or(train.steps);
        info!("harness: training {label}");
        let outcome = cmd_train(&variant, corpus_dir, &out_dir.join(&label), &train)?;
        let l = load_checkpoint(&outcome.checkpoint)?;
        let report = evaluate(&l.model, &l.codec, &l.schedule, &ex, &clips, &eval, &label)?;
        let final_loss = outcome.log.last().map_or(f64::NAN, |r| r.total);
        rows.push(HarnessRow {
            label,
            report,
            final_loss,
        });
    }
    Ok((real, rows))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.6}"))
}

pub fn cmd_compare_modes(config: &RunConfig, corpus_dir: &Path, out_dir: &Path, options: &HarnessOptions) -> Result<Vec<HarnessRow>> {
    let variants = cogesture::jcformer::EmotionMode::ALL
        .iter()
        .map(|&mode| {
            let mut c = config.clone();
            c.model.emotion_mode = mode;
            (mode.name().to_string(), TrainOptions::default(), c)
        })
        .collect();
    let (real, rows) = run_variants(config, corpus_dir, out_dir, options, variants)?;
    let mut csv = String::from("mode,fgd,srgr,beat_align\n");
    let mut text = String::from("emotion conditioning comparison\n");
    let _ = writeln!(text, "{:<20} {:>10} {:>8} {:>10}", "mode", "FGD", "SRGR", "BeatAlign");
    let _ = writeln!(text, "{:<20} {:>10.4} {:>8.4} {:>10}", "real data", real.fgd(), real.srgr(), opt(real.beat_align()));
    for r in &rows {
        let m = &r.report;
        let _ = writeln!(csv, "{},{:.6},{:.6},{}", r.label, m.fgd(), m.srgr(), opt(m.beat_align()));
        let _ = writeln!(text, "{:<20} {:>10.4} {:>8.4} {:>10}", r.label, m.fgd(), m.srgr(), opt(m.beat_align()));
    }
    write(&out_dir.join("compare.csv"), csv)?;
    write(&out_dir.join("compare.txt"), text)?;
    Ok(rows)
}

/// Flag combinations of the ablation table: (L_rec, spatial branch, emotion).
pub const ABLATIONS: [(bool, bool, bool); 4] = [
    (false, true, false),
    (true, true, false),
    (true, false, true),
    (true, true, true),
];

pub fn cmd_ablate(config: &RunConfig, corpus_dir: &Path, out_dir: &Path, options: &HarnessOptions) -> Result<Vec<HarnessRow>> {
    let variants = ABLATIONS
        .iter()
        .map(|&(rec, spatial, emotion)| {
            let label = format!(
                "{}rec_{}spatial_{}emotion",
                if rec { "" } else { "no_" },
                if spatial { "" } else { "no_" },
                if emotion { "" } else { "no_" }
            );
            let train = TrainOptions {
                no_rec: !rec,
                no_spatial: !spatial,
                no_emotion: !emotion,
                ..TrainOptions::default()
            };
            (label, train, config.clone())
        })
        .collect();
    let (_, rows) = run_variants(config, corpus_dir, out_dir, options, variants)?;
    let mark = |b: bool| if b { "yes" } else { "no" };
    let mut csv = String::from("l_rec,jcformer_spatial,emotion,fgd,srgr,beat_align\n");
    let mut text = String::from("ablation\n");
    let _ = writeln!(text, "{:>6} {:>9} {:>8} {:>10} {:>8}", "L_rec", "JCFormer", "Emotion", "FGD", "SRGR");
    for (r, &(rec, spatial, emotion)) in rows.iter().zip(&ABLATIONS) {
        let m = &r.report;
        let _ = writeln!(csv, "{},{},{},{:.6},{:.6},{}", mark(rec), mark(spatial), mark(emotion), m.fgd(), m.srgr(), opt(m.beat_align()));
        let _ = writeln!(text, "{:>6} {:>9} {:>8} {:>10.4} {:>8.4}", mark(rec), mark(spatial), mark(emotion), m.fgd(), m.srgr());
    }
    write(&out_dir.join("ablation.csv"), csv)?;
    write(&out_dir.join("ablation.txt"), text)?;
    Ok(rows)
}

/// Exit code for an error chain: 2 argument, 3 numeric/training, 4 IO.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<cogesture::Error>() {
            return match e.kind() {
                cogesture::ErrorKind::Argument => 2,
                cogesture::ErrorKind::Numeric => 3,
                cogesture::ErrorKind::Io => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

