//! End-to-end helpers shared by the command line and the harnesses:
//! long-audio synthesis and the evaluation protocol.

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSample, ONSET_CHANNEL};
use crate::diffusion::{sample, seed_pose_sample, MotionCodec, NoiseSchedule};
use crate::error::{Error, Result};
use crate::jcformer::{DenoiseCondition, EmotionChoice, Jcformer};
use crate::metrics::{
    audio_beats, beat_align, fgd, kinematic_beats, srgr, BeatConfig, GestureFeatureExtractor, LinearProbe, MetricsReport,
    RepetitionMetrics, BEAT_ALIGN_SIGMA, DEFAULT_DELTA,
};
use crate::motion::{aligned_gesture_frames, stitch, AudioFeatureSequence, GestureSequence, STITCH_OVERLAP};
use crate::numeric::Scalar;
use crate::rng::{stream, Purpose};

/// Frames pinned from the previous clip when continuing a sequence.
pub const SEED_FRAMES: usize = 4;

/// Options for [`synthesize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub speaker: usize,
    pub emotion: EmotionChoice,
    pub seed: u64,
    /// Clip length; defaults to the model's `max_frames`.
    pub clip_frames: Option<usize>,
}

/// Clip start offsets covering `total` frames with `overlap`-frame overlaps.
pub fn clip_plan(total: usize, clip: usize, overlap: usize) -> Result<Vec<(usize, usize)>> {
    if clip <= overlap {
        return Err(Error::argument(format!("clip length {clip} must exceed overlap {overlap}")));
    }
    if total == 0 {
        return Err(Error::argument("nothing to synthesize: zero frames"));
    }
    let mut plan = Vec::new();
    let mut start = 0;
    loop {
        let len = clip.min(total - start);
        plan.push((start, len));
        if start + len >= total {
            return Ok(plan);
        }
        start += clip - overlap;
    }
}

/// Generates motion for the full duration of `audio`: clips are sampled in
/// order, each pinned to the last frames of its predecessor (or to
/// `seed_pose` for the first), then stitched with a crossfade.
pub fn synthesize<T: Scalar>(
    model: &Jcformer<T>,
    codec: &MotionCodec,
    schedule: &NoiseSchedule,
    audio: &AudioFeatureSequence,
    seed_pose: Option<&GestureSequence>,
    options: &SynthesisOptions,
) -> Result<GestureSequence> {
    let total = aligned_gesture_frames(audio.frames(), audio.source_rate_hz, codec.fps);
    let aligned = audio.resample(total, codec.fps)?;
    let clip = options.clip_frames.unwrap_or(model.config().max_frames);
    let plan = clip_plan(total, clip, STITCH_OVERLAP)?;
    if let Some(s) = seed_pose {
        if s.frames() > plan[0].1 {
            return Err(Error::argument(format!(
                "seed pose has {} frames, first clip only {}",
                s.frames(),
                plan[0].1
            )));
        }
    }
    let mut clips: Vec<GestureSequence> = Vec::with_capacity(plan.len());
    for (k, &(start, len)) in plan.iter().enumerate() {
        let cond = DenoiseCondition {
            audio: aligned.slice(start, len)?.to_tensor(),
            speaker: options.speaker,
            emotion: options.emotion,
        };
        let mut rng = stream(options.seed, Purpose::Sampling, k as u64);
        let pin = match clips.last() {
            Some(prev) => Some(prev.slice(prev.frames() - SEED_FRAMES.min(STITCH_OVERLAP), SEED_FRAMES.min(STITCH_OVERLAP))?),
            None => seed_pose.cloned(),
        };
        let out = match pin {
            Some(p) => seed_pose_sample(model, &cond, &p, p.frames(), len, codec, schedule, &mut rng)?,
            None => sample(model, &cond, len, codec, schedule, &mut rng)?,
        };
        clips.push(out);
    }
    stitch(&clips, STITCH_OVERLAP)
}

/// A real clip paired with its raw audio, used for evaluation.
#[derive(Debug, Clone)]
pub struct EvalClip {
    pub real: GestureSequence,
    /// Audio resampled to the clip's frame rate and length.
    pub audio: AudioFeatureSequence,
    pub speaker: usize,
    pub emotion: usize,
}

/// Non-overlapping `clip_frames` windows of every sample.
pub fn eval_clips(samples: &[CorpusSample], clip_frames: usize) -> Result<Vec<EvalClip>> {
    let mut out = Vec::new();
    for s in samples {
        let n = s.motion.frames();
        let audio = s.audio.resample(n, s.motion.fps())?;
        for k in 0..n / clip_frames {
            out.push(EvalClip {
                real: s.motion.slice(k * clip_frames, clip_frames)?,
                audio: audio.slice(k * clip_frames, clip_frames)?,
                speaker: s.speaker,
                emotion: s.emotion,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub repetitions: usize,
    pub seed: u64,
    pub delta: f64,
    pub sigma: f64,
    pub beats: BeatConfig,
    pub audio_beat_channels: Vec<usize>,
    /// Evaluate at most this many clips (all when unset).
    pub max_clips: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            repetitions: 10,
            seed: 0,
            delta: DEFAULT_DELTA,
            sigma: BEAT_ALIGN_SIGMA,
            beats: BeatConfig::default(),
            audio_beat_channels: vec![ONSET_CHANNEL],
            max_clips: None,
        }
    }
}

fn beat_score(motion: &GestureSequence, audio: &AudioFeatureSequence, config: &EvalConfig) -> Result<Option<f64>> {
    let bm = kinematic_beats(motion, &config.beats)?;
    let ba = audio_beats(audio, &config.audio_beat_channels, &config.beats)?;
    if bm.is_empty() || ba.is_empty() {
        return Ok(None);
    }
    beat_align(&bm, &ba, config.sigma).map(Some)
}

fn score(
    extractor: &GestureFeatureExtractor,
    clips: &[EvalClip],
    generated: &[GestureSequence],
    real_latents: &[Vec<f64>],
    config: &EvalConfig,
    seed: u64,
) -> Result<RepetitionMetrics> {
    let gen_latents = extractor.encode(generated)?;
    let fgd = fgd(real_latents, &gen_latents)?;
    let mut s = 0.0;
    let mut beats = Vec::new();
    for (c, g) in clips.iter().zip(generated) {
        s += srgr(&c.real, g, None, config.delta)?;
        if let Some(b) = beat_score(g, &c.audio, config)? {
            beats.push(b);
        }
    }
    Ok(RepetitionMetrics {
        seed,
        fgd,
        srgr: s / clips.len() as f64,
        beat_align: (!beats.is_empty()).then(|| beats.iter().sum::<f64>() / beats.len() as f64),
    })
}

fn limit<'a>(clips: &'a [EvalClip], config: &EvalConfig) -> Result<&'a [EvalClip]> {
    if clips.len() < 2 {
        return Err(Error::argument(format!("evaluation needs at least 2 clips, got {}", clips.len())));
    }
    Ok(&clips[..config.max_clips.map_or(clips.len(), |m| m.clamp(2, clips.len()))])
}

/// Real data scored against itself; the reference point of the report.
pub fn evaluate_real(extractor: &GestureFeatureExtractor, clips: &[EvalClip], config: &EvalConfig) -> Result<MetricsReport> {
    let clips = limit(clips, config)?;
    let real: Vec<GestureSequence> = clips.iter().map(|c| c.real.clone()).collect();
    let latents = extractor.encode(&real)?;
    let rep = score(extractor, clips, &real, &latents, config, config.seed)?;
    Ok(MetricsReport {
        label: "real".into(),
        clips: clips.len(),
        repetitions: vec![rep],
    })
}

/// Samples one clip per evaluation clip from its own audio.
pub fn generate_clips<T: Scalar>(
    model: &Jcformer<T>,
    codec: &MotionCodec,
    schedule: &NoiseSchedule,
    clips: &[EvalClip],
    emotion: impl Fn(&EvalClip) -> EmotionChoice,
    seed: u64,
) -> Result<Vec<GestureSequence>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let cond = DenoiseCondition {
                audio: c.audio.to_tensor(),
                speaker: c.speaker,
                emotion: emotion(c),
            };
            let mut rng = stream(seed, Purpose::Sampling, i as u64);
            sample(model, &cond, c.real.frames(), codec, schedule, &mut rng)
        })
        .collect()
}

/// FGD, SRGR and BeatAlign averaged over `config.repetitions` sampling runs
/// with seeds `config.seed + r`.
pub fn evaluate<T: Scalar>(
    model: &Jcformer<T>,
    codec: &MotionCodec,
    schedule: &NoiseSchedule,
    extractor: &GestureFeatureExtractor,
    clips: &[EvalClip],
    config: &EvalConfig,
    label: &str,
) -> Result<MetricsReport> {
    let clips = limit(clips, config)?;
    if config.repetitions == 0 {
        return Err(Error::argument("evaluation needs at least one repetition"));
    }
    let real: Vec<GestureSequence> = clips.iter().map(|c| c.real.clone()).collect();
    let real_latents = extractor.encode(&real)?;
    let mut reps = Vec::with_capacity(config.repetitions);
    for r in 0..config.repetitions {
        let seed = config.seed + r as u64;
        let generated = generate_clips(model, codec, schedule, clips, |_| EmotionChoice::Predicted, seed)?;
        let rep = score(extractor, clips, &generated, &real_latents, config, seed)?;
        log::info!("{label}: repetition {r} FGD {:.4} SRGR {:.4}", rep.fgd, rep.srgr);
        reps.push(rep);
    }
    Ok(MetricsReport {
        label: label.into(),
        clips: clips.len(),
        repetitions: reps,
    })
}

/// Time-mean pose, the feature of the gesture-emotion classifier.
pub fn pose_feature(motion: &GestureSequence) -> Vec<f64> {
    crate::metrics::time_pool(motion.values(), motion.frames(), motion.channels())
}

/// Linear gesture-emotion classifier trained on ground-truth motion.
pub fn gesture_emotion_classifier(samples: &[CorpusSample], classes: usize) -> Result<LinearProbe> {
    let features: Vec<Vec<f64>> = samples.iter().map(|s| pose_feature(&s.motion)).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.emotion).collect();
    LinearProbe::fit(&features, &labels, classes, 1e-3)
}
