//! Seeded procedural stand-in for a paired speech/gesture corpus.
//!
//! Every sample follows explicit rules:
//! - beats are placed every `beat_periods[emotion] +- period_jitter` frames;
//! - each joint swings along a fixed direction between `+a` and `-a`, one
//!   half cosine per beat interval, so joint speed vanishes exactly on beats;
//! - the swing amplitude is `amplitudes[emotion]` scaled per speaker and per
//!   joint, and the swing is centred on a rest pose plus a per-emotion
//!   posture offset;
//! - audio (at `audio_rate_hz`) carries Gaussian onset bumps at the beat
//!   times, a constant per-emotion code block plus Gaussian noise of
//!   `emotion_noise`, and a per-speaker code block.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{aligned_source_frames, AudioFeatureSequence, GestureSequence, SkeletonSpec};
use crate::rng::{stream, Purpose};

/// Number of beat-derived audio channels at the start of every feature frame.
pub const BEAT_CHANNELS: usize = 4;
/// Channel carrying the narrow onset envelope used for audio beat extraction.
pub const ONSET_CHANNEL: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub emotion_count: usize,
    pub speaker_count: usize,
    pub joint_count: usize,
    /// Frames per generated sample.
    pub sample_frames: usize,
    pub fps: f64,
    pub audio_rate_hz: f64,
    pub emotion_block_dim: usize,
    pub speaker_block_dim: usize,
    /// Base beat period in frames, per emotion.
    pub beat_periods: Vec<usize>,
    pub period_jitter: usize,
    /// Swing amplitude in radians, per emotion.
    pub amplitudes: Vec<f64>,
    /// Scale of the per-emotion posture offsets (radians).
    pub posture_scale: f64,
    pub emotion_noise: f64,
    pub speaker_noise: f64,
    pub motion_noise: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            emotion_count: 8,
            speaker_count: 4,
            joint_count: 47,
            sample_frames: 34,
            fps: 15.0,
            audio_rate_hz: 50.0,
            emotion_block_dim: 16,
            speaker_block_dim: 4,
            beat_periods: vec![8, 6, 5, 10, 7, 6, 5, 9],
            period_jitter: 1,
            amplitudes: vec![0.25, 0.4, 0.55, 0.15, 0.2, 0.45, 0.3, 0.22],
            posture_scale: 0.25,
            emotion_noise: 0.05,
            speaker_noise: 0.05,
            motion_noise: 0.0,
            seed: 2024,
        }
    }
}

impl CorpusConfig {
    /// Default settings resized to `c` emotions (tables cycle the defaults).
    pub fn with_emotions(c: usize) -> Self {
        let d = Self::default();
        CorpusConfig {
            emotion_count: c,
            beat_periods: (0..c).map(|e| d.beat_periods[e % 8]).collect(),
            amplitudes: (0..c).map(|e| d.amplitudes[e % 8] * (1.0 + 0.05 * (e / 8) as f64)).collect(),
            ..d
        }
    }

    pub fn audio_dim(&self) -> usize {
        BEAT_CHANNELS + self.emotion_block_dim + self.speaker_block_dim
    }

    pub fn emotion_block(&self) -> std::ops::Range<usize> {
        BEAT_CHANNELS..BEAT_CHANNELS + self.emotion_block_dim
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.emotion_count;
        if c < 2 {
            return Err(Error::Config(format!("need at least 2 emotions, got {c}")));
        }
        if self.speaker_count == 0 || self.joint_count == 0 || self.sample_frames == 0 {
            return Err(Error::Config("speaker, joint and frame counts must be positive".into()));
        }
        if self.beat_periods.len() != c || self.amplitudes.len() != c {
            return Err(Error::Config(format!(
                "per-emotion tables must have {c} entries (periods {}, amplitudes {})",
                self.beat_periods.len(),
                self.amplitudes.len()
            )));
        }
        if self.beat_periods.iter().any(|&p| p < 2 + self.period_jitter) {
            return Err(Error::Config("every beat period minus jitter must be at least 2 frames".into()));
        }
        if !(self.fps > 0.0 && self.audio_rate_hz > 0.0) {
            return Err(Error::Config("rates must be positive".into()));
        }
        if self.emotion_noise < 0.0 || self.speaker_noise < 0.0 || self.motion_noise < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// One paired sample with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub id: String,
    pub audio: AudioFeatureSequence,
    pub motion: GestureSequence,
    pub emotion: usize,
    pub speaker: usize,
    /// Strictly increasing frame indices in `[0, N)`.
    pub beat_frames: Vec<usize>,
    pub seed: u64,
}

/// Sidecar metadata written next to each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub id: String,
    pub emotion: usize,
    pub speaker: usize,
    pub beat_frames: Vec<usize>,
    pub seed: u64,
}

impl CorpusSample {
    pub fn meta(&self) -> SampleMeta {
        SampleMeta {
            id: self.id.clone(),
            emotion: self.emotion,
            speaker: self.speaker,
            beat_frames: self.beat_frames.clone(),
            seed: self.seed,
        }
    }
}

/// Fixed tables derived from the configuration seed.
struct Tables {
    rest: Vec<f64>,
    posture: Vec<Vec<f64>>,
    directions: Vec<[f64; 3]>,
    joint_weights: Vec<f64>,
    emotion_codes: Vec<Vec<f64>>,
    speaker_codes: Vec<Vec<f64>>,
    speaker_gain: Vec<f64>,
}

fn joint_weights(skeleton: &SkeletonSpec) -> Vec<f64> {
    if skeleton.joint_count() != 47 {
        return vec![1.0; skeleton.joint_count()];
    }
    skeleton
        .names()
        .iter()
        .map(|n| match n.as_str() {
            s if s.starts_with("Spine") => 0.3,
            "Neck" | "Head" => 0.5,
            s if s.ends_with("Arm") => 1.0,
            s if s.ends_with("Hand") => 0.8,
            _ => 0.6,
        })
        .collect()
}

impl Tables {
    fn new(cfg: &CorpusConfig, skeleton: &SkeletonSpec) -> Self {
        let mut r = stream(cfg.seed, Purpose::CorpusTables, 0);
        let j = cfg.joint_count;
        let normal = |r: &mut rand_chacha::ChaCha20Rng| -> f64 { StandardNormal.sample(r) };
        let rest = (0..j * 3).map(|_| 0.2 * normal(&mut r)).collect();
        let posture = (0..cfg.emotion_count)
            .map(|_| (0..j * 3).map(|_| cfg.posture_scale * normal(&mut r)).collect())
            .collect();
        let directions = (0..j)
            .map(|_| {
                let v = [normal(&mut r), normal(&mut r), normal(&mut r)];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
                [v[0] / n, v[1] / n, v[2] / n]
            })
            .collect();
        let emotion_codes = (0..cfg.emotion_count)
            .map(|_| (0..cfg.emotion_block_dim).map(|_| normal(&mut r)).collect())
            .collect();
        let speaker_codes = (0..cfg.speaker_count)
            .map(|_| (0..cfg.speaker_block_dim).map(|_| normal(&mut r)).collect())
            .collect();
        let speaker_gain = (0..cfg.speaker_count).map(|_| r.random_range(0.8..1.2)).collect();
        Tables {
            rest,
            posture,
            directions,
            joint_weights: joint_weights(skeleton),
            emotion_codes,
            speaker_codes,
            speaker_gain,
        }
    }
}

/// Beat index as a continuous function of frame: `phase(b_i) = i`, linear in
/// between. `beats` must cover the frame range on both sides.
fn phase(beats: &[i64], f: f64) -> f64 {
    let k = beats.partition_point(|&b| (b as f64) <= f).clamp(1, beats.len() - 1);
    let (a, b) = (beats[k - 1] as f64, beats[k] as f64);
    (k - 1) as f64 + (f - a) / (b - a)
}

/// Generates one sample; deterministic in `(config, emotion, speaker, seed)`.
pub fn generate_sample(cfg: &CorpusConfig, emotion: usize, speaker: usize, seed: u64) -> Result<CorpusSample> {
    cfg.validate()?;
    if emotion >= cfg.emotion_count {
        return Err(Error::argument(format!("emotion {emotion} out of range [0, {})", cfg.emotion_count)));
    }
    if speaker >= cfg.speaker_count {
        return Err(Error::argument(format!("speaker {speaker} out of range [0, {})", cfg.speaker_count)));
    }
    let skeleton = Arc::new(SkeletonSpec::for_joint_count(cfg.joint_count)?);
    let tables = Tables::new(cfg, &skeleton);
    let mut r = stream(cfg.seed, Purpose::Corpus, seed);
    let n = cfg.sample_frames;
    let period = cfg.beat_periods[emotion] as i64;
    let jitter = cfg.period_jitter as i64;

    // Beat timeline with one virtual beat on either side of the clip.
    let first = r.random_range(0..period);
    let mut beats = vec![first - period, first];
    while *beats.last().unwrap() < n as i64 {
        let step = period + r.random_range(-jitter..=jitter);
        beats.push(beats.last().unwrap() + step);
    }
    let beat_frames: Vec<usize> = beats.iter().filter(|&&b| b >= 0 && b < n as i64).map(|&b| b as usize).collect();

    let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
    let amp = cfg.amplitudes[emotion] * tables.speaker_gain[speaker] * r.random_range(0.85..1.15);
    let j = cfg.joint_count;
    let motion_noise = Normal::new(0.0, cfg.motion_noise.max(0.0)).unwrap();
    let mut values = Vec::with_capacity(n * j * 3);
    for f in 0..n {
        let swing = sign * amp * (PI * phase(&beats, f as f64)).cos();
        for joint in 0..j {
            let w = tables.joint_weights[joint];
            let d = tables.directions[joint];
            for k in 0..3 {
                let c = joint * 3 + k;
                let mut v = tables.rest[c] + tables.posture[emotion][c] + swing * w * d[k];
                if cfg.motion_noise > 0.0 {
                    v += motion_noise.sample(&mut r);
                }
                values.push(v);
            }
        }
    }
    let motion = GestureSequence::new(values, n, cfg.fps, skeleton)?.canonicalized();

    let m = aligned_source_frames(n, cfg.fps, cfg.audio_rate_hz);
    let dim = cfg.audio_dim();
    let beat_times: Vec<f64> = beats.iter().map(|&b| b as f64 / cfg.fps).collect();
    let e_noise = Normal::new(0.0, cfg.emotion_noise).unwrap();
    let s_noise = Normal::new(0.0, cfg.speaker_noise).unwrap();
    let syllable_rate = r.random_range(3.0..5.0);
    let mut audio = Vec::with_capacity(m * dim);
    for i in 0..m {
        let tau = i as f64 / cfg.audio_rate_hz;
        let bump = |width: f64| {
            beat_times
                .iter()
                .map(|&t| (-(tau - t).powi(2) / (2.0 * width * width)).exp())
                .sum::<f64>()
        };
        let decay: f64 = beat_times
            .iter()
            .filter(|&&t| tau >= t)
            .map(|&t| (-(tau - t) / 0.15).exp())
            .sum();
        audio.push(bump(0.05));
        audio.push(bump(0.1));
        audio.push(decay);
        audio.push(0.3 * (2.0 * PI * syllable_rate * tau).sin());
        for &c in &tables.emotion_codes[emotion] {
            audio.push(c + e_noise.sample(&mut r));
        }
        for &c in &tables.speaker_codes[speaker] {
            audio.push(c + s_noise.sample(&mut r));
        }
    }
    let audio = AudioFeatureSequence::new(audio, m, dim, cfg.audio_rate_hz)?;
    Ok(CorpusSample {
        id: format!("s{seed:05}_e{emotion}_p{speaker}"),
        audio,
        motion,
        emotion,
        speaker,
        beat_frames,
        seed,
    })
}

/// Disjoint, stratified train/validation/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<CorpusSample>,
    pub validation: Vec<CorpusSample>,
    pub test: Vec<CorpusSample>,
}

impl Corpus {
    pub fn all(&self) -> impl Iterator<Item = &CorpusSample> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sample `k` gets emotion `k mod C` and speaker `(k / C) mod S`; within each
/// emotion the samples are split 80/10/10 in generation order.
pub fn generate_corpus(cfg: &CorpusConfig, sample_count: usize) -> Result<Corpus> {
    cfg.validate()?;
    if sample_count < 10 {
        return Err(Error::argument(format!("corpus needs at least 10 samples, got {sample_count}")));
    }
    let c = cfg.emotion_count;
    let mut per_emotion: Vec<Vec<CorpusSample>> = vec![Vec::new(); c];
    for k in 0..sample_count {
        let emotion = k % c;
        let speaker = (k / c) % cfg.speaker_count;
        per_emotion[emotion].push(generate_sample(cfg, emotion, speaker, k as u64)?);
    }
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for group in per_emotion {
        let n = group.len();
        let n_val = (n as f64 * 0.1).round() as usize;
        let n_test = (n as f64 * 0.1).round() as usize;
        let n_train = n - n_val - n_test;
        for (i, s) in group.into_iter().enumerate() {
            if i < n_train {
                train.push(s);
            } else if i < n_train + n_val {
                validation.push(s);
            } else {
                test.push(s);
            }
        }
    }
    let by_seed = |a: &CorpusSample, b: &CorpusSample| a.seed.cmp(&b.seed);
    train.sort_by(by_seed);
    validation.sort_by(by_seed);
    test.sort_by(by_seed);
    Ok(Corpus {
        config: cfg.clone(),
        train,
        validation,
        test,
    })
}
