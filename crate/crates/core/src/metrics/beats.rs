use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{AudioFeatureSequence, GestureSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeatSource {
    Kinematic,
    Audio,
}

/// Strictly increasing beat times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSet {
    times: Vec<f64>,
    pub source: BeatSource,
}

impl BeatSet {
    pub fn new(times: Vec<f64>, source: BeatSource) -> Result<Self> {
        if times.windows(2).any(|w| w[0] >= w[1]) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::argument("beat times must be finite and strictly increasing"));
        }
        Ok(BeatSet { times, source })
    }

    pub fn from_frames(frames: &[usize], fps: f64, source: BeatSource) -> Result<Self> {
        Self::new(frames.iter().map(|&f| f as f64 / fps).collect(), source)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Frame indices at `fps`, rounded.
    pub fn frames(&self, fps: f64) -> Vec<usize> {
        self.times.iter().map(|t| (t * fps).round() as usize).collect()
    }
}

/// Extraction thresholds, relative to the signal's range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeatConfig {
    /// Minimum prominence of a speed minimum, as a fraction of the speed range.
    pub kinematic_prominence: f64,
    /// Minimum envelope peak height, as a fraction of the envelope maximum.
    pub audio_threshold: f64,
}

impl Default for BeatConfig {
    fn default() -> Self {
        BeatConfig {
            kinematic_prominence: 0.2,
            audio_threshold: 0.3,
        }
    }
}

/// Mean over joints of the rotation-vector speed (rad/s), central differences
/// inside, one-sided at the ends.
pub fn joint_speed(motion: &GestureSequence) -> Vec<f64> {
    let n = motion.frames();
    let j = motion.joint_count();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|f| {
            let (a, b) = (f.saturating_sub(1), (f + 1).min(n - 1));
            let dt = (b - a) as f64 / motion.fps();
            let (fa, fb) = (motion.frame(a), motion.frame(b));
            (0..j)
                .map(|k| {
                    let d: f64 = (0..3).map(|c| (fb[k * 3 + c] - fa[k * 3 + c]).powi(2)).sum();
                    d.sqrt() / dt
                })
                .sum::<f64>()
                / j as f64
        })
        .collect()
}

/// Prominence of the minimum at `i`: height of the lower of the two highest
/// points reached before the signal drops below `s[i]` on either side.
/// Sides that hit the boundary immediately are ignored.
fn valley_prominence(s: &[f64], i: usize) -> f64 {
    let side = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut peak: Option<f64> = None;
        for k in range {
            if s[k] < s[i] {
                break;
            }
            peak = Some(peak.map_or(s[k], |p: f64| p.max(s[k])));
        }
        peak
    };
    let left = side(&mut (0..i).rev());
    let right = side(&mut (i + 1..s.len()));
    match (left, right) {
        (Some(l), Some(r)) => l.min(r) - s[i],
        (Some(x), None) | (None, Some(x)) => x - s[i],
        (None, None) => 0.0,
    }
}

/// Frames where the joint speed has a prominent local minimum.
pub fn kinematic_beat_frames(motion: &GestureSequence, config: &BeatConfig) -> Vec<usize> {
    let s = joint_speed(motion);
    let n = s.len();
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if n < 3 || !(range > 1e-12) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        // Treat a run of equal values as one candidate at its first index.
        let mut end = i;
        while end + 1 < n && s[end + 1] == s[i] {
            end += 1;
        }
        let left_ok = i == 0 || s[i - 1] > s[i];
        let right_ok = end == n - 1 || s[end + 1] > s[i];
        if left_ok && right_ok && valley_prominence(&s, i).max(valley_prominence(&s, end)) >= config.kinematic_prominence * range {
            out.push(i);
        }
        i = end + 1;
    }
    out
}

pub fn kinematic_beats(motion: &GestureSequence, config: &BeatConfig) -> Result<BeatSet> {
    BeatSet::from_frames(&kinematic_beat_frames(motion, config), motion.fps(), BeatSource::Kinematic)
}

/// Frames where the summed envelope of `channels` peaks above the threshold.
pub fn audio_beat_frames(audio: &AudioFeatureSequence, channels: &[usize], config: &BeatConfig) -> Result<Vec<usize>> {
    if let Some(&c) = channels.iter().find(|&&c| c >= audio.dim()) {
        return Err(Error::argument(format!("envelope channel {c} out of range [0, {})", audio.dim())));
    }
    let env: Vec<f64> = (0..audio.frames())
        .map(|f| channels.iter().map(|&c| audio.frame(f)[c]).sum())
        .collect();
    let max = env.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Ok(Vec::new());
    }
    let n = env.len();
    Ok((0..n)
        .filter(|&f| {
            let left = f == 0 || env[f] > env[f - 1];
            let right = f + 1 == n || env[f] >= env[f + 1];
            left && right && env[f] >= config.audio_threshold * max
        })
        .collect())
}

pub fn audio_beats(audio: &AudioFeatureSequence, channels: &[usize], config: &BeatConfig) -> Result<BeatSet> {
    let frames = audio_beat_frames(audio, channels, config)?;
    BeatSet::from_frames(&frames, audio.source_rate_hz, BeatSource::Audio)
}

/// Mean over kinematic beats of `exp(-d² / (2σ²))`, `d` the distance to the
/// nearest audio beat.
pub fn beat_align(motion_beats: &BeatSet, audio_beats: &BeatSet, sigma: f64) -> Result<f64> {
    if motion_beats.is_empty() || audio_beats.is_empty() {
        return Err(Error::Metric(format!(
            "beat alignment is undefined with {} kinematic and {} audio beats",
            motion_beats.len(),
            audio_beats.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::argument(format!("sigma must be positive, got {sigma}")));
    }
    let total: f64 = motion_beats
        .times()
        .iter()
        .map(|&m| {
            let d = audio_beats.times().iter().map(|&a| (m - a).abs()).fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / motion_beats.len() as f64)
}
