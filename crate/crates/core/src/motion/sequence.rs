use std::f64::consts::PI;
use std::sync::Arc;

use super::SkeletonSpec;
use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor};

/// Default gesture frame rate.
pub const DEFAULT_FPS: f64 = 15.0;

/// `N x J x 3` axis-angle rotations (radians) at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSequence {
    frames: usize,
    values: Vec<f64>,
    fps: f64,
    skeleton: Arc<SkeletonSpec>,
}

impl GestureSequence {
    pub fn new(values: Vec<f64>, frames: usize, fps: f64, skeleton: Arc<SkeletonSpec>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::argument("gesture sequence needs at least one frame"));
        }
        let j = skeleton.joint_count();
        if values.len() != frames * j * 3 {
            return Err(Error::Dimension {
                op: "gesture_sequence",
                lhs: vec![frames, j, 3],
                rhs: vec![values.len()],
            });
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::argument(format!("invalid frame rate {fps}")));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite rotation value at index {p}")));
        }
        Ok(GestureSequence {
            frames,
            values,
            fps,
            skeleton,
        })
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, fps: f64, skeleton: Arc<SkeletonSpec>) -> Result<Self> {
        let frames = t.shape().first().copied().unwrap_or(0);
        Self::new(t.to_f64_vec(), frames, fps, skeleton)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64([self.frames, self.joint_count(), 3], &self.values).expect("shape invariant")
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    /// Values per frame (`J * 3`).
    pub fn channels(&self) -> usize {
        self.joint_count() * 3
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn skeleton(&self) -> &Arc<SkeletonSpec> {
        &self.skeleton
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let c = self.channels();
        &self.values[f * c..(f + 1) * c]
    }

    pub fn rotation(&self, f: usize, j: usize) -> [f64; 3] {
        let base = (f * self.joint_count() + j) * 3;
        [self.values[base], self.values[base + 1], self.values[base + 2]]
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames as f64 / self.fps
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames {
            return Err(Error::argument(format!(
                "frames {start}..{} out of range for {} frames",
                start + len,
                self.frames
            )));
        }
        let c = self.channels();
        Self::new(
            self.values[start * c..(start + len) * c].to_vec(),
            len,
            self.fps,
            Arc::clone(&self.skeleton),
        )
    }

    /// Maps every rotation to an equivalent one with angle at most pi.
    pub fn canonicalized(&self) -> Self {
        let mut values = self.values.clone();
        for r in values.chunks_mut(3) {
            let c = canonicalize_axis_angle([r[0], r[1], r[2]]);
            r.copy_from_slice(&c);
        }
        GestureSequence {
            values,
            ..self.clone()
        }
    }
}

/// Equivalent axis-angle vector with angle in `[0, pi]`. Vectors that already
/// satisfy the bound are returned unchanged (bit for bit).
pub fn canonicalize_axis_angle(r: [f64; 3]) -> [f64; 3] {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if theta <= PI {
        return r;
    }
    let wrapped = theta.rem_euclid(2.0 * PI);
    // Rotation by `wrapped` about `axis`; above pi flip to the opposite axis.
    let scale = if wrapped > PI { (wrapped - 2.0 * PI) / theta } else { wrapped / theta };
    [r[0] * scale, r[1] * scale, r[2] * scale]
}

/// `N x D` frame-aligned audio features.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence {
    frames: usize,
    dim: usize,
    values: Vec<f64>,
    /// Rate of the features as produced, in Hz (informational).
    pub source_rate_hz: f64,
}

impl AudioFeatureSequence {
    pub fn new(values: Vec<f64>, frames: usize, dim: usize, source_rate_hz: f64) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::argument("audio features need at least one frame and one channel"));
        }
        if values.len() != frames * dim {
            return Err(Error::Dimension {
                op: "audio_features",
                lhs: vec![frames, dim],
                rhs: vec![values.len()],
            });
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite audio feature at index {p}")));
        }
        Ok(AudioFeatureSequence {
            frames,
            dim,
            values,
            source_rate_hz,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        &self.values[f * self.dim..(f + 1) * self.dim]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.frames).map(|f| self.values[f * self.dim + c]).collect()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64([self.frames, self.dim], &self.values).expect("shape invariant")
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames {
            return Err(Error::argument(format!(
                "audio frames {start}..{} out of range for {} frames",
                start + len,
                self.frames
            )));
        }
        Self::new(
            self.values[start * self.dim..(start + len) * self.dim].to_vec(),
            len,
            self.dim,
            self.source_rate_hz,
        )
    }

    /// Linear interpolation in time onto `n` positions spanning the same
    /// interval: target frame `i` samples source position `i * (M - 1) / (n - 1)`.
    pub fn resample(&self, n: usize, target_rate_hz: f64) -> Result<Self> {
        if self.frames < 2 {
            return Err(Error::argument(format!(
                "audio alignment needs at least 2 source frames, got {}",
                self.frames
            )));
        }
        if n == 0 {
            return Err(Error::argument("audio alignment target must have at least one frame"));
        }
        let m = self.frames;
        let mut out = Vec::with_capacity(n * self.dim);
        for i in 0..n {
            let pos = if n == 1 { 0.0 } else { i as f64 * (m - 1) as f64 / (n - 1) as f64 };
            let lo = (pos.floor() as usize).min(m - 2);
            let w = pos - lo as f64;
            let (a, b) = (self.frame(lo), self.frame(lo + 1));
            out.extend(a.iter().zip(b).map(|(&x, &y)| x + w * (y - x)));
        }
        Self::new(out, n, self.dim, target_rate_hz)
    }
}

/// Number of source frames at `rate_hz` that span the same interval as
/// `frames` gesture frames at `fps` (first and last frames coincide).
pub fn aligned_source_frames(frames: usize, fps: f64, rate_hz: f64) -> usize {
    if frames <= 1 {
        return 2;
    }
    ((frames - 1) as f64 * rate_hz / fps).round() as usize + 1
}

/// Number of gesture frames covering `m` source frames at `rate_hz`.
pub fn aligned_gesture_frames(m: usize, rate_hz: f64, fps: f64) -> usize {
    if m <= 1 {
        return 1;
    }
    ((m - 1) as f64 * fps / rate_hz).round() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skel(j: usize) -> Arc<SkeletonSpec> {
        Arc::new(SkeletonSpec::chain(j).unwrap())
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(GestureSequence::new(vec![], 0, 15.0, skel(2)).is_err());
        assert!(GestureSequence::new(vec![0.0; 5], 1, 15.0, skel(2)).is_err());
        assert!(GestureSequence::new(vec![f64::NAN; 6], 1, 15.0, skel(2)).is_err());
    }

    #[test]
    fn canonicalization_bounds_angle_and_keeps_small_rotations() {
        let small = [0.3, -0.2, 1.0];
        assert_eq!(canonicalize_axis_angle(small), small);
        let big = [0.0, 0.0, 1.5 * PI];
        let c = canonicalize_axis_angle(big);
        assert!((c[2] + 0.5 * PI).abs() < 1e-12);
        let huge = [4.0 * PI + 0.1, 0.0, 0.0];
        assert!((canonicalize_axis_angle(huge)[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn resample_identity_and_constants() {
        let a = AudioFeatureSequence::new((0..12).map(|v| v as f64).collect(), 6, 2, 15.0).unwrap();
        assert_eq!(a.resample(6, 15.0).unwrap().values(), a.values());
        let c = AudioFeatureSequence::new(vec![2.5; 20], 10, 2, 50.0).unwrap();
        assert!(c.resample(3, 15.0).unwrap().values().iter().all(|&v| v == 2.5));
        assert!(AudioFeatureSequence::new(vec![1.0], 1, 1, 50.0).unwrap().resample(3, 15.0).is_err());
    }

    #[test]
    fn resample_50hz_two_seconds_to_15fps_matches_interpolation_oracle() {
        // Features are a known nonlinear function of source index.
        let f = |k: f64| (0.07 * k).sin() + 0.01 * k * k;
        let m = 100;
        let a = AudioFeatureSequence::new((0..m).map(|k| f(k as f64)).collect(), m, 1, 50.0).unwrap();
        let r = a.resample(30, 15.0).unwrap();
        for i in [0usize, 1, 7, 15, 29] {
            let pos = i as f64 * 99.0 / 29.0;
            let (lo, hi) = (pos.floor(), pos.ceil());
            let want = if lo == hi { f(lo) } else { f(lo) + (pos - lo) * (f(hi) - f(lo)) };
            assert!((r.values()[i] - want).abs() < 1e-12, "frame {i}");
        }
    }

    #[test]
    fn aligned_frame_counts_are_inverse() {
        for n in [1usize, 2, 34, 150] {
            let m = aligned_source_frames(n, 15.0, 50.0);
            assert_eq!(aligned_gesture_frames(m, 50.0, 15.0), n.max(1));
        }
    }
}
