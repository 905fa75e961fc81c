use std::sync::Arc;

use super::GestureSequence;
use crate::error::{Error, Result};

/// Default training clip length and stride.
pub const CLIP_FRAMES: usize = 34;
pub const CLIP_STRIDE: usize = 10;
/// Frames shared by consecutive generated clips.
pub const STITCH_OVERLAP: usize = 4;

/// Start offsets of the windows cut from a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub offsets: Vec<usize>,
    pub clip_frames: usize,
    /// Set when the sequence is shorter than one clip.
    pub too_short: bool,
}

/// Offsets `0, stride, 2 * stride, ...` of every full clip; the trailing
/// remainder is dropped.
pub fn window_offsets(len: usize, clip_frames: usize, stride: usize) -> Result<WindowPlan> {
    if clip_frames == 0 || stride == 0 {
        return Err(Error::argument("clip length and stride must be positive"));
    }
    if len < clip_frames {
        return Ok(WindowPlan {
            offsets: Vec::new(),
            clip_frames,
            too_short: true,
        });
    }
    let count = (len - clip_frames) / stride + 1;
    Ok(WindowPlan {
        offsets: (0..count).map(|i| i * stride).collect(),
        clip_frames,
        too_short: false,
    })
}

/// Cuts `seq` into clips; the flag reports a sequence shorter than one clip.
pub fn window(seq: &GestureSequence, clip_frames: usize, stride: usize) -> Result<(Vec<GestureSequence>, bool)> {
    let plan = window_offsets(seq.frames(), clip_frames, stride)?;
    if plan.too_short {
        log::warn!("sequence of {} frames is shorter than one {clip_frames}-frame clip", seq.frames());
    }
    let clips = plan
        .offsets
        .iter()
        .map(|&o| seq.slice(o, clip_frames))
        .collect::<Result<_>>()?;
    Ok((clips, plan.too_short))
}

/// Crossfade weight of the incoming clip at overlap position `i`.
pub fn crossfade_weight(i: usize, overlap: usize) -> f64 {
    (i + 1) as f64 / (overlap + 1) as f64
}

/// Concatenates clips whose consecutive ends share `overlap` frames, blending
/// each shared region linearly from the outgoing to the incoming clip.
pub fn stitch(clips: &[GestureSequence], overlap: usize) -> Result<GestureSequence> {
    let first = clips.first().ok_or_else(|| Error::argument("stitch needs at least one clip"))?;
    if clips.len() == 1 {
        return Ok(first.clone());
    }
    let c = first.channels();
    if let Some(bad) = clips.iter().find(|s| s.frames() <= overlap) {
        return Err(Error::argument(format!(
            "overlap {overlap} must be shorter than every clip (found {} frames)",
            bad.frames()
        )));
    }
    if clips.iter().any(|s| s.channels() != c || s.fps() != first.fps()) {
        return Err(Error::argument("stitched clips must share skeleton and frame rate"));
    }
    let total: usize = clips.iter().map(|s| s.frames()).sum::<usize>() - overlap * (clips.len() - 1);
    let mut values = first.values().to_vec();
    values.reserve(total * c - values.len());
    for clip in &clips[1..] {
        let seam = values.len() - overlap * c;
        for i in 0..overlap {
            let w = crossfade_weight(i, overlap);
            for (k, &b) in clip.frame(i).iter().enumerate() {
                let a = values[seam + i * c + k];
                values[seam + i * c + k] = (1.0 - w) * a + w * b;
            }
        }
        values.extend_from_slice(&clip.values()[overlap * c..]);
    }
    GestureSequence::new(values, total, first.fps(), Arc::clone(first.skeleton()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::SkeletonSpec;

    fn constant(frames: usize, v: f64) -> GestureSequence {
        let sk = Arc::new(SkeletonSpec::chain(1).unwrap());
        GestureSequence::new(vec![v; frames * 3], frames, 15.0, sk).unwrap()
    }

    fn ramp(frames: usize) -> GestureSequence {
        let sk = Arc::new(SkeletonSpec::chain(1).unwrap());
        let v = (0..frames * 3).map(|i| (i / 3) as f64).collect();
        GestureSequence::new(v, frames, 15.0, sk).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_offsets(34, 34, 10).unwrap().offsets, vec![0]);
        assert_eq!(window_offsets(54, 34, 10).unwrap().offsets, vec![0, 10, 20]);
        let short = window_offsets(33, 34, 10).unwrap();
        assert!(short.offsets.is_empty() && short.too_short);
    }

    #[test]
    fn windows_recover_original_frame_indices() {
        let s = ramp(75);
        let (clips, short) = window(&s, 34, 10).unwrap();
        assert!(!short);
        for (i, c) in clips.iter().enumerate() {
            for f in 0..34 {
                assert_eq!(c.frame(f)[0], (i * 10 + f) as f64);
            }
        }
    }

    #[test]
    fn stitch_single_and_constant() {
        let a = ramp(10);
        assert_eq!(stitch(std::slice::from_ref(&a), 4).unwrap(), a);
        let out = stitch(&[constant(10, 0.7), constant(10, 0.7)], 4).unwrap();
        assert_eq!(out.frames(), 16);
        assert!(out.values().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn stitch_crossfade_seam_values() {
        let out = stitch(&[constant(6, 0.0), constant(6, 1.0)], 4).unwrap();
        let seam: Vec<f64> = (2..6).map(|f| out.frame(f)[0]).collect();
        for (got, want) in seam.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(out.frames(), 8);
    }

    #[test]
    fn stitch_rejects_overlap_not_shorter_than_clip() {
        assert!(stitch(&[constant(4, 0.0), constant(4, 1.0)], 4).is_err());
    }
}
