//! Forward kinematics on a nominal rest skeleton, for plotting only.

use nalgebra::{Rotation3, Vector3};

use super::{GestureSequence, SkeletonSpec};

/// Rest offset of each joint from its parent. The built-in upper body gets a
/// rough T-pose; other rigs are a vertical chain of unit bones.
pub fn rest_offsets(skeleton: &SkeletonSpec) -> Vec<[f64; 3]> {
    skeleton
        .names()
        .iter()
        .zip(skeleton.parents())
        .map(|(name, &p)| {
            if p < 0 {
                return [0.0, 0.0, 0.0];
            }
            let side = if name.starts_with("Right") {
                -1.0
            } else if name.starts_with("Left") {
                1.0
            } else {
                0.0
            };
            let n = name.as_str();
            if side == 0.0 {
                match n {
                    "Neck" => [0.0, 0.15, 0.0],
                    "Head" => [0.0, 0.2, 0.0],
                    _ => [0.0, if skeleton.joint_count() == 47 { 0.15 } else { 1.0 }, 0.0],
                }
            } else if n.ends_with("Arm") && !n.ends_with("ForeArm") {
                [side * 0.2, 0.0, 0.0]
            } else if n.ends_with("ForeArm") {
                [side * 0.28, 0.0, 0.0]
            } else if n.ends_with("Hand") {
                [side * 0.25, 0.0, 0.0]
            } else {
                // Fingers fan out slightly below the palm.
                let spread = if n.contains("Thumb") {
                    0.03
                } else if n.contains("Index") {
                    0.01
                } else if n.contains("Middle") {
                    0.0
                } else if n.contains("Ring") {
                    -0.01
                } else {
                    -0.03
                };
                [side * 0.03, spread, 0.0]
            }
        })
        .collect()
}

/// World positions of every joint at frame `f`.
pub fn joint_positions(seq: &GestureSequence, f: usize) -> Vec<[f64; 3]> {
    let sk = seq.skeleton();
    let offsets = rest_offsets(sk);
    let j = sk.joint_count();
    let mut rot: Vec<Rotation3<f64>> = Vec::with_capacity(j);
    let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(j);
    // Parents always precede children in the built-in rigs; fall back to a
    // fixed-point pass for arbitrary orderings.
    let mut done = vec![false; j];
    rot.resize(j, Rotation3::identity());
    pos.resize(j, Vector3::zeros());
    while done.iter().any(|d| !d) {
        for i in 0..j {
            if done[i] {
                continue;
            }
            let p = sk.parents()[i];
            let local = Rotation3::from_scaled_axis(Vector3::from(seq.rotation(f, i)));
            let off = Vector3::from(offsets[i]);
            if p < 0 {
                rot[i] = local;
                pos[i] = off;
                done[i] = true;
            } else if done[p as usize] {
                let p = p as usize;
                rot[i] = rot[p] * local;
                pos[i] = pos[p] + rot[p] * off;
                done[i] = true;
            }
        }
    }
    pos.iter().map(|v| [v.x, v.y, v.z]).collect()
}
