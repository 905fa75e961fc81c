//! Stick-figure frames projected on the frontal XY plane.

use std::fmt::Write as _;

use cogesture::motion::{joint_positions, GestureSequence};

const SIZE: f64 = 400.0;
const MARGIN: f64 = 20.0;

/// `k` frame indices spread evenly from the first to the last frame.
pub fn keyframe_indices(frames: usize, k: usize) -> Vec<usize> {
    if k == 1 || frames == 1 {
        return vec![0; k];
    }
    (0..k)
        .map(|i| ((i * (frames - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

pub fn stick_figure(seq: &GestureSequence, frame: usize) -> String {
    let pts = joint_positions(seq, frame);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let to_px = |p: &[f64; 3]| (MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<title>frame {frame}</title>"#);
    for (i, &p) in seq.skeleton().parents().iter().enumerate() {
        if p >= 0 {
            let (x1, y1) = to_px(&pts[p as usize]);
            let (x2, y2) = to_px(&pts[i]);
            let _ = writeln!(
                s,
                r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black" stroke-width="2"/>"#
            );
        }
    }
    for p in &pts {
        let (x, y) = to_px(p);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="crimson"/>"#);
    }
    s.push_str("</svg>\n");
    s
}
