use crate::error::{Error, Result};
use crate::motion::GestureSequence;

/// Default pose-space threshold in radians.
pub const DEFAULT_DELTA: f64 = 0.2;

/// Weighted fraction of (frame, joint) pairs whose rotation vectors lie within
/// `delta` of the reference. Per-frame `weights` are rescaled to mean 1;
/// `None` means uniform.
pub fn srgr(real: &GestureSequence, generated: &GestureSequence, weights: Option<&[f64]>, delta: f64) -> Result<f64> {
    let (n, j) = (real.frames(), real.joint_count());
    if generated.frames() != n || generated.joint_count() != j {
        return Err(Error::argument(format!(
            "srgr needs equal shapes, got {n}x{j} and {}x{}",
            generated.frames(),
            generated.joint_count()
        )));
    }
    if n == 0 {
        return Err(Error::argument("srgr needs at least one frame"));
    }
    let w: Vec<f64> = match weights {
        None => vec![1.0; n],
        Some(w) if w.len() != n => {
            return Err(Error::argument(format!("{} weights for {n} frames", w.len())));
        }
        Some(w) => {
            let mean = w.iter().sum::<f64>() / n as f64;
            if !(mean > 0.0) || w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::argument("weights must be non-negative with a positive mean"));
            }
            w.iter().map(|x| x / mean).collect()
        }
    };
    let mut score = 0.0;
    for f in 0..n {
        let (a, b) = (real.frame(f), generated.frame(f));
        let hits = (0..j)
            .filter(|&k| {
                let d: f64 = (0..3).map(|c| (a[k * 3 + c] - b[k * 3 + c]).powi(2)).sum();
                d.sqrt() <= delta
            })
            .count();
        score += w[f] * hits as f64;
    }
    Ok(score / (n * j) as f64)
}
