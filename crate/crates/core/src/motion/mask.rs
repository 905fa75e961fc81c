use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the masked frames of a proportional mask are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPlacement {
    /// The last frames of the clip, emulating a shorter sequence.
    #[default]
    Suffix,
    Scatter,
}

/// Draws a ratio uniformly from `ratio_range` and marks `round(ratio * n)`
/// frames as masked (`true`).
pub fn random_proportional_mask<R: Rng + ?Sized>(
    n: usize,
    ratio_range: (f64, f64),
    placement: MaskPlacement,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let (lo, hi) = ratio_range;
    if !(0.0..1.0).contains(&lo) || !(0.0..1.0).contains(&hi) || lo > hi {
        return Err(Error::argument(format!("mask ratio range [{lo}, {hi}] not within [0, 1)")));
    }
    let ratio = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let count = ((ratio * n as f64).round() as usize).min(n);
    let mut mask = vec![false; n];
    match placement {
        MaskPlacement::Suffix => mask[n - count..].iter_mut().for_each(|m| *m = true),
        MaskPlacement::Scatter => sample(rng, n, count).into_iter().for_each(|i| mask[i] = true),
    }
    Ok(mask)
}
