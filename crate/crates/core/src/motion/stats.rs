use serde::{Deserialize, Serialize};

use super::GestureSequence;
use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor};

/// Lower bound applied to every per-channel standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and standard deviation over a training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DatasetStats {
    pub fn compute<'a>(seqs: impl IntoIterator<Item = &'a GestureSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let seqs: Vec<&GestureSequence> = seqs.into_iter().collect();
        for s in &seqs {
            if sum.is_empty() {
                sum = vec![0.0; s.channels()];
            }
            if s.channels() != sum.len() {
                return Err(Error::argument("sequences disagree on channel count"));
            }
            for f in 0..s.frames() {
                sum.iter_mut().zip(s.frame(f)).for_each(|(a, &v)| *a += v);
            }
            count += s.frames();
        }
        if count == 0 {
            return Err(Error::argument("statistics need at least one frame"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; mean.len()];
        for s in &seqs {
            for f in 0..s.frames() {
                for ((a, &v), &m) in var.iter_mut().zip(s.frame(f)).zip(&mean) {
                    *a += (v - m) * (v - m);
                }
            }
        }
        let std = var.iter().map(|v| (v / count as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(DatasetStats { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        DatasetStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, channels: usize) -> Result<()> {
        if channels != self.channels() {
            return Err(Error::argument(format!(
                "statistics cover {} channels, sequence has {channels}",
                self.channels()
            )));
        }
        Ok(())
    }

    /// `(x - mean) / std` as an `N x J x 3` tensor.
    pub fn normalize<T: Scalar>(&self, seq: &GestureSequence) -> Result<Tensor<T>> {
        let c = seq.channels();
        self.check(c)?;
        let values: Vec<T> = seq
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| T::of((v - self.mean[i % c]) / self.std[i % c]))
            .collect();
        Tensor::from_vec([seq.frames(), seq.joint_count(), 3], values)
    }

    /// Inverse of [`normalize`](Self::normalize) on raw `f64` values.
    pub fn denormalize_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        let c = self.channels();
        if values.len() % c != 0 {
            return Err(Error::argument(format!(
                "{} values do not divide into {c} channels",
                values.len()
            )));
        }
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.std[i % c] + self.mean[i % c])
            .collect())
    }

    pub fn denormalize<T: Scalar>(&self, t: &Tensor<T>, template: &GestureSequence) -> Result<GestureSequence> {
        self.check(template.channels())?;
        let values = self.denormalize_values(&t.to_f64_vec())?;
        let frames = values.len() / self.channels();
        GestureSequence::new(values, frames, template.fps(), template.skeleton().clone())
    }
}
