use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form ridge regression onto one-hot targets, used as a linear
/// classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// `(dim + 1) x classes`, last row is the bias.
    weights: Vec<f64>,
    dim: usize,
    classes: usize,
}

impl LinearProbe {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, ridge: f64) -> Result<Self> {
        let n = features.len();
        if n == 0 || n != labels.len() {
            return Err(Error::argument(format!("{n} feature rows for {} labels", labels.len())));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::argument("feature rows must share a dimension"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::argument(format!("label {l} out of range [0, {classes})")));
        }
        let x = DMatrix::from_fn(n, dim + 1, |i, j| if j == dim { 1.0 } else { features[i][j] });
        let y = DMatrix::from_fn(n, classes, |i, c| if labels[i] == c { 1.0 } else { 0.0 });
        let mut gram = x.transpose() * &x;
        for i in 0..dim {
            gram[(i, i)] += ridge;
        }
        gram[(dim, dim)] += 1e-12;
        let rhs = x.transpose() * y;
        let w = gram
            .cholesky()
            .ok_or_else(|| Error::Numeric("probe normal equations are singular".into()))?
            .solve(&rhs);
        Ok(LinearProbe {
            weights: (0..=dim).flat_map(|i| (0..classes).map(move |c| (i, c))).map(|(i, c)| w[(i, c)]).collect(),
            dim,
            classes,
        })
    }

    pub fn scores(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.dim {
            return Err(Error::argument(format!("probe expects {} features, got {}", self.dim, feature.len())));
        }
        let x = DVector::from_iterator(self.dim + 1, feature.iter().copied().chain(std::iter::once(1.0)));
        Ok((0..self.classes)
            .map(|c| (0..=self.dim).map(|i| x[i] * self.weights[i * self.classes + c]).sum())
            .collect())
    }

    pub fn predict(&self, feature: &[f64]) -> Result<usize> {
        Ok(crate::jcformer::argmax(&self.scores(feature)?))
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::argument("accuracy needs matching non-empty features and labels"));
        }
        let mut correct = 0;
        for (f, &l) in features.iter().zip(labels) {
            correct += usize::from(self.predict(f)? == l);
        }
        Ok(correct as f64 / labels.len() as f64)
    }
}

/// Time-mean of a row-major `frames x dim` buffer.
pub fn time_pool(values: &[f64], frames: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for f in 0..frames {
        for (o, v) in out.iter_mut().zip(&values[f * dim..(f + 1) * dim]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= frames.max(1) as f64);
    out
}
