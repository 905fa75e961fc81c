use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal jitter added before factorizing covariances.
pub const COV_JITTER: f64 = 1e-10;
/// Eigenvalues down to this (relative) negative value are clamped to zero.
pub const EIG_TOLERANCE: f64 = 1e-8;

/// Mean and (unbiased) covariance of a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::argument(format!("need at least 2 samples, got {n}")));
        }
        let d = samples[0].len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::argument("feature vectors must share a positive dimension"));
        }
        let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn clamped_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let bad: Vec<f64> = eig.eigenvalues.iter().copied().filter(|&v| v < -EIG_TOLERANCE * scale).collect();
    if !bad.is_empty() {
        return Err(Error::Numeric(format!(
            "{what} is not positive semi-definite; eigenvalues below tolerance: {bad:?}"
        )));
    }
    eig.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(eig)
}

fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = clamped_eigen(m.clone(), "covariance")?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Fréchet distance between two Gaussians.
///
/// `Tr((Σ_r Σ_g)^½)` is computed as the sum of square roots of the eigenvalues
/// of the symmetric matrix `S Σ_g S`, `S = Σ_r^½`, which has the same spectrum.
pub fn frechet_distance(real: &GaussianStats, generated: &GaussianStats) -> Result<f64> {
    if real.dim() != generated.dim() {
        return Err(Error::argument(format!(
            "latent dimensions differ: {} vs {}",
            real.dim(),
            generated.dim()
        )));
    }
    let d = real.dim();
    let jitter = DMatrix::<f64>::identity(d, d) * COV_JITTER;
    let sr = &real.cov + &jitter;
    let sg = &generated.cov + &jitter;
    let s = sqrt_psd(&sr)?;
    let prod = &s * &sg * &s;
    let eig = clamped_eigen(prod, "covariance product")?;
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let diff = &real.mean - &generated.mean;
    let value = diff.dot(&diff) + sr.trace() + sg.trace() - 2.0 * tr_sqrt;
    if !value.is_finite() {
        return Err(Error::Numeric("Fréchet distance is not finite".into()));
    }
    Ok(value.max(0.0))
}

/// FGD between latent sets.
pub fn fgd(real_latents: &[Vec<f64>], generated_latents: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&GaussianStats::fit(real_latents)?, &GaussianStats::fit(generated_latents)?)
}
