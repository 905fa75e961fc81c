//! Noise schedule, forward corruption, reverse sampling and the editing
//! samplers. Motion tensors are handled as `N x (J*3)` matrices in
//! normalized units.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{DatasetStats, GestureSequence, SkeletonSpec};
use crate::numeric::{Scalar, Tensor};

/// Smallest ᾱ_t accepted when recovering x̂₀.
pub const ALPHA_BAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

/// Per-step reverse variance σ_t².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// σ_t² = β_t
    #[default]
    Beta,
    /// σ_t² = β_t (1 - ᾱ_{t-1}) / (1 - ᾱ_t)
    Posterior,
    /// Deterministic chain.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub schedule: ScheduleKind,
    pub variance: VarianceMode,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            schedule: ScheduleKind::Linear,
            variance: VarianceMode::Beta,
        }
    }
}

impl DiffusionConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let s = match self.schedule {
            ScheduleKind::Linear => make_schedule(self.steps, self.beta_start, self.beta_end)?,
            ScheduleKind::Cosine => cosine_schedule(self.steps)?,
        };
        Ok(s.with_variance(self.variance))
    }
}

/// Tables indexed by `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    variance: VarianceMode,
}

/// Linear β from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::argument("diffusion needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::argument(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let beta = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    Ok(NoiseSchedule::from_betas(beta))
}

/// Cosine ᾱ schedule with offset 0.008 and β clipped to 0.999.
pub fn cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::argument("diffusion needs at least one step"));
    }
    let s = 0.008;
    let f = |t: f64| (((t / steps as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let beta = (1..=steps)
        .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(1e-8, 0.999))
        .collect();
    Ok(NoiseSchedule::from_betas(beta))
}

impl NoiseSchedule {
    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut acc = 1.0;
        let alpha_bar = alpha
            .iter()
            .map(|a| {
                acc *= a;
                acc
            })
            .collect();
        NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
            variance: VarianceMode::Beta,
        }
    }

    pub fn with_variance(mut self, variance: VarianceMode) -> Self {
        self.variance = variance;
        self
    }

    pub fn variance_mode(&self) -> VarianceMode {
        self.variance
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::argument(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }

    /// Panics when `t` is outside `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma2(&self, t: usize) -> f64 {
        match self.variance {
            VarianceMode::Beta => self.beta(t),
            VarianceMode::Posterior => self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)),
            VarianceMode::Zero => 0.0,
        }
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// x_t = √ᾱ_t x0 + √(1-ᾱ_t) ε
pub fn q_sample<T: Scalar>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, schedule: &NoiseSchedule) -> Result<Tensor<T>> {
    schedule.check(t)?;
    same_shape("q_sample", x0, eps)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// x̂₀ = (x_t - √(1-ᾱ_t) ε̂) / √ᾱ_t
pub fn predict_x0<T: Scalar>(x_t: &Tensor<T>, eps_hat: &Tensor<T>, t: usize, schedule: &NoiseSchedule) -> Result<Tensor<T>> {
    schedule.check(t)?;
    same_shape("predict_x0", x_t, eps_hat)?;
    let ab = schedule.alpha_bar(t);
    if ab < ALPHA_BAR_FLOOR {
        return Err(Error::Numeric(format!("alpha_bar at t={t} is {ab:e}, below {ALPHA_BAR_FLOOR:e}")));
    }
    let (b, inv) = (T::of((1.0 - ab).sqrt()), T::of(1.0 / ab.sqrt()));
    x_t.zip_map(eps_hat, |x, e| (x - b * e) * inv)
}

/// μ_θ = (x_t - β_t/√(1-ᾱ_t) ε̂)/√α_t
pub fn reverse_mean<T: Scalar>(x_t: &Tensor<T>, t: usize, eps_hat: &Tensor<T>, schedule: &NoiseSchedule) -> Result<Tensor<T>> {
    schedule.check(t)?;
    same_shape("reverse_step", x_t, eps_hat)?;
    let c = T::of(schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt());
    let inv = T::of(1.0 / schedule.alpha(t).sqrt());
    x_t.zip_map(eps_hat, |x, e| (x - c * e) * inv)
}

/// One ancestral step: μ_θ plus σ_t z, with no noise at `t = 1`.
pub fn reverse_step<T: Scalar, R: Rng + ?Sized>(
    x_t: &Tensor<T>,
    t: usize,
    eps_hat: &Tensor<T>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let mut mean = reverse_mean(x_t, t, eps_hat, schedule)?;
    if t > 1 {
        let sigma = T::of(schedule.sigma2(t).sqrt());
        let z = Tensor::<T>::randn(mean.shape().to_vec(), rng);
        for (m, z) in mean.data_mut().iter_mut().zip(z.data()) {
            *m = *m + sigma * *z;
        }
    }
    Ok(mean)
}

/// Predicts the noise in `x_t` at step `t`.
pub trait Denoiser<T: Scalar> {
    type Condition: ?Sized;

    fn predict_eps(&self, x_t: &Tensor<T>, t: usize, condition: &Self::Condition) -> Result<Tensor<T>>;
}

/// Adapts a closure into an unconditioned denoiser.
pub struct FnDenoiser<F>(pub F);

impl<T: Scalar, F: Fn(&Tensor<T>, usize) -> Result<Tensor<T>>> Denoiser<T> for FnDenoiser<F> {
    type Condition = ();

    fn predict_eps(&self, x_t: &Tensor<T>, t: usize, _: &()) -> Result<Tensor<T>> {
        (self.0)(x_t, t)
    }
}

/// Maps between raw sequences and normalized `N x (J*3)` tensors.
#[derive(Debug, Clone)]
pub struct MotionCodec {
    pub stats: DatasetStats,
    pub fps: f64,
    pub skeleton: Arc<SkeletonSpec>,
}

impl MotionCodec {
    pub fn channels(&self) -> usize {
        self.skeleton.joint_count() * 3
    }

    pub fn encode<T: Scalar>(&self, seq: &GestureSequence) -> Result<Tensor<T>> {
        self.stats.normalize::<T>(seq)?.reshape([seq.frames(), seq.channels()])
    }

    pub fn decode<T: Scalar>(&self, x: &Tensor<T>) -> Result<GestureSequence> {
        let values = self.stats.denormalize_values(&x.to_f64_vec())?;
        let frames = values.len() / self.channels();
        GestureSequence::new(values, frames, self.fps, self.skeleton.clone())
    }
}

/// Elements pinned to a reference during sampling.
struct Pin<'a> {
    reference: &'a GestureSequence,
    /// Per element, true = preserve.
    keep: Vec<bool>,
}

fn run_chain<T, D, R>(
    denoiser: &D,
    condition: &D::Condition,
    frames: usize,
    codec: &MotionCodec,
    schedule: &NoiseSchedule,
    rng: &mut R,
    pin: Option<Pin<'_>>,
    observer: &mut dyn FnMut(usize, &Tensor<T>),
) -> Result<GestureSequence>
where
    T: Scalar,
    D: Denoiser<T> + ?Sized,
    R: Rng + ?Sized,
{
    let c = codec.channels();
    let shape = vec![frames, c];
    let pin = pin.filter(|p| p.keep.iter().any(|&k| k));
    let reference = match &pin {
        Some(p) => Some(codec.encode::<T>(p.reference)?),
        None => None,
    };
    let mut x = Tensor::<T>::randn(shape.clone(), rng);
    observer(schedule.steps(), &x);
    for t in (1..=schedule.steps()).rev() {
        if let (Some(p), Some(r)) = (&pin, &reference) {
            let z = Tensor::<T>::randn(shape.clone(), rng);
            let noised = q_sample(r, t, &z, schedule)?;
            let xd = x.data_mut();
            for (i, &k) in p.keep.iter().enumerate() {
                if k {
                    xd[i] = noised.data()[i];
                }
            }
        }
        let eps = denoiser.predict_eps(&x, t, condition)?;
        if eps.shape() != x.shape() {
            return Err(Error::contract(format!(
                "denoiser returned shape {:?} for input shape {:?}",
                eps.shape(),
                x.shape()
            )));
        }
        x = reverse_step(&x, t, &eps, schedule, rng)?;
        if !x.all_finite() {
            return Err(Error::Numeric(format!("sampler produced non-finite values at t={t}")));
        }
        observer(t - 1, &x);
    }
    let mut out = codec.decode(&x)?;
    if let Some(p) = pin {
        let raw = p.reference.values().to_vec();
        let mut values = out.values().to_vec();
        for (i, &k) in p.keep.iter().enumerate() {
            if k {
                values[i] = raw[i];
            }
        }
        out = GestureSequence::new(values, frames, codec.fps, codec.skeleton.clone())?;
    }
    Ok(out)
}

/// Unconditional-in-motion generation of `frames` frames from x_T ~ N(0, I).
pub fn sample<T, D, R>(
    denoiser: &D,
    condition: &D::Condition,
    frames: usize,
    codec: &MotionCodec,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<GestureSequence>
where
    T: Scalar,
    D: Denoiser<T> + ?Sized,
    R: Rng + ?Sized,
{
    run_chain(denoiser, condition, frames, codec, schedule, rng, None, &mut |_, _| {})
}

/// Like [`sample`], reporting every intermediate `x_t` (normalized) to `observer`.
pub fn sample_traced<T, D, R>(
    denoiser: &D,
    condition: &D::Condition,
    frames: usize,
    codec: &MotionCodec,
    schedule: &NoiseSchedule,
    rng: &mut R,
    observer: &mut dyn FnMut(usize, &Tensor<T>),
) -> Result<GestureSequence>
where
    T: Scalar,
    D: Denoiser<T> + ?Sized,
    R: Rng + ?Sized,
{
    run_chain(denoiser, condition, frames, codec, schedule, rng, None, observer)
}

/// Regenerates joints where `joint_mask` is true and keeps the rest of
/// `reference`. Without a reference the mask must be all true.
pub fn inpaint_sample<T, D, R>(
    denoiser: &D,
    condition: &D::Condition,
    reference: Option<&GestureSequence>,
    frames: usize,
    joint_mask: &[bool],
    codec: &MotionCodec,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<GestureSequence>
where
    T: Scalar,
    D: Denoiser<T> + ?Sized,
    R: Rng + ?Sized,
{
    let j = codec.skeleton.joint_count();
    if joint_mask.len() != j {
        return Err(Error::argument(format!("joint mask has {} entries, skeleton has {j} joints", joint_mask.len())));
    }
    let Some(reference) = reference else {
        if joint_mask.iter().all(|&m| m) {
            return sample(denoiser, condition, frames, codec, schedule, rng);
        }
        return Err(Error::argument("preserving joints requires a reference motion"));
    };
    if reference.frames() != frames || reference.joint_count() != j {
        return Err(Error::argument(format!(
            "reference is {}x{}, expected {frames}x{j}",
            reference.frames(),
            reference.joint_count()
        )));
    }
    let keep = (0..frames * j * 3).map(|i| !joint_mask[(i / 3) % j]).collect();
    let pin = Pin { reference, keep };
    run_chain(denoiser, condition, frames, codec, schedule, rng, Some(pin), &mut |_, _| {})
}

/// Generates `frames` frames whose first `seed_frames` frames are pinned to
/// the start of `seed`. With `seed_frames == 0` this is [`sample`].
pub fn seed_pose_sample<T, D, R>(
    denoiser: &D,
    condition: &D::Condition,
    seed: &GestureSequence,
    seed_frames: usize,
    frames: usize,
    codec: &MotionCodec,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<GestureSequence>
where
    T: Scalar,
    D: Denoiser<T> + ?Sized,
    R: Rng + ?Sized,
{
    let k = seed_frames;
    if k > seed.frames() {
        return Err(Error::argument(format!("{k} seed frames requested, seed pose has {}", seed.frames())));
    }
    if k > frames {
        return Err(Error::argument(format!("seed has {k} frames, output only {frames}")));
    }
    if seed.joint_count() != codec.skeleton.joint_count() {
        return Err(Error::argument(format!(
            "seed has {} joints, skeleton has {}",
            seed.joint_count(),
            codec.skeleton.joint_count()
        )));
    }
    let c = codec.channels();
    // Pad the seed to full length; padded frames are never read.
    let mut values = seed.values()[..k * c].to_vec();
    values.extend(codec.stats.mean.iter().cycle().take((frames - k) * c));
    let reference = GestureSequence::new(values, frames, codec.fps, codec.skeleton.clone())?;
    let keep = (0..frames * c).map(|i| i / c < k).collect();
    let pin = Pin {
        reference: &reference,
        keep,
    };
    run_chain(denoiser, condition, frames, codec, schedule, rng, Some(pin), &mut |_, _| {})
}
