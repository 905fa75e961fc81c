//! Losses, clip preparation and the resumable training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSample;
use crate::diffusion::{NoiseSchedule, ALPHA_BAR_FLOOR};
use crate::error::{Error, Result};
use crate::jcformer::{argmax, EmotionChoice, Jcformer};
use crate::motion::{random_proportional_mask, window_offsets, DatasetStats, MaskPlacement};
use crate::numeric::{Adam, AdamConfig, Graph, Scalar, Tensor, Var};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_rec: f64,
    /// Include the emotion cross-entropy term.
    pub ce: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_rec: 1.0, ce: true }
    }
}

/// Per-step loss components (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub mse: f64,
    pub rec: f64,
    pub ce: f64,
}

/// `L_mse + λ_rec L_rec + L_ce`, with `L_ce` dropped when disabled.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    if weights.lambda_rec < 0.0 {
        return Err(Error::argument(format!("lambda_rec must be non-negative, got {}", weights.lambda_rec)));
    }
    for (name, v) in [("mse", parts.mse), ("rec", parts.rec), ("ce", parts.ce)] {
        if !v.is_finite() {
            return Err(Error::Training(format!("loss part {name} is {v}")));
        }
    }
    let ce = if weights.ce { parts.ce } else { 0.0 };
    Ok(parts.mse + weights.lambda_rec * parts.rec + ce)
}

fn kept_rows(frame_mask: Option<&[bool]>, n: usize) -> Result<Option<Vec<usize>>> {
    let Some(mask) = frame_mask else { return Ok(None) };
    if mask.len() != n {
        return Err(Error::argument(format!("frame mask has {} entries for {n} frames", mask.len())));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::argument("every frame is masked"));
    }
    Ok((rows.len() < n).then_some(rows))
}

fn masked_diff<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, frame_mask: Option<&[bool]>) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Dimension {
            op: "loss",
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    let d = g.sub(a, b)?;
    match kept_rows(frame_mask, g.shape(d)[0])? {
        Some(rows) => g.gather_rows(d, &rows),
        None => Ok(d),
    }
}

/// Mean squared error over unmasked frames (`true` = masked).
pub fn mse_var<T: Scalar>(g: &mut Graph<T>, eps: Var, eps_hat: Var, frame_mask: Option<&[bool]>) -> Result<Var> {
    let d = masked_diff(g, eps_hat, eps, frame_mask)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// Mean over unmasked frames of the per-frame L2 norm of `x0_hat - x0`.
pub fn rec_var<T: Scalar>(g: &mut Graph<T>, x0: Var, x0_hat: Var, frame_mask: Option<&[bool]>) -> Result<Var> {
    let d = masked_diff(g, x0_hat, x0, frame_mask)?;
    let norms = g.row_norms(d);
    Ok(g.mean(norms))
}

pub fn ce_var<T: Scalar>(g: &mut Graph<T>, logits: Var, label: usize) -> Result<Var> {
    let c = g.value(logits).len();
    if label >= c {
        return Err(Error::argument(format!("label {label} out of range [0, {c})")));
    }
    g.cross_entropy(logits, label)
}

/// x̂₀ recorded on the graph so L_rec back-propagates into ε̂.
pub fn predict_x0_var<T: Scalar>(g: &mut Graph<T>, x_t: Var, eps_hat: Var, t: usize, schedule: &NoiseSchedule) -> Result<Var> {
    let ab = schedule.alpha_bar(t);
    if ab < ALPHA_BAR_FLOOR {
        return Err(Error::Numeric(format!("alpha_bar at t={t} is {ab:e}, below {ALPHA_BAR_FLOOR:e}")));
    }
    let noise = g.scale(eps_hat, T::of((1.0 - ab).sqrt()));
    let d = g.sub(x_t, noise)?;
    Ok(g.scale(d, T::of(1.0 / ab.sqrt())))
}

fn eval_scalar<T: Scalar>(build: impl FnOnce(&mut Graph<T>) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let v = build(&mut g)?;
    Ok(g.value(v).data()[0].as_f64())
}

pub fn loss_mse<T: Scalar>(eps: &Tensor<T>, eps_hat: &Tensor<T>, frame_mask: Option<&[bool]>) -> Result<f64> {
    eval_scalar(|g| {
        let (a, b) = (g.constant(eps.clone()), g.constant(eps_hat.clone()));
        mse_var(g, a, b, frame_mask)
    })
}

pub fn loss_rec<T: Scalar>(x0: &Tensor<T>, x0_hat: &Tensor<T>, frame_mask: Option<&[bool]>) -> Result<f64> {
    eval_scalar(|g| {
        let (a, b) = (g.constant(x0.clone()), g.constant(x0_hat.clone()));
        rec_var(g, a, b, frame_mask)
    })
}

pub fn loss_ce(logits: &[f64], label: usize) -> Result<f64> {
    eval_scalar::<f64>(|g| {
        let l = g.constant(Tensor::from_vec([1, logits.len()], logits.to_vec())?);
        ce_var(g, l, label)
    })
}

/// How training clips are cut and masked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub frames: usize,
    pub stride: usize,
    /// Proportional frame-mask ratio range; `None` disables masking.
    pub mask_ratio: Option<(f64, f64)>,
    pub mask_placement: MaskPlacement,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            frames: crate::motion::CLIP_FRAMES,
            stride: crate::motion::CLIP_STRIDE,
            mask_ratio: None,
            mask_placement: MaskPlacement::Suffix,
        }
    }
}

impl WindowConfig {
    /// 150-frame windows with a 50-frame step and proportional masking.
    pub fn variable_length() -> Self {
        WindowConfig {
            frames: 150,
            stride: 50,
            mask_ratio: Some((0.0, 0.5)),
            mask_placement: MaskPlacement::Suffix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub adam: AdamConfig,
    /// Linear warm-up length in steps.
    pub warmup_steps: u64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub loss: LossWeights,
    pub window: WindowConfig,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            steps: 2000,
            adam: AdamConfig {
                lr: 5e-4,
                ..AdamConfig::default()
            },
            warmup_steps: 100,
            grad_clip: 1.0,
            loss: LossWeights::default(),
            window: WindowConfig::default(),
            seed: 0,
            checkpoint_every: 500,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.loss.lambda_rec < 0.0 || !self.loss.lambda_rec.is_finite() {
            return Err(Error::Config("train.loss.lambda_rec must be finite and non-negative".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("train.adam.lr must be positive".into()));
        }
        if self.window.frames == 0 || self.window.stride == 0 {
            return Err(Error::Config("train.window frames and stride must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.adam.lr
        } else {
            self.adam.lr * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

/// One normalized training window with time-aligned raw audio.
#[derive(Debug, Clone)]
pub struct TrainClip<T> {
    pub x0: Tensor<T>,
    pub audio: Tensor<T>,
    pub speaker: usize,
    pub emotion: usize,
}

impl<T: Scalar> TrainClip<T> {
    pub fn frames(&self) -> usize {
        self.x0.shape()[0]
    }

    fn head(&self, n: usize) -> Result<Self> {
        let take = |t: &Tensor<T>| {
            let c = t.shape()[1];
            Tensor::from_vec([n, c], t.data()[..n * c].to_vec())
        };
        Ok(TrainClip {
            x0: take(&self.x0)?,
            audio: take(&self.audio)?,
            speaker: self.speaker,
            emotion: self.emotion,
        })
    }
}

/// Normalizes motion, aligns audio to the gesture frame rate and cuts windows.
/// Sequences shorter than one window are used whole.
pub fn prepare_clips<T: Scalar>(samples: &[CorpusSample], stats: &DatasetStats, window: &WindowConfig) -> Result<Vec<TrainClip<T>>> {
    let mut clips = Vec::new();
    for s in samples {
        let n = s.motion.frames();
        let c = s.motion.channels();
        let x = stats.normalize::<T>(&s.motion)?.reshape([n, c])?;
        let audio = s.audio.resample(n, s.motion.fps())?;
        let d = audio.dim();
        let a: Tensor<T> = audio.to_tensor();
        let plan = window_offsets(n, window.frames, window.stride)?;
        let (offsets, len) = if plan.too_short { (vec![0], n) } else { (plan.offsets, window.frames) };
        for o in offsets {
            clips.push(TrainClip {
                x0: Tensor::from_vec([len, c], x.data()[o * c..(o + len) * c].to_vec())?,
                audio: Tensor::from_vec([len, d], a.data()[o * d..(o + len) * d].to_vec())?,
                speaker: s.speaker,
                emotion: s.emotion,
            });
        }
    }
    Ok(clips)
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub mse: f64,
    pub rec: f64,
    pub ce: f64,
    pub total: f64,
}

pub const LOSS_LOG_HEADER: &str = "step,L_mse,L_rec,L_ce,total";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{:e},{:e},{:e},{:e}", self.step, self.mse, self.rec, self.ce, self.total)
    }
}

pub fn loss_log_csv(records: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_LOG_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Model, optimizer and step counter; everything needed to resume.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Jcformer<T>,
    pub optimizer: Adam<T>,
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub step: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Jcformer<T>, config: TrainConfig, schedule: NoiseSchedule) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(config.adam, model.params().tensors());
        Ok(Trainer {
            model,
            optimizer,
            config,
            schedule,
            step: 0,
        })
    }

    fn use_ce(&self) -> bool {
        self.config.loss.ce && self.model.config().emotion
    }

    /// Runs one optimization step on a batch drawn from `clips`.
    pub fn train_step(&mut self, clips: &[TrainClip<T>]) -> Result<LossRecord> {
        if clips.is_empty() {
            return Err(Error::argument("training needs at least one clip"));
        }
        let mut rng = stream(self.config.seed, Purpose::TrainStep, self.step);
        let bs = self.config.batch_size;
        let mut g = Graph::new();
        let p = self.model.params().bind(&mut g, true);
        let mut totals = Vec::with_capacity(bs);
        let mut parts = LossParts::default();
        let use_ce = self.use_ce();
        for _ in 0..bs {
            let clip = &clips[rng.random_range(0..clips.len())];
            let t = rng.random_range(1..=self.schedule.steps());
            let mut mask = match self.config.window.mask_ratio {
                Some(range) => Some(random_proportional_mask(clip.frames(), range, self.config.window.mask_placement, &mut rng)?),
                None => None,
            };
            let clip = match (&mask, self.config.window.mask_placement) {
                (Some(m), MaskPlacement::Suffix) => {
                    let keep = m.iter().filter(|&&x| !x).count().max(1);
                    mask = None;
                    clip.head(keep)?
                }
                _ => clip.clone(),
            };
            let eps_t = Tensor::<T>::randn(clip.x0.shape().to_vec(), &mut rng);
            let x_t_t = crate::diffusion::q_sample(&clip.x0, t, &eps_t, &self.schedule)?;
            let x0 = g.constant(clip.x0.clone());
            let eps = g.constant(eps_t);
            let x_t = g.constant(x_t_t);
            let audio = g.constant(clip.audio.clone());
            let f = self
                .model
                .forward(&mut g, &p, x_t, t, audio, clip.speaker, EmotionChoice::Label(clip.emotion))?;
            let mse = mse_var(&mut g, eps, f.eps, mask.as_deref())?;
            let mut total = mse;
            parts.mse += g.value(mse).data()[0].as_f64();
            if self.config.loss.lambda_rec > 0.0 {
                let x0_hat = predict_x0_var(&mut g, x_t, f.eps, t, &self.schedule)?;
                let rec = rec_var(&mut g, x0, x0_hat, mask.as_deref())?;
                parts.rec += g.value(rec).data()[0].as_f64();
                let w = g.scale(rec, T::of(self.config.loss.lambda_rec));
                total = g.add(total, w)?;
            }
            if let (true, Some(logits)) = (use_ce, f.logits) {
                let ce = ce_var(&mut g, logits, clip.emotion)?;
                parts.ce += g.value(ce).data()[0].as_f64();
                total = g.add(total, ce)?;
            }
            totals.push(total);
        }
        let all = g.concat_cols(&totals)?;
        let loss = g.mean(all);
        let inv = 1.0 / bs as f64;
        let parts = LossParts {
            mse: parts.mse * inv,
            rec: parts.rec * inv,
            ce: parts.ce * inv,
        };
        let weights = LossWeights {
            lambda_rec: self.config.loss.lambda_rec,
            ce: use_ce,
        };
        let total = total_loss(&parts, &weights)?;
        let loss_value = g.value(loss).data()[0].as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Training(format!("loss diverged at step {}: {loss_value}", self.step)));
        }
        let grads = g.backward(loss)?;
        let mut grads: Vec<Tensor<T>> = p.iter().map(|&v| grads.tensor(v)).collect();
        if self.config.grad_clip > 0.0 {
            let norm = grads
                .iter()
                .flat_map(|t| t.data().iter())
                .map(|v| v.as_f64() * v.as_f64())
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() {
                return Err(Error::Training(format!("gradient norm diverged at step {}", self.step)));
            }
            if norm > self.config.grad_clip {
                let s = T::of(self.config.grad_clip / norm);
                for t in &mut grads {
                    t.data_mut().iter_mut().for_each(|v| *v = *v * s);
                }
            }
        }
        self.optimizer.config.lr = self.config.learning_rate(self.step);
        let names = self.model.params().names().to_vec();
        self.optimizer.step(self.model.params_mut().tensors_mut(), &grads, &names)?;
        let record = LossRecord {
            step: self.step,
            mse: parts.mse,
            rec: parts.rec,
            ce: parts.ce,
            total,
        };
        self.step += 1;
        Ok(record)
    }

    /// Trains until `config.steps`, calling `on_step` after every step
    /// (e.g. for logging and periodic checkpoints).
    pub fn train(
        &mut self,
        clips: &[TrainClip<T>],
        mut on_step: impl FnMut(&Self, &LossRecord) -> Result<()>,
    ) -> Result<Vec<LossRecord>> {
        let mut log = Vec::new();
        while self.step < self.config.steps {
            let r = self.train_step(clips)?;
            on_step(self, &r)?;
            log.push(r);
        }
        Ok(log)
    }
}

/// Held-out denoising loss on a fixed timestep grid and emotion accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationSnapshot {
    pub mse: f64,
    pub emotion_accuracy: Option<f64>,
    pub clips: usize,
}

pub fn validate<T: Scalar>(model: &Jcformer<T>, schedule: &NoiseSchedule, clips: &[TrainClip<T>], seed: u64) -> Result<ValidationSnapshot> {
    if clips.is_empty() {
        return Err(Error::argument("validation split is empty"));
    }
    let mut rng = stream(seed, Purpose::Evaluation, 0);
    let steps = schedule.steps();
    let grid = [1, steps / 4, steps / 2, 3 * steps / 4, steps].map(|t| t.max(1));
    let (mut mse, mut correct, mut count) = (0.0, 0, 0);
    for clip in clips {
        for &t in &grid {
            let eps = Tensor::<T>::randn(clip.x0.shape().to_vec(), &mut rng);
            let x_t = crate::diffusion::q_sample(&clip.x0, t, &eps, schedule)?;
            let cond = crate::jcformer::DenoiseCondition {
                audio: clip.audio.clone(),
                speaker: clip.speaker,
                emotion: EmotionChoice::Label(clip.emotion),
            };
            let eps_hat = model.denoise(&x_t, t, &cond)?;
            mse += loss_mse(&eps, &eps_hat, None)?;
            count += 1;
        }
        if model.config().emotion {
            let head = model.emotion_head(&clip.audio, EmotionChoice::Predicted)?;
            correct += usize::from(argmax(&head.logits) == clip.emotion);
        }
    }
    Ok(ValidationSnapshot {
        mse: mse / count as f64,
        emotion_accuracy: model.config().emotion.then(|| correct as f64 / clips.len() as f64),
        clips: clips.len(),
    })
}

/// Exponential moving average used to judge loss trends.
pub fn smoothed(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(a) => alpha * v + (1.0 - alpha) * a,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_is_weighted_sum() {
        let parts = LossParts { mse: 1.0, rec: 2.0, ce: 3.0 };
        assert_eq!(total_loss(&parts, &LossWeights::default()).unwrap(), 6.0);
        let no_rec = LossWeights { lambda_rec: 0.0, ce: true };
        assert_eq!(total_loss(&parts, &no_rec).unwrap(), 4.0);
        let no_ce = LossWeights { lambda_rec: 1.0, ce: false };
        assert_eq!(total_loss(&parts, &no_ce).unwrap(), 3.0);
        let bad = LossParts { mse: f64::NAN, ..parts };
        assert!(matches!(total_loss(&bad, &no_ce), Err(Error::Training(_))));
    }

    #[test]
    fn warmup_ramps_linearly() {
        let c = TrainConfig {
            warmup_steps: 10,
            ..TrainConfig::default()
        };
        assert!((c.learning_rate(0) - c.adam.lr / 10.0).abs() < 1e-15);
        assert_eq!(c.learning_rate(10), c.adam.lr);
    }
}
