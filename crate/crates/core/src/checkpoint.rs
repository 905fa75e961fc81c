//! Model checkpoints: parameters, optimizer state, configuration and
//! normalization statistics in one container.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::{self, NamedTensor};
use crate::diffusion::{DiffusionConfig, MotionCodec};
use crate::error::{Error, Result};
use crate::jcformer::{Jcformer, ModelConfig};
use crate::motion::{DatasetStats, SkeletonSpec};
use crate::numeric::{Adam, Scalar, Tensor};
use crate::training::{TrainConfig, Trainer};

pub const MAGIC: &str = "COGESTURE-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub stats: DatasetStats,
    pub fps: f64,
    /// Present when the checkpoint can resume training.
    pub train: Option<TrainConfig>,
    pub step: u64,
    pub adam_step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<NamedTensor>,
    /// Adam first and second moments, in parameter order.
    pub moments: Option<(Vec<NamedTensor>, Vec<NamedTensor>)>,
}

fn named<T: Scalar>(names: &[String], tensors: &[Tensor<T>], prefix: &str) -> Vec<NamedTensor> {
    names
        .iter()
        .zip(tensors)
        .map(|(n, t)| NamedTensor {
            name: format!("{prefix}{n}"),
            shape: t.shape().to_vec(),
            data: t.to_f64_vec(),
        })
        .collect()
}

fn to_tensors<T: Scalar>(items: &[NamedTensor]) -> Result<Vec<Tensor<T>>> {
    items.iter().map(|t| Tensor::from_f64(t.shape.clone(), &t.data)).collect()
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Jcformer<T>, diffusion: &DiffusionConfig, stats: &DatasetStats, fps: f64) -> Self {
        let p = model.params();
        Checkpoint {
            meta: CheckpointMeta {
                model: model.config().clone(),
                diffusion: diffusion.clone(),
                stats: stats.clone(),
                fps,
                train: None,
                step: 0,
                adam_step: 0,
            },
            params: named(p.names(), p.tensors(), ""),
            moments: None,
        }
    }

    pub fn from_trainer<T: Scalar>(trainer: &Trainer<T>, diffusion: &DiffusionConfig, stats: &DatasetStats, fps: f64) -> Self {
        let mut c = Self::from_model(&trainer.model, diffusion, stats, fps);
        let names = trainer.model.params().names();
        c.meta.train = Some(trainer.config.clone());
        c.meta.step = trainer.step;
        c.meta.adam_step = trainer.optimizer.step;
        c.moments = Some((
            named(names, &trainer.optimizer.first, "adam.m/"),
            named(names, &trainer.optimizer.second, "adam.v/"),
        ));
        c
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut all = self.params.clone();
        if let Some((m, v)) = &self.moments {
            all.extend(m.iter().cloned());
            all.extend(v.iter().cloned());
        }
        container::encode(MAGIC, &self.meta, &all)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, mut all): (CheckpointMeta, Vec<NamedTensor>) = container::decode(MAGIC, bytes)?;
        let split = all.iter().position(|t| t.name.starts_with("adam.")).unwrap_or(all.len());
        let rest = all.split_off(split);
        let moments = if rest.is_empty() {
            None
        } else {
            if rest.len() != 2 * all.len() {
                return Err(Error::Config(format!(
                    "checkpoint has {} parameters but {} optimizer moments",
                    all.len(),
                    rest.len()
                )));
            }
            let (m, v) = rest.split_at(all.len());
            Some((m.to_vec(), v.to_vec()))
        };
        Ok(Checkpoint {
            meta,
            params: all,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }

    /// Errors unless the stored model configuration equals `expected`.
    pub fn check_model(&self, expected: &ModelConfig) -> Result<()> {
        if &self.meta.model != expected {
            let a = serde_json::to_string(&self.meta.model).unwrap_or_default();
            let b = serde_json::to_string(expected).unwrap_or_default();
            return Err(Error::Config(format!(
                "checkpoint model configuration {a} does not match requested {b}"
            )));
        }
        Ok(())
    }

    pub fn model<T: Scalar>(&self) -> Result<Jcformer<T>> {
        let tensors = to_tensors::<T>(&self.params)?;
        let named = self.params.iter().map(|t| t.name.clone()).zip(tensors).collect();
        Jcformer::from_params(self.meta.model.clone(), named)
    }

    /// Restores model, optimizer and step counter for resuming.
    pub fn trainer<T: Scalar>(&self) -> Result<Trainer<T>> {
        let train = self
            .meta
            .train
            .clone()
            .ok_or_else(|| Error::Config("checkpoint has no training state".into()))?;
        let (m, v) = self
            .moments
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint has no optimizer state".into()))?;
        let model = self.model::<T>()?;
        let schedule = self.meta.diffusion.build()?;
        let mut trainer = Trainer::new(model, train.clone(), schedule)?;
        trainer.optimizer = Adam {
            config: train.adam,
            first: to_tensors(m)?,
            second: to_tensors(v)?,
            step: self.meta.adam_step,
        };
        trainer.step = self.meta.step;
        Ok(trainer)
    }

    pub fn codec(&self) -> Result<MotionCodec> {
        Ok(MotionCodec {
            stats: self.meta.stats.clone(),
            fps: self.meta.fps,
            skeleton: Arc::new(SkeletonSpec::for_joint_count(self.meta.model.joints)?),
        })
    }
}
