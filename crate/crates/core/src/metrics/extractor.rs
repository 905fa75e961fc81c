use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container::{self, NamedTensor};
use crate::error::{Error, Result};
use crate::jcformer::layers::ParamStore;
use crate::motion::{DatasetStats, GestureSequence};
use crate::numeric::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::rng::{stream, Purpose};

const MAGIC: &str = "COGESTURE-EXTRACTOR 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub clip_frames: usize,
    pub hidden: usize,
    pub latent: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Reconstruction MSE (normalized units) regarded as converged.
    pub target_mse: f64,
    pub min_clips: usize,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            clip_frames: crate::motion::CLIP_FRAMES,
            hidden: 128,
            latent: 32,
            steps: 1500,
            batch_size: 32,
            lr: 1e-3,
            target_mse: 0.1,
            min_clips: 100,
            seed: 0,
        }
    }
}

/// Outcome of extractor training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorReport {
    pub final_mse: f64,
    pub converged: bool,
    pub steps: usize,
}

/// Autoencoder over flattened, normalized fixed-length clips; only the
/// encoder is used after training.
#[derive(Debug, Clone)]
pub struct GestureFeatureExtractor {
    config: ExtractorConfig,
    stats: DatasetStats,
    params: ParamStore<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ExtractorConfig,
    stats: DatasetStats,
}

const ENC1: usize = 0;
const ENC2: usize = 2;
const DEC1: usize = 4;
const DEC2: usize = 6;

impl GestureFeatureExtractor {
    fn init(config: ExtractorConfig, stats: DatasetStats) -> Self {
        let input = config.clip_frames * stats.channels();
        let mut rng = stream(config.seed, Purpose::Extractor, 0);
        let mut params = ParamStore::default();
        for (name, din, dout) in [
            ("enc1", input, config.hidden),
            ("enc2", config.hidden, config.latent),
            ("dec1", config.latent, config.hidden),
            ("dec2", config.hidden, input),
        ] {
            let bound = (6.0 / (din + dout) as f64).sqrt();
            params.add(format!("{name}.w"), Tensor::uniform([din, dout], bound, &mut rng));
            params.add(format!("{name}.b"), Tensor::zeros([1, dout]));
        }
        GestureFeatureExtractor { config, stats, params }
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent
    }

    fn flatten(&self, clips: &[&GestureSequence]) -> Result<Tensor<f64>> {
        let width = self.config.clip_frames * self.stats.channels();
        let mut data = Vec::with_capacity(clips.len() * width);
        for c in clips {
            if c.frames() != self.config.clip_frames {
                return Err(Error::argument(format!(
                    "extractor expects {}-frame clips, got {}",
                    self.config.clip_frames,
                    c.frames()
                )));
            }
            data.extend(self.stats.normalize::<f64>(c)?.into_vec());
        }
        Tensor::from_vec([clips.len(), width], data)
    }

    fn layer(g: &mut Graph<f64>, p: &[Var], i: usize, x: Var, act: bool) -> Result<Var> {
        let y = g.matmul(x, p[i])?;
        let y = g.add_row(y, p[i + 1])?;
        Ok(if act { g.gelu(y) } else { y })
    }

    fn encode_var(g: &mut Graph<f64>, p: &[Var], x: Var) -> Result<Var> {
        let h = Self::layer(g, p, ENC1, x, true)?;
        Self::layer(g, p, ENC2, h, false)
    }

    fn reconstruct_var(g: &mut Graph<f64>, p: &[Var], x: Var) -> Result<Var> {
        let z = Self::encode_var(g, p, x)?;
        let h = Self::layer(g, p, DEC1, z, true)?;
        Self::layer(g, p, DEC2, h, false)
    }

    /// Trains on real clips only; deterministic in `config.seed`.
    pub fn train(clips: &[GestureSequence], stats: DatasetStats, config: ExtractorConfig) -> Result<(Self, ExtractorReport)> {
        if clips.len() < config.min_clips {
            return Err(Error::argument(format!(
                "extractor needs at least {} clips, got {}",
                config.min_clips,
                clips.len()
            )));
        }
        let mut model = Self::init(config.clone(), stats);
        let refs: Vec<&GestureSequence> = clips.iter().collect();
        let data = model.flatten(&refs)?;
        let width = data.shape()[1];
        let mut adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            model.params.tensors(),
        );
        let mut rng = stream(config.seed, Purpose::Extractor, 1);
        let mut order: Vec<usize> = (0..clips.len()).collect();
        let mut cursor = order.len();
        let names = model.params.names().to_vec();
        for _ in 0..config.steps {
            let mut rows = Vec::with_capacity(config.batch_size);
            while rows.len() < config.batch_size.min(clips.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                rows.push(order[cursor]);
                cursor += 1;
            }
            let mut batch = Vec::with_capacity(rows.len() * width);
            for &r in &rows {
                batch.extend_from_slice(&data.data()[r * width..(r + 1) * width]);
            }
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let x = g.constant(Tensor::from_vec([rows.len(), width], batch)?);
            let y = Self::reconstruct_var(&mut g, &p, x)?;
            let d = g.sub(y, x)?;
            let sq = g.mul(d, d)?;
            let loss = g.mean(sq);
            if !g.value(loss).data()[0].is_finite() {
                return Err(Error::Training("extractor loss diverged".into()));
            }
            let grads = g.backward(loss)?;
            let grads: Vec<_> = p.iter().map(|&v| grads.tensor(v)).collect();
            adam.step(model.params.tensors_mut(), &grads, &names)?;
        }
        let final_mse = model.reconstruction_mse(clips)?;
        let converged = final_mse <= config.target_mse;
        if !converged {
            log::warn!(
                "feature extractor did not reach target MSE {} within {} steps (final {final_mse:.4})",
                config.target_mse,
                config.steps
            );
        }
        Ok((
            model,
            ExtractorReport {
                final_mse,
                converged,
                steps: config.steps,
            },
        ))
    }

    /// Mean squared reconstruction error in normalized units.
    pub fn reconstruction_mse(&self, clips: &[GestureSequence]) -> Result<f64> {
        let refs: Vec<&GestureSequence> = clips.iter().collect();
        let x = self.flatten(&refs)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x);
        let y = Self::reconstruct_var(&mut g, &p, x)?;
        let d = g.sub(y, x)?;
        let sq = g.mul(d, d)?;
        let loss = g.mean(sq);
        Ok(g.value(loss).data()[0])
    }

    /// One latent vector per clip.
    pub fn encode(&self, clips: &[GestureSequence]) -> Result<Vec<Vec<f64>>> {
        if clips.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&GestureSequence> = clips.iter().collect();
        let x = self.flatten(&refs)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x);
        let z = Self::encode_var(&mut g, &p, x)?;
        let l = self.config.latent;
        Ok(g.value(z).data().chunks(l).map(|c| c.to_vec()).collect())
    }

    /// Cuts `seq` into consecutive non-overlapping clips of the configured length.
    pub fn clips_of(&self, seq: &GestureSequence) -> Result<Vec<GestureSequence>> {
        let n = self.config.clip_frames;
        (0..seq.frames() / n).map(|i| seq.slice(i * n, n)).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors: Vec<NamedTensor> = self
            .params
            .names()
            .iter()
            .zip(self.params.tensors())
            .map(|(n, t)| NamedTensor {
                name: n.clone(),
                shape: t.shape().to_vec(),
                data: t.to_f64_vec(),
            })
            .collect();
        container::encode(
            MAGIC,
            &Meta {
                config: self.config.clone(),
                stats: self.stats.clone(),
            },
            &tensors,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors): (Meta, _) = container::decode(MAGIC, bytes)?;
        let mut model = Self::init(meta.config, meta.stats);
        if tensors.len() != model.params.len() {
            return Err(Error::Config("extractor file does not match its configuration".into()));
        }
        for t in tensors {
            model.params.set(&t.name, Tensor::from_vec(t.shape, t.data)?)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

/// Shared handle, convenient for concurrent evaluation.
pub type SharedExtractor = Arc<GestureFeatureExtractor>;
