//! The run configuration file.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cogesture::corpus::CorpusConfig;
use cogesture::diffusion::DiffusionConfig;
use cogesture::jcformer::ModelConfig;
use cogesture::metrics::ExtractorConfig;
use cogesture::pipeline::EvalConfig;
use cogesture::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Number of samples written by `gen-data`.
    pub samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { samples: 400 }
    }
}

/// Everything a run needs. The master `seed` replaces the `seed` field of
/// every section when the file is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub extractor: ExtractorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            data: DataConfig::default(),
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            diffusion: DiffusionConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            extractor: ExtractorConfig::default(),
        }
        .seeded()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Published architecture and schedule.
    Paper,
    /// Desk-scale model and 200-step schedule.
    Toy,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => RunConfig::default(),
            Preset::Toy => RunConfig {
                model: ModelConfig::toy(),
                diffusion: DiffusionConfig {
                    steps: 200,
                    beta_start: 5e-4,
                    beta_end: 0.1,
                    ..DiffusionConfig::default()
                },
                ..RunConfig::default()
            },
        }
    }

    /// Propagates the master seed into every section.
    pub fn seeded(mut self) -> Self {
        self.corpus.seed = self.seed;
        self.train.seed = self.seed;
        self.eval.seed = self.seed;
        self.extractor.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(cogesture::Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.diffusion.build()?;
        let m = &self.model;
        let c = &self.corpus;
        let mismatch = |what: &str, a: usize, b: usize| {
            cogesture::Error::Config(format!("model.{what} = {a} but the corpus provides {b}"))
        };
        if m.joints != c.joint_count {
            bail!(mismatch("joints", m.joints, c.joint_count));
        }
        if m.emotions != c.emotion_count {
            bail!(mismatch("emotions", m.emotions, c.emotion_count));
        }
        if m.speakers != c.speaker_count {
            bail!(mismatch("speakers", m.speakers, c.speaker_count));
        }
        if m.audio_raw_dim != c.audio_dim() {
            bail!(mismatch("audio_raw_dim", m.audio_raw_dim, c.audio_dim()));
        }
        if self.train.window.frames > m.max_frames {
            bail!(cogesture::Error::Config(format!(
                "train.window.frames = {} exceeds model.max_frames = {}",
                self.train.window.frames, m.max_frames
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| cogesture::Error::Config(e.to_string()))?;
        let c = c.seeded();
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self).context("serializing run configuration")?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| cogesture::Error::io(path, e))?;
        Self::from_toml(&text).with_context(|| format!("loading {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| cogesture::Error::io(path, e))?;
        Ok(())
    }
}
