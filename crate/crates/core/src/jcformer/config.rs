use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the emotion embedding enters the fused features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionMode {
    #[default]
    Adaln,
    InContextToken,
    InContextContent,
    CrossAttention,
}

impl EmotionMode {
    pub const ALL: [EmotionMode; 4] = [
        EmotionMode::Adaln,
        EmotionMode::InContextToken,
        EmotionMode::InContextContent,
        EmotionMode::CrossAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmotionMode::Adaln => "adaln",
            EmotionMode::InContextToken => "in_context_token",
            EmotionMode::InContextContent => "in_context_content",
            EmotionMode::CrossAttention => "cross_attention",
        }
    }
}

impl fmt::Display for EmotionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown emotion mode {s:?}; expected one of {}", valid.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub joints: usize,
    /// Longest clip the learned temporal parameters cover.
    pub max_frames: usize,
    /// Width of the raw audio features before projection.
    pub audio_raw_dim: usize,
    pub audio_dim: usize,
    pub d_joint: usize,
    pub d_temporal: usize,
    pub d_fusion: usize,
    pub joint_layers: usize,
    pub temporal_layers: usize,
    pub fusion_layers: usize,
    pub joint_heads: usize,
    pub temporal_heads: usize,
    pub ff_mult: usize,
    pub emotions: usize,
    pub speakers: usize,
    pub emotion_mode: EmotionMode,
    /// Joint-aware branch with the correlation token.
    pub spatial: bool,
    /// Emotion head, embedding and conditioning stage.
    pub emotion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: 47,
            max_frames: 150,
            audio_raw_dim: 24,
            audio_dim: 128,
            d_joint: 64,
            d_temporal: 512,
            d_fusion: 512,
            joint_layers: 4,
            temporal_layers: 8,
            fusion_layers: 2,
            joint_heads: 4,
            temporal_heads: 8,
            ff_mult: 4,
            emotions: 8,
            speakers: 4,
            emotion_mode: EmotionMode::Adaln,
            spatial: true,
            emotion: true,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration used by the smoke and acceptance runs.
    pub fn toy() -> Self {
        ModelConfig {
            max_frames: 34,
            d_temporal: 128,
            d_fusion: 128,
            joint_layers: 2,
            temporal_layers: 2,
            ff_mult: 2,
            ..Self::default()
        }
    }

    pub fn channels(&self) -> usize {
        self.joints * 3
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("joints", self.joints),
            ("max_frames", self.max_frames),
            ("audio_raw_dim", self.audio_raw_dim),
            ("audio_dim", self.audio_dim),
            ("d_joint", self.d_joint),
            ("d_temporal", self.d_temporal),
            ("d_fusion", self.d_fusion),
            ("joint_layers", self.joint_layers),
            ("temporal_layers", self.temporal_layers),
            ("joint_heads", self.joint_heads),
            ("temporal_heads", self.temporal_heads),
            ("ff_mult", self.ff_mult),
            ("speakers", self.speakers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.emotions < 2 {
            return Err(Error::Config("model.emotions must be at least 2".into()));
        }
        for (name, d, h) in [
            ("d_joint", self.d_joint, self.joint_heads),
            ("d_temporal", self.d_temporal, self.temporal_heads),
            ("d_fusion", self.d_fusion, self.temporal_heads),
        ] {
            if d % h != 0 {
                return Err(Error::Config(format!("model.{name} = {d} is not divisible by {h} heads")));
            }
        }
        if self.d_fusion % 2 != 0 {
            return Err(Error::Config("model.d_fusion must be even for the timestep embedding".into()));
        }
        Ok(())
    }
}
