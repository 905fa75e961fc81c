//! The joint/temporal transformer denoiser with audio and emotion conditioning.

mod config;
pub mod layers;

pub use config::{EmotionMode, ModelConfig};
pub use layers::{sinusoidal, timestep_embedding, ParamStore, LN_EPS};

use layers::{modulate, AdaLn, Block, Builder, Linear, Mha};

use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::motion::AudioFeatureSequence;
use crate::numeric::{Graph, Scalar, Tensor, Var};
use crate::rng::{stream, Purpose};

/// Which emotion label selects the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmotionChoice {
    /// Argmax of the emotion head.
    #[default]
    Predicted,
    /// Caller-supplied label (training target or transfer override).
    Label(usize),
}

/// Emotion head output for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionCondition {
    pub logits: Vec<f64>,
    pub label: usize,
    pub embedding: Vec<f64>,
}

/// Everything the denoiser needs besides `x_t` and `t`.
#[derive(Debug, Clone)]
pub struct DenoiseCondition<T> {
    /// Raw audio features already resampled to the clip's frame count.
    pub audio: Tensor<T>,
    pub speaker: usize,
    pub emotion: EmotionChoice,
}

/// Result of one forward pass recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub eps: Var,
    pub logits: Option<Var>,
    pub label: Option<usize>,
}

#[derive(Debug, Clone)]
struct JointBranch {
    time_weights: usize,
    embed: Linear,
    token: usize,
    blocks: Vec<Block>,
    project: Linear,
}

#[derive(Debug, Clone)]
enum EmotionOp {
    Adaln { scale: Linear, shift: Linear },
    Token,
    Content(Linear),
    Cross { norm: AdaLn, attn: Mha },
}

#[derive(Debug, Clone)]
struct EmotionStage {
    phi: Linear,
    table: usize,
    op: EmotionOp,
    refine: Block,
}

#[derive(Debug, Clone)]
struct Layout {
    time1: Linear,
    time2: Linear,
    speaker: usize,
    audio_proj: Linear,
    joint: Option<JointBranch>,
    temporal_in: Linear,
    temporal_pos: usize,
    temporal_blocks: Vec<Block>,
    fusion_in: Option<Linear>,
    fusion_blocks: Vec<Block>,
    audio_norm: AdaLn,
    audio_attn: Mha,
    emotion: Option<EmotionStage>,
    out_norm: AdaLn,
    out: Linear,
    /// Per-channel gate on a direct `x_t` path into the output, from the
    /// timestep condition. Frames are wider than `d_temporal` in small models.
    skip: Linear,
}

impl Layout {
    fn build<T: Scalar, R: rand::Rng + ?Sized>(c: &ModelConfig, b: &mut Builder<'_, T, R>) -> Self {
        let dc = c.d_fusion;
        let time1 = b.linear("time.fc1", dc, dc, true);
        let time2 = b.linear("time.fc2", dc, dc, true);
        let speaker = b.normal("speaker.table", [c.speakers, dc], 1.0);
        let audio_proj = b.linear("audio.proj", c.audio_raw_dim, c.audio_dim, true);
        let joint = c.spatial.then(|| JointBranch {
            time_weights: b.full("joint.time", [c.max_frames, 1], 1.0 / c.max_frames as f64),
            embed: b.linear("joint.embed", 3, c.d_joint, true),
            token: b.normal("joint.token", [1, c.d_joint], 0.02),
            blocks: (0..c.joint_layers)
                .map(|i| b.block(&format!("joint.block{i}"), c.d_joint, dc, c.joint_heads, c.ff_mult))
                .collect(),
            project: b.linear("fuse.token", c.d_joint, c.d_temporal, false),
        });
        let temporal_in = b.linear("temporal.embed", c.channels(), c.d_temporal, true);
        let temporal_pos = b.normal("temporal.pos", [c.max_frames, c.d_temporal], 0.02);
        let temporal_blocks = (0..c.temporal_layers)
            .map(|i| b.block(&format!("temporal.block{i}"), c.d_temporal, dc, c.temporal_heads, c.ff_mult))
            .collect();
        let fusion_in = (c.d_temporal != c.d_fusion).then(|| b.linear("fuse.proj", c.d_temporal, c.d_fusion, true));
        let fusion_blocks = (0..c.fusion_layers)
            .map(|i| b.block(&format!("fuse.block{i}"), c.d_fusion, dc, c.temporal_heads, c.ff_mult))
            .collect();
        let audio_norm = b.adaln("audio.norm", dc, c.d_fusion);
        let audio_attn = b.attention("audio.attn", c.d_fusion, c.audio_dim, c.d_fusion, c.temporal_heads);
        let emotion = c.emotion.then(|| {
            let phi = b.zero_linear("emotion.phi", c.audio_dim, c.emotions);
            let table = b.normal("emotion.table", [c.emotions, c.d_fusion], 1.0);
            let op = match c.emotion_mode {
                EmotionMode::Adaln => EmotionOp::Adaln {
                    scale: b.zero_linear("emotion.scale", c.d_fusion, c.d_fusion),
                    shift: b.zero_linear("emotion.shift", c.d_fusion, c.d_fusion),
                },
                EmotionMode::InContextToken => EmotionOp::Token,
                EmotionMode::InContextContent => EmotionOp::Content(b.linear("emotion.content", c.d_fusion, c.d_fusion, true)),
                EmotionMode::CrossAttention => EmotionOp::Cross {
                    norm: b.adaln("emotion.norm", dc, c.d_fusion),
                    attn: b.attention("emotion.attn", c.d_fusion, c.d_fusion, c.d_fusion, c.temporal_heads),
                },
            };
            let refine = b.block("emotion.refine", c.d_fusion, dc, c.temporal_heads, c.ff_mult);
            EmotionStage { phi, table, op, refine }
        });
        let out_norm = b.adaln("out.norm", dc, c.d_fusion);
        let out = b.linear("out.proj", c.d_fusion, c.channels(), true);
        let skip = Linear {
            w: b.zeros("out.skip.w", [dc, c.channels()]),
            b: Some(b.full("out.skip.b", [1, c.channels()], 1.0)),
        };
        Layout {
            time1,
            time2,
            speaker,
            audio_proj,
            joint,
            temporal_in,
            temporal_pos,
            temporal_blocks,
            fusion_in,
            fusion_blocks,
            audio_norm,
            audio_attn,
            emotion,
            out_norm,
            out,
            skip,
        }
    }
}

/// Denoiser `G(x_t, t, c)` over `N x (J*3)` normalized motion.
#[derive(Debug, Clone)]
pub struct Jcformer<T> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<T>,
}

impl<T: Scalar> Jcformer<T> {
    /// Fresh parameters drawn from the initialization stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Purpose::Init, 0);
        let mut params = ParamStore::default();
        let layout = Layout::build(
            &config,
            &mut Builder {
                store: &mut params,
                rng: &mut rng,
            },
        );
        Ok(Jcformer { config, layout, params })
    }

    /// Rebuilds a model from stored parameters; names and shapes must match `config`.
    pub fn from_params(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if named.len() != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, configuration expects {}",
                named.len(),
                model.params.len()
            )));
        }
        for (i, (name, tensor)) in named.into_iter().enumerate() {
            let expected = &model.params.names()[i];
            if &name != expected {
                return Err(Error::Config(format!("parameter {i} is {name}, configuration expects {expected}")));
            }
            model.params.set(&name, tensor).map_err(|e| Error::Config(format!("parameter {name}: {e}")))?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn check_frames(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.config.max_frames {
            return Err(Error::argument(format!("clip has {n} frames, model supports 1..={}", self.config.max_frames)));
        }
        Ok(())
    }

    /// Timestep and speaker embedding, `1 x d_fusion`, before the GELU.
    pub fn condition_vector(&self, g: &mut Graph<T>, p: &[Var], t: usize, speaker: usize) -> Result<Var> {
        if speaker >= self.config.speakers {
            return Err(Error::argument(format!("speaker {speaker} out of range [0, {})", self.config.speakers)));
        }
        let l = &self.layout;
        let emb = g.constant(timestep_embedding(t, self.config.d_fusion));
        let h = l.time1.apply(g, p, emb)?;
        let h = g.gelu(h);
        let h = l.time2.apply(g, p, h)?;
        let s = g.gather_rows(p[l.speaker], &[speaker])?;
        g.add(h, s)
    }

    /// Learned projection of time-aligned raw audio, `N x D_a`.
    pub fn project_audio(&self, g: &mut Graph<T>, p: &[Var], audio: Var) -> Result<Var> {
        let d = g.shape(audio)[1];
        if d != self.config.audio_raw_dim {
            return Err(Error::contract(format!(
                "audio has {d} channels, model expects {}",
                self.config.audio_raw_dim
            )));
        }
        self.layout.audio_proj.apply(g, p, audio)
    }

    /// Resamples raw features to `n` frames at `fps` and applies the projection.
    pub fn align_audio(&self, raw: &AudioFeatureSequence, n: usize, fps: f64) -> Result<Tensor<T>> {
        let aligned = raw.resample(n, fps)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let a = g.constant(aligned.to_tensor());
        let out = self.project_audio(&mut g, &p, a)?;
        Ok(g.value(out).clone())
    }

    /// Mean-pooled logits `1 x C` over projected audio `N x D_a`.
    pub fn emotion_logits(&self, g: &mut Graph<T>, p: &[Var], audio: Var) -> Result<Var> {
        let stage = self.layout.emotion.as_ref().ok_or_else(|| Error::contract("emotion branch is disabled"))?;
        let pooled = g.mean_rows(audio);
        stage.phi.apply(g, p, pooled)
    }

    /// Emotion head on raw time-aligned audio, with an optional label override.
    pub fn emotion_head(&self, audio: &Tensor<T>, choice: EmotionChoice) -> Result<EmotionCondition> {
        let stage = self.layout.emotion.as_ref().ok_or_else(|| Error::contract("emotion branch is disabled"))?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let a = g.constant(audio.clone());
        let a = self.project_audio(&mut g, &p, a)?;
        let logits = self.emotion_logits(&mut g, &p, a)?;
        let logits = g.value(logits).to_f64_vec();
        let label = self.resolve_label(&logits, choice)?;
        let table = self.params.tensors()[stage.table].to_f64_vec();
        let d = self.config.d_fusion;
        Ok(EmotionCondition {
            logits,
            label,
            embedding: table[label * d..(label + 1) * d].to_vec(),
        })
    }

    fn resolve_label(&self, logits: &[f64], choice: EmotionChoice) -> Result<usize> {
        match choice {
            EmotionChoice::Label(l) if l < self.config.emotions => Ok(l),
            EmotionChoice::Label(l) => Err(Error::argument(format!(
                "emotion label {l} out of range [0, {})",
                self.config.emotions
            ))),
            EmotionChoice::Predicted => Ok(argmax(logits)),
        }
    }

    /// Correlation token output, `1 x d_joint`.
    pub fn joint_transformer(&self, g: &mut Graph<T>, p: &[Var], x: Var, cond: Var) -> Result<Var> {
        let branch = self.layout.joint.as_ref().ok_or_else(|| Error::contract("spatial branch is disabled"))?;
        let (n, c) = (g.shape(x)[0], g.shape(x)[1]);
        if c != self.config.channels() {
            return Err(Error::contract(format!("joint transformer got {c} channels, expected {}", self.config.channels())));
        }
        self.check_frames(n)?;
        let w = g.slice_rows(p[branch.time_weights], 0, n)?;
        let collapsed = g.matmul_t(w, x, true, false)?;
        let joints = g.reshape(collapsed, &[self.config.joints, 3])?;
        let emb = branch.embed.apply(g, p, joints)?;
        let mut h = g.concat_rows(&[p[branch.token], emb])?;
        let pos = g.constant(sinusoidal(self.config.joints + 1, self.config.d_joint));
        h = g.add(h, pos)?;
        for block in &branch.blocks {
            h = block.apply(g, p, h, cond)?;
        }
        g.slice_rows(h, 0, 1)
    }

    /// Per-frame embedding plus learned positions through the temporal blocks, `N x d_temporal`.
    pub fn temporal_transformer(&self, g: &mut Graph<T>, p: &[Var], x: Var, cond: Var) -> Result<Var> {
        let l = &self.layout;
        let n = g.shape(x)[0];
        self.check_frames(n)?;
        let mut h = l.temporal_in.apply(g, p, x)?;
        let pos = g.slice_rows(p[l.temporal_pos], 0, n)?;
        h = g.add(h, pos)?;
        for block in &l.temporal_blocks {
            h = block.apply(g, p, h, cond)?;
        }
        Ok(h)
    }

    /// Fusion input: the projected token broadcast onto every frame.
    pub fn fusion_input(&self, g: &mut Graph<T>, p: &[Var], token: Option<Var>, temporal: Var) -> Result<Var> {
        let l = &self.layout;
        let mut h = match (token, &l.joint) {
            (Some(tok), Some(branch)) => {
                let proj = branch.project.apply(g, p, tok)?;
                g.add_row(temporal, proj)?
            }
            _ => temporal,
        };
        if let Some(fin) = &l.fusion_in {
            h = fin.apply(g, p, h)?;
        }
        Ok(h)
    }

    pub fn fuse(&self, g: &mut Graph<T>, p: &[Var], token: Option<Var>, temporal: Var, cond: Var) -> Result<Var> {
        let mut h = self.fusion_input(g, p, token, temporal)?;
        for block in &self.layout.fusion_blocks {
            h = block.apply(g, p, h, cond)?;
        }
        Ok(h)
    }

    /// Residual cross-attention with queries from gestures and keys/values from audio.
    pub fn audio_cross_attention(&self, g: &mut Graph<T>, p: &[Var], x: Var, audio: Var, cond: Var) -> Result<Var> {
        let (n, m) = (g.shape(x)[0], g.shape(audio)[0]);
        if n != m {
            return Err(Error::contract(format!("gesture features have {n} frames, audio has {m}")));
        }
        let l = &self.layout;
        let h = l.audio_norm.apply(g, p, x, cond)?;
        let a = l.audio_attn.apply(g, p, h, audio)?;
        g.add(x, a)
    }

    /// Applies the configured conditioning operation with embedding `e` (`1 x d_fusion`).
    pub fn condition_emotion(&self, g: &mut Graph<T>, p: &[Var], x: Var, e: Var, cond: Var) -> Result<Var> {
        let stage = self.layout.emotion.as_ref().ok_or_else(|| Error::contract("emotion branch is disabled"))?;
        let n = g.shape(x)[0];
        match &stage.op {
            EmotionOp::Adaln { scale, shift } => modulate(g, p, scale, shift, x, e),
            EmotionOp::Token => {
                let h = g.concat_rows(&[x, e])?;
                let h = stage.refine.apply(g, p, h, cond)?;
                return g.slice_rows(h, 0, n);
            }
            EmotionOp::Content(proj) => {
                let c = proj.apply(g, p, e)?;
                g.add_row(x, c)
            }
            EmotionOp::Cross { norm, attn } => {
                let h = norm.apply(g, p, x, cond)?;
                let a = attn.apply(g, p, h, e)?;
                g.add(x, a)
            }
        }
        .and_then(|h| stage.refine.apply(g, p, h, cond))
    }

    /// Records the full denoiser on `g`; `p` comes from [`ParamStore::bind`].
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        x: Var,
        t: usize,
        audio: Var,
        speaker: usize,
        emotion: EmotionChoice,
    ) -> Result<Forward> {
        let (n, c) = (g.shape(x)[0], g.shape(x)[1]);
        if c != self.config.channels() {
            return Err(Error::contract(format!(
                "x_t has shape [{n}, {c}], expected [N, {}]",
                self.config.channels()
            )));
        }
        self.check_frames(n)?;
        if g.shape(audio)[0] != n {
            return Err(Error::contract(format!(
                "audio has {} frames, x_t has {n}; align audio first",
                g.shape(audio)[0]
            )));
        }
        let l = &self.layout;
        let cond = self.condition_vector(g, p, t, speaker)?;
        let cond = g.gelu(cond);
        let a = self.project_audio(g, p, audio)?;
        let token = match l.joint {
            Some(_) => Some(self.joint_transformer(g, p, x, cond)?),
            None => None,
        };
        let temporal = self.temporal_transformer(g, p, x, cond)?;
        let mut h = self.fuse(g, p, token, temporal, cond)?;
        h = self.audio_cross_attention(g, p, h, a, cond)?;
        let (mut logits, mut label) = (None, None);
        if let Some(stage) = &l.emotion {
            let lg = self.emotion_logits(g, p, a)?;
            let chosen = self.resolve_label(&g.value(lg).to_f64_vec(), emotion)?;
            let e = g.gather_rows(p[stage.table], &[chosen])?;
            h = self.condition_emotion(g, p, h, e, cond)?;
            logits = Some(lg);
            label = Some(chosen);
        }
        let h = l.out_norm.apply(g, p, h, cond)?;
        let eps = l.out.apply(g, p, h)?;
        let gate = l.skip.apply(g, p, cond)?;
        let through = g.mul_row(x, gate)?;
        let eps = g.add(eps, through)?;
        Ok(Forward { eps, logits, label })
    }

    /// Inference-only ε prediction.
    pub fn denoise(&self, x_t: &Tensor<T>, t: usize, condition: &DenoiseCondition<T>) -> Result<Tensor<T>> {
        if x_t.shape().len() != 2 {
            return Err(Error::contract(format!("x_t must be N x (J*3), got {:?}", x_t.shape())));
        }
        if condition.audio.shape().len() != 2 {
            return Err(Error::contract(format!("audio must be N x D, got {:?}", condition.audio.shape())));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x_t.clone());
        let a = g.constant(condition.audio.clone());
        let f = self.forward(&mut g, &p, x, t, a, condition.speaker, condition.emotion)?;
        Ok(g.value(f.eps).clone())
    }
}

impl<T: Scalar> Denoiser<T> for Jcformer<T> {
    type Condition = DenoiseCondition<T>;

    fn predict_eps(&self, x_t: &Tensor<T>, t: usize, condition: &DenoiseCondition<T>) -> Result<Tensor<T>> {
        self.denoise(x_t, t, condition)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
