//! Emotion-conditioned co-speech gesture synthesis with denoising diffusion.

pub mod checkpoint;
pub mod container;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod jcformer;
pub mod metrics;
pub mod motion;
pub mod numeric;
pub mod pipeline;
pub mod rng;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use numeric::{Scalar, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = numeric::Graph<f64>;
