//! Evaluation metrics: FGD, SRGR and beat alignment.

mod beats;
mod extractor;
mod fgd;
mod probe;
mod report;
mod srgr;

pub use beats::{
    audio_beat_frames, audio_beats, beat_align, joint_speed, kinematic_beat_frames, kinematic_beats, BeatConfig,
    BeatSet, BeatSource,
};
pub use extractor::{ExtractorConfig, ExtractorReport, GestureFeatureExtractor, SharedExtractor};
pub use fgd::{fgd, frechet_distance, GaussianStats, COV_JITTER, EIG_TOLERANCE};
pub use probe::{time_pool, LinearProbe};
pub use report::{MetricsReport, RepetitionMetrics};
pub use srgr::{srgr, DEFAULT_DELTA};

/// Bandwidth of the beat-alignment kernel in seconds.
pub const BEAT_ALIGN_SIGMA: f64 = 0.3;
