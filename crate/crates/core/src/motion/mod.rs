//! Gesture data model: skeletons, rotation sequences, audio features,
//! windowing, stitching, normalization and file formats.

mod io;
mod kinematics;
mod mask;
mod sequence;
mod skeleton;
mod stats;
mod window;

pub use io::{
    audio_from_csv, decode_audio, decode_motion, encode_audio, encode_motion, load_audio, load_motion,
    motion_to_csv, save_audio, save_motion,
};
pub use kinematics::{joint_positions, rest_offsets};
pub use mask::{random_proportional_mask, MaskPlacement};
pub use sequence::{
    aligned_gesture_frames, aligned_source_frames, canonicalize_axis_angle, AudioFeatureSequence, GestureSequence,
    DEFAULT_FPS,
};
pub use skeleton::SkeletonSpec;
pub use stats::{DatasetStats, STD_FLOOR};
pub use window::{crossfade_weight, stitch, window, window_offsets, WindowPlan, CLIP_FRAMES, CLIP_STRIDE, STITCH_OVERLAP};
