//! Robot description and upper-body motion data.

pub mod dataset;
pub mod retarget;
pub mod robot;
pub mod synth;

pub use dataset::{
    load_dataset, parse_dataset, resample_clip, upper_target_at, upper_target_into,
    window_pair_count, window_pairs, LoadedDataset, MotionClip, MotionDataset, MotionFrame,
    MotionWindowPair,
};
pub use retarget::{load_mapping, parse_mapping, retarget_clip, retarget_dataset, RetargetEntry};
pub use robot::{BaseSpec, JointSpec, Keypoint, LinkSpec, RobotModel};
pub use synth::{generate_synthetic_dataset, MotionFamily, SynthSpec};
