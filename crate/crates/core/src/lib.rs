//! Markerless stereo motion capture for an interactive cat avatar.
//!
//! Labeled 2D keypoints from a calibrated camera pair are triangulated,
//! projected onto a constrained human skeleton, filtered over time and turned
//! into body-centric features. Three interaction gestures are recognized,
//! fused with an audio-emotion stream, and answered by a cat avatar that
//! otherwise mirrors the user's motion through automatic retargeting.

pub mod camera;
pub mod config;
pub mod eval;
pub mod fixtures;
pub mod formats;
pub mod fusion;
pub mod gesture;
pub mod math;
pub mod pipeline;
pub mod response;
pub mod retarget;
pub mod skeleton;
pub mod synth;
pub mod tracker;

pub use camera::{CameraModel, KeypointFrame2D, RawPose3D, StereoRig};
pub use config::{ConfigError, SessionConfig};
pub use eval::{evaluate, EvalReport};
pub use fusion::{AudioEmotionEvent, Emotion, UserState};
pub use gesture::{GestureEvent, GestureKind, RecognizerConfig};
pub use math::{Quat, Vec3};
pub use pipeline::{
    animate_poses, recognize_poses, run_streams, FrameOutput, PipelineConfig, PipelineError, Session, SessionSetup,
};
pub use response::{ClipLibrary, PlaybackState};
pub use retarget::{auto_map, retarget_pose, AvatarPose, BoneMap, TargetSkeleton};
pub use skeleton::{JointId, SkeletonPose, SkeletonProportions, SkeletonTopology, JOINT_COUNT};
pub use synth::{GroundTruth, RenderConfig, ScenarioKind, ScenarioSpec};
pub use tracker::{TrackedPose, TrackerConfig, TrackerState};
