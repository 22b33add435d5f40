//! Built-in skeletons, rig and clip library shipped with the crate.

use crate::camera::{CalibrationFile, StereoRig};
use crate::retarget::TargetSkeleton;
use crate::skeleton::{SkeletonFile, SkeletonTopology};

pub const HUMAN_TOPOLOGY_JSON: &str = include_str!("../fixtures/human_topology.json");
pub const CAT_SKELETON_JSON: &str = include_str!("../fixtures/cat_skeleton.json");
pub const RIG_JSON: &str = include_str!("../fixtures/rig.json");
pub const CLIPS_JSON: &str = include_str!("../fixtures/clips.json");
pub const HUMAN_TO_CAT_MAP_JSON: &str = include_str!("../fixtures/human_to_cat_map.json");
pub const REST_WRIST_FEATURES_JSON: &str = include_str!("../fixtures/rest_wrist_features.json");

/// Canonical 32-joint T-pose, facing -Z.
pub fn human_topology() -> SkeletonTopology {
    let file: SkeletonFile = serde_json::from_str(HUMAN_TOPOLOGY_JSON).expect("bundled topology parses");
    SkeletonTopology::from_file(&file).expect("bundled topology is valid")
}

/// Living-room rig: 0.5 m baseline, f = 1000 px at 1920x1080, cameras 1 m high
/// looking along +Z.
pub fn default_rig() -> StereoRig {
    let file: CalibrationFile = serde_json::from_str(RIG_JSON).expect("bundled rig parses");
    file.to_rig().expect("bundled rig is valid")
}

/// Quadruped target with spine, head, four legs and a tail.
pub fn cat_skeleton() -> TargetSkeleton {
    let file: SkeletonFile = serde_json::from_str(CAT_SKELETON_JSON).expect("bundled cat parses");
    TargetSkeleton::from_file(&file).expect("bundled cat is valid")
}
