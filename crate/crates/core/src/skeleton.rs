//! Human skeleton topology, subject proportions and constraint projection.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::RawPose3D;
use crate::math::{any_perpendicular, horizontal, shortest_arc, Quat, Vec3};

pub const JOINT_COUNT: usize = 32;

/// Distances below this are treated as coincident points.
const COINCIDENT: f64 = 1e-12;

/// Minimum per-joint confidence for an online proportion update.
pub const UPDATE_MIN_CONF: f64 = 0.5;
pub const DEFAULT_MIN_SAMPLES: usize = 15;
pub const DEFAULT_UPDATE_ALPHA: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("bones with too few observations: {}", .0.join(", "))]
    InsufficientObservations(Vec<String>),
    #[error("pose has no pelvis")]
    MissingRoot,
    #[error("bone ending at {0} has zero length")]
    DegenerateDirection(String),
    #[error("pose is missing joint {0}")]
    MissingJoint(String),
    #[error("proportions have {got} entries, topology has {expected} joints")]
    ProportionMismatch { expected: usize, got: usize },
}

macro_rules! joints {
    ($($variant:ident = $name:literal),* $(,)?) => {
        /// The 32 tracked landmarks in their fixed index order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(usize)]
        pub enum JointId { $($variant),* }

        impl JointId {
            pub const ALL: [JointId; JOINT_COUNT] = [$(JointId::$variant),*];
            pub const NAMES: [&'static str; JOINT_COUNT] = [$($name),*];
        }
    };
}

joints! {
    Pelvis = "pelvis",
    SpineLow = "spine_low",
    SpineMid = "spine_mid",
    SpineHigh = "spine_high",
    Neck = "neck",
    Head = "head",
    Nose = "nose",
    LeftEye = "left_eye",
    RightEye = "right_eye",
    LeftEar = "left_ear",
    RightEar = "right_ear",
    LeftClavicle = "left_clavicle",
    LeftShoulder = "left_shoulder",
    LeftElbow = "left_elbow",
    LeftWrist = "left_wrist",
    LeftHand = "left_hand",
    RightClavicle = "right_clavicle",
    RightShoulder = "right_shoulder",
    RightElbow = "right_elbow",
    RightWrist = "right_wrist",
    RightHand = "right_hand",
    LeftHip = "left_hip",
    LeftKnee = "left_knee",
    LeftAnkle = "left_ankle",
    LeftFoot = "left_foot",
    LeftToe = "left_toe",
    RightHip = "right_hip",
    RightKnee = "right_knee",
    RightAnkle = "right_ankle",
    RightFoot = "right_foot",
    RightToe = "right_toe",
    HeadTop = "head_top",
}

impl JointId {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::NAMES.iter().position(|n| *n == name).map(|i| Self::ALL[i])
    }

    /// Left/right counterpart; midline joints map to themselves.
    pub fn mirror(self) -> Self {
        let name = self.name();
        let swapped = if let Some(rest) = name.strip_prefix("left_") {
            format!("right_{rest}")
        } else if let Some(rest) = name.strip_prefix("right_") {
            format!("left_{rest}")
        } else {
            return self;
        };
        Self::from_name(&swapped).expect("every sided joint has a counterpart")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeLimit {
    pub min_deg: f64,
    pub max_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent at rest, in the parent frame. For the root this
    /// is its rest position in the world.
    pub rest_offset: Vec3,
}

/// A rooted joint tree. Joints are stored parent-before-child.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joints: Vec<Joint>,
    hinges: Vec<Option<HingeLimit>>,
    children: Vec<Vec<usize>>,
}

impl SkeletonTopology {
    pub fn new(joints: Vec<Joint>, hinges: Vec<Option<HingeLimit>>) -> Result<Self, SkeletonError> {
        let bad = |m: String| Err(SkeletonError::InvalidTopology(m));
        if joints.is_empty() {
            return bad("no joints".into());
        }
        if hinges.len() != joints.len() {
            return bad("hinge table length differs from joint count".into());
        }
        let mut children = vec![Vec::new(); joints.len()];
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return bad("first joint must be the root".into()),
                (_, None) => return bad(format!("joint {} has no parent", j.name)),
                (_, Some(p)) if p >= i => return bad(format!("joint {} listed before its parent", j.name)),
                (_, Some(p)) => {
                    if j.rest_offset.norm() <= 0.0 || !j.rest_offset.iter().all(|v| v.is_finite()) {
                        return bad(format!("joint {} has a zero rest offset", j.name));
                    }
                    children[p].push(i);
                }
            }
        }
        for (i, a) in joints.iter().enumerate() {
            if joints[..i].iter().any(|b| b.name == a.name) {
                return bad(format!("duplicate joint name {}", a.name));
            }
        }
        for (i, h) in hinges.iter().enumerate() {
            if let Some(h) = h {
                if h.min_deg.partial_cmp(&h.max_deg) != Some(std::cmp::Ordering::Less)
                    || h.min_deg < 0.0
                    || h.max_deg > 180.0
                {
                    return bad(format!("hinge on {} has invalid range", joints[i].name));
                }
                if i == 0 {
                    return bad("the root cannot be a hinge".into());
                }
            }
        }
        Ok(Self { joints, hinges, children })
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> &Joint {
        &self.joints[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.joints[i].parent
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn hinge(&self, i: usize) -> Option<HingeLimit> {
        self.hinges[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    /// Path from the root down to `i`, inclusive.
    pub fn path_from_root(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut cur = i;
        while let Some(p) = self.joints[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn is_ancestor(&self, ancestor: usize, mut joint: usize) -> bool {
        while let Some(p) = self.joints[joint].parent {
            if p == ancestor {
                return true;
            }
            joint = p;
        }
        false
    }

    pub fn rest_length(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.joints[i].rest_offset.norm()
        }
    }

    pub fn rest_lengths(&self) -> SkeletonProportions {
        SkeletonProportions { lengths: (0..self.len()).map(|i| self.rest_length(i)).collect() }
    }

    /// World positions of the rest pose.
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::with_capacity(self.len());
        for j in &self.joints {
            let base = j.parent.map_or(Vec3::zeros(), |p| out[p]);
            out.push(base + j.rest_offset);
        }
        out
    }

    /// Checks that this is the canonical 32-joint human topology.
    pub fn ensure_human(&self) -> Result<(), SkeletonError> {
        if self.len() != JOINT_COUNT || self.joints.iter().zip(JointId::NAMES).any(|(j, n)| j.name != n) {
            return Err(SkeletonError::InvalidTopology(
                "joint names must follow the canonical 32-landmark order".into(),
            ));
        }
        Ok(())
    }

    pub fn from_file(file: &SkeletonFile) -> Result<Self, SkeletonError> {
        let mut joints = Vec::with_capacity(file.joints.len());
        for rec in &file.joints {
            let parent = match &rec.parent {
                None => None,
                Some(name) => Some(
                    file.joints
                        .iter()
                        .position(|j| &j.name == name)
                        .ok_or_else(|| SkeletonError::InvalidTopology(format!("unknown parent {name}")))?,
                ),
            };
            joints.push(Joint { name: rec.name.clone(), parent, rest_offset: Vec3::from(rec.rest_offset) });
        }
        let mut hinges = vec![None; joints.len()];
        for (name, [lo, hi]) in &file.hinges {
            let i = joints
                .iter()
                .position(|j| &j.name == name)
                .ok_or_else(|| SkeletonError::InvalidTopology(format!("hinge on unknown joint {name}")))?;
            hinges[i] = Some(HingeLimit { min_deg: *lo, max_deg: *hi });
        }
        Self::new(joints, hinges)
    }

    pub fn to_file(&self) -> SkeletonFile {
        SkeletonFile {
            joints: self
                .joints
                .iter()
                .map(|j| JointRecord {
                    name: j.name.clone(),
                    parent: j.parent.map(|p| self.joints[p].name.clone()),
                    rest_offset: [j.rest_offset.x, j.rest_offset.y, j.rest_offset.z],
                })
                .collect(),
            hinges: self
                .hinges
                .iter()
                .enumerate()
                .filter_map(|(i, h)| h.map(|h| (self.joints[i].name.clone(), [h.min_deg, h.max_deg])))
                .collect(),
            end_effectors: None,
            synonyms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub name: String,
    pub parent: Option<String>,
    pub rest_offset: [f64; 3],
}

/// On-disk skeleton description, shared by the human and target skeletons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub joints: Vec<JointRecord>,
    #[serde(default)]
    pub hinges: BTreeMap<String, [f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_effectors: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synonyms: Option<BTreeMap<String, String>>,
}

/// Per-joint bone length (parent to joint), meters. The root entry is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonProportions {
    pub lengths: Vec<f64>,
}

impl SkeletonProportions {
    pub fn scaled(&self, factor: f64) -> Self {
        Self { lengths: self.lengths.iter().map(|l| l * factor).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonPose {
    pub t: f64,
    pub positions: [Option<Vec3>; JOINT_COUNT],
    pub conf: [f64; JOINT_COUNT],
}

impl SkeletonPose {
    pub fn empty(t: f64) -> Self {
        Self { t, positions: [None; JOINT_COUNT], conf: [0.0; JOINT_COUNT] }
    }

    /// Fully present pose with unit confidence.
    pub fn from_positions(t: f64, positions: &[Vec3]) -> Self {
        let mut pose = Self::empty(t);
        for (i, p) in positions.iter().take(JOINT_COUNT).enumerate() {
            pose.positions[i] = Some(*p);
            pose.conf[i] = 1.0;
        }
        pose
    }

    pub fn get(&self, j: JointId) -> Option<Vec3> {
        self.positions[j.index()]
    }

    pub fn to_raw(&self) -> RawPose3D {
        let mut raw = RawPose3D::empty(self.t);
        for i in 0..JOINT_COUNT {
            raw.joints[i] = self.positions[i].map(|position| crate::camera::RawJoint {
                position,
                conf: self.conf[i],
                reproj_err: 0.0,
            });
        }
        raw
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-bone median of observed endpoint distances over a warm-up window.
pub fn estimate_proportions(
    topology: &SkeletonTopology,
    frames: &[RawPose3D],
    min_samples: usize,
) -> Result<SkeletonProportions, SkeletonError> {
    let mut samples = vec![Vec::new(); topology.len()];
    for f in frames {
        for (j, s) in samples.iter_mut().enumerate().skip(1) {
            let p = topology.parent(j).expect("non-root");
            if let (Some(a), Some(b)) = (f.position(p), f.position(j)) {
                s.push((a - b).norm());
            }
        }
    }
    let short: Vec<String> = (1..topology.len())
        .filter(|&j| samples[j].len() < min_samples.max(1))
        .map(|j| topology.joint(j).name.clone())
        .collect();
    if !short.is_empty() {
        return Err(SkeletonError::InsufficientObservations(short));
    }
    let lengths = samples.iter_mut().enumerate().map(|(j, s)| if j == 0 { 0.0 } else { median(s) }).collect();
    Ok(SkeletonProportions { lengths })
}

/// Exponential update of bone lengths from one confident observation.
pub fn update_proportions(
    topology: &SkeletonTopology,
    current: &SkeletonProportions,
    frame: &RawPose3D,
    alpha: f64,
) -> SkeletonProportions {
    let alpha = alpha.clamp(0.0, 1.0);
    let mut next = current.clone();
    for j in 1..topology.len().min(JOINT_COUNT) {
        let p = topology.parent(j).expect("non-root");
        if let (Some(a), Some(b)) = (frame.joints[p], frame.joints[j]) {
            if a.conf >= UPDATE_MIN_CONF && b.conf >= UPDATE_MIN_CONF {
                let observed = (a.position - b.position).norm();
                next.lengths[j] = (1.0 - alpha) * current.lengths[j] + alpha * observed;
            }
        }
    }
    next
}

/// Flexion angle (0 = straight) between the incoming and outgoing bones.
pub fn flexion_deg(upper: &Vec3, lower: &Vec3) -> f64 {
    upper.normalize().dot(&lower.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
}

fn clamp_hinge(upper: &Vec3, lower_dir: Vec3, limit: HingeLimit) -> Vec3 {
    let angle = flexion_deg(upper, &lower_dir);
    let target = if angle > limit.max_deg {
        limit.max_deg
    } else if angle < limit.min_deg {
        limit.min_deg
    } else {
        return lower_dir;
    };
    let u = upper.normalize();
    let n = u.cross(&lower_dir);
    let axis = if n.norm() > 1e-12 { n.normalize() } else { any_perpendicular(&u) };
    Rotation3::from_axis_angle(&Unit::new_unchecked(axis), target.to_radians()) * u
}

/// Projects a raw pose onto fixed bone lengths and hinge ranges in one
/// root-outward pass.
///
/// A joint whose parent is missing keeps its raw position, since it has no
/// bone to constrain.
pub fn constrain_pose(
    topology: &SkeletonTopology,
    proportions: &SkeletonProportions,
    raw: &RawPose3D,
) -> Result<SkeletonPose, SkeletonError> {
    if proportions.lengths.len() != topology.len() {
        return Err(SkeletonError::ProportionMismatch { expected: topology.len(), got: proportions.lengths.len() });
    }
    let root = raw.joints[0].ok_or(SkeletonError::MissingRoot)?;
    let mut out = SkeletonPose::empty(raw.t);
    out.positions[0] = Some(root.position);
    out.conf[0] = root.conf;

    for j in 1..topology.len().min(JOINT_COUNT) {
        let Some(rj) = raw.joints[j] else { continue };
        out.conf[j] = rj.conf;
        let p = topology.parent(j).expect("non-root");
        let Some(parent_pos) = out.positions[p] else {
            out.positions[j] = Some(rj.position);
            continue;
        };
        let delta = rj.position - parent_pos;
        let mut dir =
            if delta.norm() < COINCIDENT { topology.joint(j).rest_offset.normalize() } else { delta.normalize() };
        if let (Some(limit), Some(gp)) = (topology.hinge(p), topology.parent(p)) {
            if let Some(gp_pos) = out.positions[gp] {
                let upper = parent_pos - gp_pos;
                if upper.norm() >= COINCIDENT {
                    dir = clamp_hinge(&upper, dir, limit);
                }
            }
        }
        out.positions[j] = Some(parent_pos + dir * proportions.lengths[j]);
    }
    Ok(out)
}

/// Orthonormal body frame: origin at the pelvis, world up, `right` along the
/// horizontal hip axis and `forward` the direction the subject faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyBasis {
    pub origin: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl BodyBasis {
    pub fn from_hips(pelvis: Vec3, left_hip: Vec3, right_hip: Vec3) -> Option<Self> {
        let h = horizontal(&(right_hip - left_hip));
        if h.norm() < 1e-9 {
            return None;
        }
        let right = h.normalize();
        let up = Vec3::y();
        Some(Self { origin: pelvis, right, up, forward: up.cross(&right) })
    }

    pub fn of_pose(pose: &SkeletonPose) -> Option<Self> {
        Self::from_hips(pose.get(JointId::Pelvis)?, pose.get(JointId::LeftHip)?, pose.get(JointId::RightHip)?)
    }

    /// Rotation taking the rest basis (right=+X, up=+Y, forward=-Z) onto this one.
    pub fn rotation(&self) -> Quat {
        let m = Matrix3::from_columns(&[self.right, self.up, -self.forward]);
        Quat::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
    }

    /// Coordinates of `p` along (right, up, forward).
    pub fn local(&self, p: &Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(d.dot(&self.right), d.dot(&self.up), d.dot(&self.forward))
    }
}

/// Joint-local rotations plus root placement.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRotations {
    pub root_position: Vec3,
    pub root_rotation: Quat,
    /// One entry per joint; the root entry is the identity.
    pub local: Vec<Quat>,
}

impl JointRotations {
    pub fn rest(topology: &SkeletonTopology) -> Self {
        Self {
            root_position: topology.joint(0).rest_offset,
            root_rotation: Quat::identity(),
            local: vec![Quat::identity(); topology.len()],
        }
    }
}

/// Decomposes a full constrained pose into per-bone shortest-arc rotations,
/// each expressed in its parent's frame.
pub fn pose_to_rotations(topology: &SkeletonTopology, pose: &SkeletonPose) -> Result<JointRotations, SkeletonError> {
    let n = topology.len().min(JOINT_COUNT);
    let mut pos = Vec::with_capacity(n);
    for (i, p) in pose.positions.iter().take(n).enumerate() {
        pos.push(p.ok_or_else(|| SkeletonError::MissingJoint(topology.joint(i).name.clone()))?);
    }
    let basis =
        BodyBasis::of_pose(pose).ok_or_else(|| SkeletonError::DegenerateDirection(JointId::RightHip.name().into()))?;
    let root_rotation = basis.rotation();
    let mut world = vec![root_rotation; n];
    let mut local = vec![Quat::identity(); n];
    for j in 1..n {
        let p = topology.parent(j).expect("non-root");
        let observed = pos[j] - pos[p];
        if observed.norm() < COINCIDENT {
            return Err(SkeletonError::DegenerateDirection(topology.joint(j).name.clone()));
        }
        let rest_world = world[p] * topology.joint(j).rest_offset;
        let w = shortest_arc(&rest_world, &observed) * world[p];
        local[j] = world[p].inverse() * w;
        world[j] = w;
    }
    Ok(JointRotations { root_position: pos[0], root_rotation, local })
}

/// World positions from local rotations and bone lengths.
pub fn forward_kinematics(
    topology: &SkeletonTopology,
    lengths: &SkeletonProportions,
    rotations: &JointRotations,
) -> Vec<Vec3> {
    let n = topology.len();
    let mut world = vec![rotations.root_rotation; n];
    let mut pos = vec![rotations.root_position; n];
    for j in 1..n {
        let p = topology.parent(j).expect("non-root");
        world[j] = world[p] * rotations.local[j];
        pos[j] = pos[p] + world[j] * topology.joint(j).rest_offset.normalize() * lengths.lengths[j];
    }
    pos
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn human() -> SkeletonTopology {
        fixtures::human_topology()
    }

    fn rest_raw(topo: &SkeletonTopology, t: f64) -> RawPose3D {
        SkeletonPose::from_positions(t, &topo.rest_positions()).to_raw()
    }

    #[test]
    fn joint_ids_round_trip() {
        for j in JointId::ALL {
            assert_eq!(JointId::from_name(j.name()), Some(j));
            assert_eq!(JointId::from_index(j.index()), Some(j));
            assert_eq!(j.mirror().mirror(), j);
        }
        assert_eq!(JointId::LeftWrist.mirror(), JointId::RightWrist);
        assert_eq!(JointId::Neck.mirror(), JointId::Neck);
    }

    #[test]
    fn fixture_is_canonical_human() {
        let topo = human();
        topo.ensure_human().unwrap();
        assert_eq!(topo.hinge(JointId::LeftElbow.index()), Some(HingeLimit { min_deg: 0.0, max_deg: 160.0 }));
        assert_eq!(topo.hinge(JointId::RightKnee.index()).unwrap().max_deg, 160.0);
        let back = SkeletonTopology::from_file(&topo.to_file()).unwrap();
        assert_eq!(back, topo);
    }

    #[test]
    fn topology_validation() {
        let j = |name: &str, parent, off: [f64; 3]| Joint { name: name.into(), parent, rest_offset: off.into() };
        let cyclic = vec![j("a", None, [0.0; 3]), j("b", Some(2), [1.0, 0.0, 0.0]), j("c", Some(1), [1.0, 0.0, 0.0])];
        assert!(SkeletonTopology::new(cyclic, vec![None; 3]).is_err());
        let zero = vec![j("a", None, [0.0; 3]), j("b", Some(0), [0.0; 3])];
        assert!(SkeletonTopology::new(zero, vec![None; 2]).is_err());
        let ok = vec![j("a", None, [0.0; 3]), j("b", Some(0), [0.0, 1.0, 0.0])];
        let bad_hinge = vec![None, Some(HingeLimit { min_deg: 10.0, max_deg: 5.0 })];
        assert!(SkeletonTopology::new(ok, bad_hinge).is_err());
    }

    #[test]
    fn proportions_of_constant_rest_frames() {
        let topo = human();
        let frames: Vec<_> = (0..20).map(|i| rest_raw(&topo, i as f64 / 30.0)).collect();
        let props = estimate_proportions(&topo, &frames, DEFAULT_MIN_SAMPLES).unwrap();
        for j in 1..topo.len() {
            assert!((props.lengths[j] - topo.rest_length(j)).abs() < 1e-9);
        }
    }

    #[test]
    fn median_rejects_outlier_and_reports_short_bones() {
        let topo = human();
        let wrist = JointId::LeftWrist.index();
        let frames: Vec<_> = (0..20)
            .map(|i| {
                let mut raw = rest_raw(&topo, i as f64);
                let elbow = raw.position(JointId::LeftElbow.index()).unwrap();
                let len = if i == 7 { 3.0 } else { 0.30 };
                raw.joints[wrist].as_mut().unwrap().position = elbow + Vec3::new(-len, 0.0, 0.0);
                raw
            })
            .collect();
        let props = estimate_proportions(&topo, &frames, 15).unwrap();
        assert!((props.lengths[wrist] - 0.30).abs() < 1e-12);

        let mut sparse = frames.clone();
        for f in sparse.iter_mut().skip(10) {
            f.joints[JointId::RightToe.index()] = None;
        }
        match estimate_proportions(&topo, &sparse, 15) {
            Err(SkeletonError::InsufficientObservations(names)) => assert_eq!(names, vec!["right_toe"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn update_proportions_extremes() {
        let topo = human();
        let current = topo.rest_lengths().scaled(1.1);
        let frame = rest_raw(&topo, 0.0);
        assert_eq!(update_proportions(&topo, &current, &frame, 0.0), current);
        let full = update_proportions(&topo, &current, &frame, 1.0);
        for j in 1..topo.len() {
            assert!((full.lengths[j] - topo.rest_length(j)).abs() < 1e-12);
        }
        let mut low_conf = frame.clone();
        low_conf.joints[JointId::LeftWrist.index()].as_mut().unwrap().conf = 0.4;
        let partial = update_proportions(&topo, &current, &low_conf, 1.0);
        assert_eq!(partial.lengths[JointId::LeftWrist.index()], current.lengths[JointId::LeftWrist.index()]);
        assert_eq!(partial.lengths[JointId::LeftHand.index()], current.lengths[JointId::LeftHand.index()]);
    }

    #[test]
    fn update_converges_geometrically() {
        // |L - len_n| = |L - len_0| * (1 - alpha)^n
        let topo = human();
        let j = JointId::LeftKnee.index();
        let target = topo.rest_length(j);
        let mut props = topo.rest_lengths();
        props.lengths[j] = 2.0 * target;
        let frame = rest_raw(&topo, 0.0);
        for _ in 0..200 {
            props = update_proportions(&topo, &props, &frame, DEFAULT_UPDATE_ALPHA);
        }
        let expected = target * 0.98f64.powi(200);
        assert!((props.lengths[j] - target - expected).abs() < 1e-12);
        assert!((props.lengths[j] - target).abs() / target < 0.02);
    }

    #[test]
    fn constrain_feasible_pose_is_identity() {
        let topo = human();
        let raw = rest_raw(&topo, 0.0);
        let out = constrain_pose(&topo, &topo.rest_lengths(), &raw).unwrap();
        for j in 0..JOINT_COUNT {
            assert!((out.positions[j].unwrap() - raw.position(j).unwrap()).norm() < 1e-9);
        }
    }

    #[test]
    fn constrain_shrinks_stretched_bone() {
        let topo = human();
        let mut raw = rest_raw(&topo, 0.0);
        let knee = JointId::LeftKnee.index();
        let hip = raw.position(JointId::LeftHip.index()).unwrap();
        let rest_knee = raw.position(knee).unwrap();
        raw.joints[knee].as_mut().unwrap().position = hip + (rest_knee - hip) * 2.0;
        let out = constrain_pose(&topo, &topo.rest_lengths(), &raw).unwrap();
        assert!((out.positions[knee].unwrap() - rest_knee).norm() < 1e-12);
    }

    #[test]
    fn constrain_coincident_child_uses_rest_direction() {
        let topo = human();
        let mut raw = rest_raw(&topo, 0.0);
        let neck = raw.position(JointId::Neck.index()).unwrap();
        raw.joints[JointId::Head.index()].as_mut().unwrap().position = neck;
        let out = constrain_pose(&topo, &topo.rest_lengths(), &raw).unwrap();
        let head = out.positions[JointId::Head.index()].unwrap();
        assert!((head - neck - topo.joint(JointId::Head.index()).rest_offset).norm() < 1e-12);
    }

    #[test]
    fn constrain_clamps_overbent_elbow() {
        let topo = human();
        let mut raw = rest_raw(&topo, 0.0);
        let (s, e, w) = (JointId::LeftShoulder.index(), JointId::LeftElbow.index(), JointId::LeftWrist.index());
        let elbow = raw.position(e).unwrap();
        // Forearm folded straight back onto the upper arm, slightly off-plane.
        raw.joints[w].as_mut().unwrap().position = elbow + Vec3::new(0.25, 0.01, 0.0);
        let out = constrain_pose(&topo, &topo.rest_lengths(), &raw).unwrap();
        let p = |j: usize| out.positions[j].unwrap();
        let angle = flexion_deg(&(p(e) - p(s)), &(p(w) - p(e)));
        assert!((angle - 160.0).abs() < 1e-9, "{angle}");
        assert!(((p(w) - p(e)).norm() - topo.rest_length(w)).abs() < 1e-12);
    }

    #[test]
    fn missing_root_and_missing_parent() {
        let topo = human();
        let mut raw = rest_raw(&topo, 0.0);
        raw.joints[0] = None;
        assert_eq!(constrain_pose(&topo, &topo.rest_lengths(), &raw), Err(SkeletonError::MissingRoot));

        let mut raw = rest_raw(&topo, 0.0);
        raw.joints[JointId::LeftElbow.index()] = None;
        let w = JointId::LeftWrist.index();
        let moved = raw.position(w).unwrap() + Vec3::new(0.0, 0.05, 0.0);
        raw.joints[w].as_mut().unwrap().position = moved;
        let out = constrain_pose(&topo, &topo.rest_lengths().scaled(1.2), &raw).unwrap();
        assert_eq!(out.positions[JointId::LeftElbow.index()], None);
        assert_eq!(out.conf[JointId::LeftElbow.index()], 0.0);
        assert_eq!(out.positions[w], Some(moved));
    }

    #[test]
    fn rest_pose_rotations_are_identity() {
        let topo = human();
        let pose = SkeletonPose::from_positions(0.0, &topo.rest_positions());
        let rot = pose_to_rotations(&topo, &pose).unwrap();
        assert!(rot.root_rotation.angle() < 1e-12);
        assert!((rot.root_position - topo.joint(0).rest_offset).norm() < 1e-12);
        for q in &rot.local {
            assert!(q.angle() < 1e-9);
        }
    }

    #[test]
    fn rotations_need_full_pose() {
        let topo = human();
        let mut pose = SkeletonPose::from_positions(0.0, &topo.rest_positions());
        pose.positions[JointId::Nose.index()] = None;
        assert!(matches!(pose_to_rotations(&topo, &pose), Err(SkeletonError::MissingJoint(_))));
        let mut pose = SkeletonPose::from_positions(0.0, &topo.rest_positions());
        pose.positions[JointId::Nose.index()] = pose.positions[JointId::Head.index()];
        assert!(matches!(pose_to_rotations(&topo, &pose), Err(SkeletonError::DegenerateDirection(_))));
    }

    #[test]
    fn body_basis_is_orthonormal_and_facing() {
        let topo = human();
        let pose = SkeletonPose::from_positions(0.0, &topo.rest_positions());
        let b = BodyBasis::of_pose(&pose).unwrap();
        assert!((b.right - Vec3::x()).norm() < 1e-12);
        assert!((b.forward - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        let nose = b.local(&pose.get(JointId::Nose).unwrap());
        assert!(nose.z > 0.0, "nose should be in front");
    }
}
