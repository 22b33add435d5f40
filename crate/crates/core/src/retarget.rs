//! Automatic bone mapping between a human source skeleton and an arbitrary
//! target tree, and per-frame rotation transfer onto the target.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{any_perpendicular, Quat, Vec3};
use crate::skeleton::{
    forward_kinematics, JointRotations, SkeletonError, SkeletonFile, SkeletonProportions, SkeletonTopology,
};

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetargetError {
    #[error("no chain of the target aligns with the source skeleton")]
    NoCommonStructure,
    #[error("rotation for joint {0} is not unit length")]
    UnnormalizedRotation(usize),
    #[error("rotation count {got} does not match source joint count {expected}")]
    JointCountMismatch { expected: usize, got: usize },
    #[error("unknown end effector {0}")]
    UnknownEndEffector(String),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

/// Source-token to target-token substitutions used when matching names.
pub fn default_synonyms() -> BTreeMap<String, String> {
    [
        ("clavicle", "scapula"),
        ("elbow", "front_elbow"),
        ("foot", "hind_paw"),
        ("hip", "hind_hip"),
        ("knee", "hind_knee"),
        ("shoulder", "front_shoulder"),
        ("spine_high", "chest"),
        ("wrist", "front_paw"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSkeleton {
    pub topology: SkeletonTopology,
    /// Declared end effectors, or the leaves when none are declared.
    pub end_effectors: Vec<usize>,
    pub synonyms: BTreeMap<String, String>,
}

impl TargetSkeleton {
    pub fn new(
        topology: SkeletonTopology,
        end_effectors: Option<&[String]>,
        synonyms: Option<BTreeMap<String, String>>,
    ) -> Result<Self, RetargetError> {
        let end_effectors = match end_effectors {
            Some(names) => names
                .iter()
                .map(|n| topology.index_of(n).ok_or_else(|| RetargetError::UnknownEndEffector(n.clone())))
                .collect::<Result<_, _>>()?,
            None => (0..topology.len()).filter(|&i| topology.is_leaf(i)).collect(),
        };
        Ok(Self { topology, end_effectors, synonyms: synonyms.unwrap_or_else(default_synonyms) })
    }

    pub fn from_file(file: &SkeletonFile) -> Result<Self, RetargetError> {
        let topology = SkeletonTopology::from_file(file)?;
        Self::new(topology, file.end_effectors.as_deref(), file.synonyms.clone())
    }

    pub fn len(&self) -> usize {
        self.topology.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topology.is_empty()
    }
}

/// One aligned segment: source bones and target bones between two matched
/// joints, listed from the top down and ending at the matched joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    /// Target chain rest length over source chain rest length.
    pub length_ratio: f64,
    source_fractions: Vec<f64>,
    target_fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoneMap {
    pub pairs: Vec<ChainPair>,
    pub unmapped_source: Vec<usize>,
    pub unmapped_target: Vec<usize>,
    source_len: usize,
    target_len: usize,
    source_rest_root: Vec3,
    source_rest_leg: f64,
    /// Root to lowest rest joint, with each bone's vertical rest direction.
    source_leg: Vec<(usize, f64)>,
    target_rest_root: Vec3,
    target_leg: f64,
    target_depth: Vec<usize>,
}

/// Name-level view of a bone map, suitable for review and golden files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneMapRecord {
    pub pairs: Vec<ChainPairRecord>,
    pub unmapped_source: Vec<String>,
    pub unmapped_target: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainPairRecord {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub length_ratio: f64,
}

fn tokens(name: &str) -> Vec<&str> {
    name.split('_').collect()
}

/// Applies the first (longest) synonym whose tokens occur contiguously.
fn substitute(name: &str, synonyms: &[(Vec<&str>, &str)]) -> Option<String> {
    let toks = tokens(name);
    for (key, value) in synonyms {
        if let Some(at) = toks.windows(key.len()).position(|w| w == key.as_slice()) {
            let mut out: Vec<&str> = toks[..at].to_vec();
            out.push(value);
            out.extend_from_slice(&toks[at + key.len()..]);
            return Some(out.join("_"));
        }
    }
    None
}

fn fractions(topology: &SkeletonTopology, chain: &[usize]) -> (Vec<f64>, f64) {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(chain.len());
    for &j in chain {
        acc += topology.rest_length(j);
        out.push(acc);
    }
    for f in &mut out {
        *f /= acc;
    }
    (out, acc)
}

/// Rest-pose vertical drop from the root to the lowest joint, with the path.
fn leg(topology: &SkeletonTopology) -> (f64, Vec<(usize, f64)>) {
    let rest = topology.rest_positions();
    let lowest = (0..rest.len()).min_by(|&a, &b| rest[a].y.total_cmp(&rest[b].y)).unwrap_or(0);
    let path = topology.path_from_root(lowest)[1..]
        .iter()
        .map(|&j| (j, topology.joint(j).rest_offset.normalize().y))
        .collect();
    (rest[0].y - rest[lowest].y, path)
}

/// Builds the source-to-target correspondence.
pub fn auto_map(source: &SkeletonTopology, target: &TargetSkeleton) -> Result<BoneMap, RetargetError> {
    let tt = &target.topology;
    let mut synonyms: Vec<(Vec<&str>, &str)> = target.synonyms.iter().map(|(k, v)| (tokens(k), v.as_str())).collect();
    synonyms.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    // Phase 1: names.
    let substituted: Vec<Option<String>> = source.joints().iter().map(|j| substitute(&j.name, &synonyms)).collect();
    let mut matched: Vec<Option<usize>> = vec![None; tt.len()];
    let mut used = vec![false; source.len()];
    for (ti, tj) in tt.joints().iter().enumerate() {
        let exact = source.index_of(&tj.name).filter(|&s| !used[s]);
        let by_synonym =
            || (0..source.len()).find(|&s| !used[s] && substituted[s].as_deref() == Some(tj.name.as_str()));
        if let Some(s) = exact.or_else(by_synonym) {
            matched[ti] = Some(s);
            used[s] = true;
        }
    }
    matched[0] = Some(0);

    // Phase 2: segments between each matched joint and its nearest matched
    // ancestor, kept only when the source side nests the same way.
    let mut on_aligned_chain = vec![false; tt.len()];
    for &e in &target.end_effectors {
        if matched[e].is_some() {
            for j in tt.path_from_root(e) {
                on_aligned_chain[j] = true;
            }
        }
    }
    let mut claimed = vec![false; tt.len()];
    claimed[0] = true;
    let mut pairs = Vec::new();
    for b_t in 1..tt.len() {
        let Some(b_s) = matched[b_t] else { continue };
        let mut chain_t = vec![b_t];
        let mut a_t = tt.parent(b_t).expect("non-root");
        while matched[a_t].is_none() {
            chain_t.push(a_t);
            a_t = tt.parent(a_t).expect("root is matched");
        }
        let a_s = matched[a_t].expect("matched");
        if !source.is_ancestor(a_s, b_s) {
            continue;
        }
        chain_t.reverse();
        if chain_t.len() > 1 && !on_aligned_chain[b_t] {
            // Interior joints are only distributed along chains whose end effector matched.
            continue;
        }
        chain_t.retain(|&j| !claimed[j]);
        if chain_t.last() != Some(&b_t) {
            continue;
        }
        for &j in &chain_t {
            claimed[j] = true;
        }
        let path_s = source.path_from_root(b_s);
        let start = path_s.iter().position(|&j| j == a_s).expect("ancestor") + 1;
        let chain_s = path_s[start..].to_vec();
        let (source_fractions, ls) = fractions(source, &chain_s);
        let (target_fractions, lt) = fractions(tt, &chain_t);
        pairs.push(ChainPair {
            source: chain_s,
            target: chain_t,
            length_ratio: lt / ls,
            source_fractions,
            target_fractions,
        });
    }
    if pairs.is_empty() {
        return Err(RetargetError::NoCommonStructure);
    }

    let mut source_used = vec![false; source.len()];
    source_used[0] = true;
    for p in &pairs {
        for &s in &p.source {
            source_used[s] = true;
        }
    }
    let (source_rest_leg, source_leg) = leg(source);
    let (target_leg, _) = leg(tt);
    let mut target_depth = vec![0; tt.len()];
    for j in 1..tt.len() {
        target_depth[j] = target_depth[tt.parent(j).expect("non-root")] + 1;
    }
    Ok(BoneMap {
        pairs,
        unmapped_source: (0..source.len()).filter(|&s| !source_used[s]).collect(),
        unmapped_target: (0..tt.len()).filter(|&t| !claimed[t]).collect(),
        source_len: source.len(),
        target_len: tt.len(),
        source_rest_root: source.joint(0).rest_offset,
        source_rest_leg,
        source_leg,
        target_rest_root: tt.joint(0).rest_offset,
        target_leg,
        target_depth,
    })
}

impl BoneMap {
    pub fn record(&self, source: &SkeletonTopology, target: &TargetSkeleton) -> BoneMapRecord {
        let sn = |i: &usize| source.joint(*i).name.clone();
        let tn = |i: &usize| target.topology.joint(*i).name.clone();
        BoneMapRecord {
            pairs: self
                .pairs
                .iter()
                .map(|p| ChainPairRecord {
                    source: p.source.iter().map(sn).collect(),
                    target: p.target.iter().map(tn).collect(),
                    length_ratio: p.length_ratio,
                })
                .collect(),
            unmapped_source: self.unmapped_source.iter().map(sn).collect(),
            unmapped_target: self.unmapped_target.iter().map(tn).collect(),
        }
    }

    /// Root translation scale: target leg length over the subject's leg length.
    pub fn leg_ratio(&self, proportions: Option<&SkeletonProportions>) -> f64 {
        self.target_leg / self.source_leg_length(proportions)
    }

    fn source_leg_length(&self, proportions: Option<&SkeletonProportions>) -> f64 {
        match proportions {
            None => self.source_rest_leg,
            Some(p) => {
                let drop: f64 = self.source_leg.iter().map(|&(j, dy)| -dy * p.lengths[j]).sum();
                if drop > 0.0 {
                    drop
                } else {
                    self.source_rest_leg
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetConfig {
    /// Peak swing of unmapped target joints (tail, ears); zero holds rest.
    pub idle_amplitude_deg: f64,
    pub idle_frequency_hz: f64,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self { idle_amplitude_deg: 8.0, idle_frequency_hz: 0.5 }
    }
}

impl RetargetConfig {
    pub fn still() -> Self {
        Self { idle_amplitude_deg: 0.0, ..Self::default() }
    }
}

/// Target-skeleton animation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AvatarPose {
    pub t: f64,
    pub root_position: Vec3,
    pub root_rotation: Quat,
    pub local: Vec<Quat>,
}

impl AvatarPose {
    pub fn rest(t: f64, target: &TargetSkeleton) -> Self {
        let r = JointRotations::rest(&target.topology);
        Self { t, root_position: r.root_position, root_rotation: r.root_rotation, local: r.local }
    }

    pub fn rotations(&self) -> JointRotations {
        JointRotations {
            root_position: self.root_position,
            root_rotation: self.root_rotation,
            local: self.local.clone(),
        }
    }

    /// World joint positions at the target's rest bone lengths.
    pub fn positions(&self, target: &TargetSkeleton) -> Vec<Vec3> {
        forward_kinematics(&target.topology, &target.topology.rest_lengths(), &self.rotations())
    }
}

fn is_unit(q: &Quat) -> bool {
    (q.as_ref().norm() - 1.0).abs() <= UNIT_TOLERANCE
}

/// Cumulative chain rotation at length fraction `g`.
fn chain_rotation(local: &[Quat], fractions: &[f64], g: f64) -> Quat {
    let mut acc = Quat::identity();
    let mut prev = 0.0;
    for (q, &f) in local.iter().zip(fractions) {
        if g >= f - 1e-12 {
            acc *= q;
        } else {
            let s = ((g - prev) / (f - prev)).clamp(0.0, 1.0);
            return acc * Quat::identity().slerp(q, s);
        }
        prev = f;
    }
    acc
}

/// Transfers source joint rotations onto the target skeleton.
pub fn retarget_pose(
    map: &BoneMap,
    source: &JointRotations,
    proportions: Option<&SkeletonProportions>,
    target: &TargetSkeleton,
    t: f64,
    config: &RetargetConfig,
) -> Result<AvatarPose, RetargetError> {
    if source.local.len() != map.source_len {
        return Err(RetargetError::JointCountMismatch { expected: map.source_len, got: source.local.len() });
    }
    if !is_unit(&source.root_rotation) {
        return Err(RetargetError::UnnormalizedRotation(0));
    }
    if let Some(i) = source.local.iter().position(|q| !is_unit(q)) {
        return Err(RetargetError::UnnormalizedRotation(i));
    }
    let mut local = vec![Quat::identity(); map.target_len];
    for pair in &map.pairs {
        let src: Vec<Quat> = pair.source.iter().map(|&j| source.local[j]).collect();
        let mut before = Quat::identity();
        for (&tj, &g) in pair.target.iter().zip(&pair.target_fractions) {
            let after = chain_rotation(&src, &pair.source_fractions, g);
            local[tj] = before.inverse() * after;
            before = after;
        }
    }
    if config.idle_amplitude_deg != 0.0 {
        let tt = &target.topology;
        let amp = config.idle_amplitude_deg.to_radians();
        for &j in &map.unmapped_target {
            if j == 0 {
                continue;
            }
            let phase = std::f64::consts::TAU * config.idle_frequency_hz * t - 0.6 * map.target_depth[j] as f64;
            let axis = nalgebra::Unit::new_normalize(any_perpendicular(&tt.joint(j).rest_offset));
            local[j] = Quat::from_axis_angle(&axis, amp * phase.sin());
        }
    }
    let ratio = map.leg_ratio(proportions);
    let reference = map.source_rest_root * (map.source_leg_length(proportions) / map.source_rest_leg);
    Ok(AvatarPose {
        t,
        root_position: map.target_rest_root + (source.root_position - reference) * ratio,
        root_rotation: source.root_rotation,
        local,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use nalgebra::Vector3;

    fn human_target() -> TargetSkeleton {
        TargetSkeleton::new(fixtures::human_topology(), None, None).unwrap()
    }

    #[test]
    fn synonym_substitution() {
        let syn = default_synonyms();
        let mut table: Vec<(Vec<&str>, &str)> = syn.iter().map(|(k, v)| (tokens(k), v.as_str())).collect();
        table.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        assert_eq!(substitute("left_wrist", &table).as_deref(), Some("left_front_paw"));
        assert_eq!(substitute("spine_high", &table).as_deref(), Some("chest"));
        assert_eq!(substitute("right_hip", &table).as_deref(), Some("right_hind_hip"));
        assert_eq!(substitute("pelvis", &table), None);
    }

    #[test]
    fn human_to_human_is_identity() {
        let src = fixtures::human_topology();
        let target = human_target();
        let map = auto_map(&src, &target).unwrap();
        assert!(map.unmapped_source.is_empty() && map.unmapped_target.is_empty());
        assert_eq!(map.pairs.len(), src.len() - 1);
        for p in &map.pairs {
            assert_eq!(p.source, p.target);
            assert!((p.length_ratio - 1.0).abs() < 1e-12);
        }
        let axis = nalgebra::Unit::new_normalize(Vector3::new(0.3, -1.0, 0.2));
        let mut rot = JointRotations::rest(&src);
        for (i, q) in rot.local.iter_mut().enumerate().skip(1) {
            *q = Quat::from_axis_angle(&axis, 0.05 * i as f64);
        }
        rot.root_position = Vec3::new(0.4, 1.0, 2.5);
        rot.root_rotation = Quat::from_axis_angle(&Vector3::y_axis(), 0.7);
        let out = retarget_pose(&map, &rot, None, &target, 0.0, &RetargetConfig::default()).unwrap();
        for (a, b) in out.local.iter().zip(&rot.local) {
            assert!(a.angle_to(b) < 1e-9);
        }
        assert!((out.root_position - rot.root_position).norm() < 1e-9);
    }

    #[test]
    fn randomized_names_have_no_structure() {
        let src = fixtures::human_topology();
        let mut file = fixtures::cat_skeleton().topology.to_file();
        let renamed: BTreeMap<String, String> =
            file.joints.iter().enumerate().map(|(i, j)| (j.name.clone(), format!("q{i:02}x"))).collect();
        for j in &mut file.joints {
            j.name = renamed[&j.name].clone();
            j.parent = j.parent.as_ref().map(|p| renamed[p].clone());
        }
        let target = TargetSkeleton::from_file(&file).unwrap();
        assert_eq!(auto_map(&src, &target).unwrap_err(), RetargetError::NoCommonStructure);
    }

    #[test]
    fn cat_map_covers_limbs_and_spine() {
        let src = fixtures::human_topology();
        let cat = fixtures::cat_skeleton();
        let rec = auto_map(&src, &cat).unwrap().record(&src, &cat);
        let find = |t: &str| rec.pairs.iter().find(|p| p.target.last().map(String::as_str) == Some(t)).unwrap();
        assert_eq!(find("chest").source, ["spine_low", "spine_mid", "spine_high"]);
        assert_eq!(find("chest").target, ["spine_1", "spine_2", "spine_3", "chest"]);
        assert_eq!(find("left_front_paw").source, ["left_wrist"]);
        assert_eq!(find("left_hind_paw").target, ["left_hind_hock", "left_hind_paw"]);
        assert!(rec.unmapped_target.iter().any(|n| n == "tail_tip"));
        assert!(rec.unmapped_source.iter().any(|n| n == "left_hand"));
    }

    #[test]
    fn cat_map_matches_golden() {
        let src = fixtures::human_topology();
        let cat = fixtures::cat_skeleton();
        let rec = auto_map(&src, &cat).unwrap().record(&src, &cat);
        let golden: BoneMapRecord = serde_json::from_str(fixtures::HUMAN_TO_CAT_MAP_JSON).unwrap();
        assert_eq!(rec.unmapped_source, golden.unmapped_source);
        assert_eq!(rec.unmapped_target, golden.unmapped_target);
        assert_eq!(rec.pairs.len(), golden.pairs.len());
        for (a, b) in rec.pairs.iter().zip(&golden.pairs) {
            assert_eq!((&a.source, &a.target), (&b.source, &b.target));
            assert!((a.length_ratio - b.length_ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn rest_maps_to_rest() {
        let src = fixtures::human_topology();
        let cat = fixtures::cat_skeleton();
        let map = auto_map(&src, &cat).unwrap();
        let out = retarget_pose(&map, &JointRotations::rest(&src), None, &cat, 0.0, &RetargetConfig::still()).unwrap();
        assert!(out.local.iter().all(|q| q.angle() < 1e-12));
        assert!((out.root_position - cat.topology.joint(0).rest_offset).norm() < 1e-12);
    }

    #[test]
    fn rejects_unnormalized_rotation() {
        let src = fixtures::human_topology();
        let map = auto_map(&src, &human_target()).unwrap();
        let mut rot = JointRotations::rest(&src);
        rot.local[5] = Quat::new_unchecked(nalgebra::Quaternion::new(1.1, 0.0, 0.0, 0.0));
        let err = retarget_pose(&map, &rot, None, &human_target(), 0.0, &RetargetConfig::default()).unwrap_err();
        assert_eq!(err, RetargetError::UnnormalizedRotation(5));
    }

    #[test]
    fn chain_rotation_endpoints() {
        let qa = Quat::from_axis_angle(&Vector3::x_axis(), 0.4);
        let qb = Quat::from_axis_angle(&Vector3::z_axis(), -0.3);
        let fr = [0.25, 1.0];
        assert!(chain_rotation(&[qa, qb], &fr, 0.0).angle() < 1e-12);
        assert!(chain_rotation(&[qa, qb], &fr, 0.25).angle_to(&qa) < 1e-12);
        assert!(chain_rotation(&[qa, qb], &fr, 1.0).angle_to(&(qa * qb)) < 1e-12);
    }
}
