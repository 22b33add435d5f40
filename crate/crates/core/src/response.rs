//! Avatar response clips: selection from the fused user state and keyframe
//! playback with cross-fades over the live mimic pose.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::UserState;
use crate::gesture::GestureKind;
use crate::math::{quat_from_array, Quat};
use crate::retarget::{AvatarPose, TargetSkeleton};

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResponseError {
    #[error("clip {0} is not in the library")]
    UnknownClip(String),
    #[error("clip {id}: {reason}")]
    InvalidClip { id: String, reason: String },
    #[error("clip library does not parse: {0}")]
    Parse(String),
}

/// On-disk keyframe: time and rotations (`[w, x, y, z]`) by joint name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeRecord {
    pub t: f64,
    pub rot: BTreeMap<String, [f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnimationClipRecord {
    pub id: String,
    pub duration: f64,
    #[serde(rename = "loop")]
    pub looping: bool,
    pub keyframes: Vec<KeyframeRecord>,
}

/// A clip resolved against a target skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimationClip {
    pub id: String,
    pub duration: f64,
    pub looping: bool,
    /// Animated joints, in target index order.
    pub joints: Vec<usize>,
    /// Keyframe times with one rotation per animated joint.
    pub keyframes: Vec<(f64, Vec<Quat>)>,
}

impl AnimationClip {
    pub fn resolve(rec: &AnimationClipRecord, target: &TargetSkeleton) -> Result<Self, ResponseError> {
        let bad = |reason: String| ResponseError::InvalidClip { id: rec.id.clone(), reason };
        if !(rec.duration > 0.0 && rec.duration.is_finite()) {
            return Err(bad("duration must be positive".into()));
        }
        let first = rec.keyframes.first().ok_or_else(|| bad("no keyframes".into()))?;
        let last = rec.keyframes.last().expect("non-empty");
        if first.t != 0.0 || (last.t - rec.duration).abs() > 1e-9 {
            return Err(bad("keyframes must start at 0 and end at the duration".into()));
        }
        if rec.keyframes.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(bad("keyframe times must increase".into()));
        }
        let names: Vec<&String> = first.rot.keys().collect();
        let mut joints = Vec::with_capacity(names.len());
        for n in &names {
            joints.push(target.topology.index_of(n).ok_or_else(|| bad(format!("unknown joint {n}")))?);
        }
        let mut keyframes = Vec::with_capacity(rec.keyframes.len());
        for k in &rec.keyframes {
            if k.rot.keys().ne(names.iter().copied()) {
                return Err(bad(format!("keyframe at {} animates a different joint set", k.t)));
            }
            let mut rots = Vec::with_capacity(names.len());
            for (n, a) in &k.rot {
                let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(bad(format!("rotation of {n} at {} is not unit length", k.t)));
                }
                rots.push(Quat::new_normalize(quat_from_array(*a)));
            }
            keyframes.push((k.t, rots));
        }
        let mut order: Vec<usize> = (0..joints.len()).collect();
        order.sort_by_key(|&i| joints[i]);
        let joints = order.iter().map(|&i| joints[i]).collect();
        let keyframes =
            keyframes.into_iter().map(|(t, r): (f64, Vec<Quat>)| (t, order.iter().map(|&i| r[i]).collect())).collect();
        Ok(Self { id: rec.id.clone(), duration: rec.duration, looping: rec.looping, joints, keyframes })
    }

    /// Rotations of the animated joints at clip time `c`.
    pub fn sample(&self, c: f64) -> Vec<Quat> {
        let c = c.clamp(0.0, self.duration);
        let k = self.keyframes.partition_point(|(t, _)| *t <= c);
        if k == 0 {
            return self.keyframes[0].1.clone();
        }
        if k == self.keyframes.len() {
            return self.keyframes[k - 1].1.clone();
        }
        let (t0, a) = &self.keyframes[k - 1];
        let (t1, b) = &self.keyframes[k];
        let s = (c - t0) / (t1 - t0);
        if s == 0.0 {
            return a.clone();
        }
        a.iter().zip(b).map(|(qa, qb)| qa.slerp(qb, s)).collect()
    }

    /// Full pose at clip time `c`, scaled toward rest by `intensity`, over `base`.
    pub fn pose(&self, c: f64, intensity: f64, base: &AvatarPose) -> AvatarPose {
        let mut out = base.clone();
        for (&j, q) in self.joints.iter().zip(self.sample(c)) {
            out.local[j] = if intensity == 1.0 { q } else { Quat::identity().slerp(&q, intensity.clamp(0.0, 1.0)) };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipLibrary {
    clips: Vec<AnimationClip>,
}

impl ClipLibrary {
    pub fn from_records(records: &[AnimationClipRecord], target: &TargetSkeleton) -> Result<Self, ResponseError> {
        let clips = records.iter().map(|r| AnimationClip::resolve(r, target)).collect::<Result<Vec<_>, _>>()?;
        for (i, c) in clips.iter().enumerate() {
            if clips[..i].iter().any(|d| d.id == c.id) {
                return Err(ResponseError::InvalidClip { id: c.id.clone(), reason: "duplicate id".into() });
            }
        }
        Ok(Self { clips })
    }

    pub fn from_json(json: &str, target: &TargetSkeleton) -> Result<Self, ResponseError> {
        let records: Vec<AnimationClipRecord> =
            serde_json::from_str(json).map_err(|e| ResponseError::Parse(e.to_string()))?;
        Self::from_records(&records, target)
    }

    pub fn get(&self, id: &str) -> Option<&AnimationClip> {
        self.clips.iter().find(|c| c.id == id)
    }

    fn index_of(&self, id: &str) -> Result<usize, ResponseError> {
        self.clips.iter().position(|c| c.id == id).ok_or_else(|| ResponseError::UnknownClip(id.into()))
    }

    pub fn clips(&self) -> &[AnimationClip] {
        &self.clips
    }
}

/// Gesture to clip selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseTable {
    pub greeting_wave: String,
    pub affectionate_touch: String,
    pub heart_shape: String,
}

impl Default for ResponseTable {
    fn default() -> Self {
        Self {
            greeting_wave: "mimic_wave".into(),
            affectionate_touch: "victory_smile".into(),
            heart_shape: "shy".into(),
        }
    }
}

impl ResponseTable {
    pub fn clip_for(&self, kind: GestureKind) -> &str {
        match kind {
            GestureKind::GreetingWave => &self.greeting_wave,
            GestureKind::AffectionateTouch => &self.affectionate_touch,
            GestureKind::HeartShape => &self.heart_shape,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaybackConfig {
    /// Cross-fade length, seconds.
    pub blend: f64,
    /// Upper bound on per-joint angular speed of the displayed pose.
    pub max_angular_velocity_deg: f64,
}

impl Default for PlaybackConfig {
    fn default() -> Self {
        Self { blend: 0.25, max_angular_velocity_deg: 720.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveClip {
    clip: usize,
    clock: f64,
    intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Idle,
    Playing { active: ActiveClip, from: Option<AvatarPose> },
    Returning { from: AvatarPose, clock: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaybackState {
    library: ClipLibrary,
    table: ResponseTable,
    config: PlaybackConfig,
    phase: Phase,
    last_gesture: Option<GestureKind>,
    last_output: Option<AvatarPose>,
}

fn blend_poses(a: &AvatarPose, b: &AvatarPose, w: f64) -> AvatarPose {
    AvatarPose {
        t: b.t,
        root_position: a.root_position.lerp(&b.root_position, w),
        root_rotation: a.root_rotation.slerp(&b.root_rotation, w),
        local: a.local.iter().zip(&b.local).map(|(qa, qb)| qa.slerp(qb, w)).collect(),
    }
}

fn limit_rate(prev: &AvatarPose, next: &mut AvatarPose, max_angle: f64) {
    let pairs = prev.local.iter().zip(next.local.iter_mut());
    for (p, q) in pairs.chain([(&prev.root_rotation, &mut next.root_rotation)]) {
        let angle = p.angle_to(q);
        if angle > max_angle {
            *q = p.slerp(q, max_angle / angle);
        }
    }
}

impl PlaybackState {
    pub fn new(library: ClipLibrary, table: ResponseTable, config: PlaybackConfig) -> Result<Self, ResponseError> {
        for kind in GestureKind::ALL {
            library.index_of(table.clip_for(kind))?;
        }
        Ok(Self { library, table, config, phase: Phase::Idle, last_gesture: None, last_output: None })
    }

    pub fn library(&self) -> &ClipLibrary {
        &self.library
    }

    /// Id of the clip in control, if any.
    pub fn active_clip(&self) -> Option<&str> {
        match &self.phase {
            Phase::Playing { active, .. } => Some(&self.library.clips[active.clip].id),
            _ => None,
        }
    }

    pub fn clip_clock(&self) -> Option<f64> {
        match &self.phase {
            Phase::Playing { active, .. } => Some(active.clock),
            _ => None,
        }
    }

    /// Starts the matching clip when the user state carries a newly set gesture.
    pub fn on_event(&mut self, user: &UserState) -> Result<(), ResponseError> {
        let previous = std::mem::replace(&mut self.last_gesture, user.active_gesture);
        let Some(kind) = user.active_gesture else { return Ok(()) };
        if previous == Some(kind) {
            return Ok(());
        }
        let clip = self.library.index_of(self.table.clip_for(kind))?;
        let intensity = user.intensity.clamp(0.0, 1.0);
        self.phase =
            Phase::Playing { active: ActiveClip { clip, clock: 0.0, intensity }, from: self.last_output.clone() };
        Ok(())
    }

    /// Advances playback by `dt` and returns the avatar pose to display.
    pub fn tick(&mut self, dt: f64, idle: &AvatarPose) -> AvatarPose {
        let blend = self.config.blend;
        let out = match &mut self.phase {
            Phase::Idle => idle.clone(),
            Phase::Playing { active, from } => {
                active.clock += dt;
                let clip = &self.library.clips[active.clip];
                if clip.looping && active.clock > clip.duration {
                    active.clock %= clip.duration;
                }
                if !clip.looping && active.clock >= clip.duration {
                    let end = clip.pose(clip.duration, active.intensity, idle);
                    let over = active.clock - clip.duration;
                    self.phase = Phase::Returning { from: end.clone(), clock: over };
                    if over >= blend {
                        self.phase = Phase::Idle;
                        idle.clone()
                    } else {
                        blend_poses(&end, idle, over / blend)
                    }
                } else {
                    let pose = clip.pose(active.clock, active.intensity, idle);
                    match from {
                        Some(f) if active.clock < blend => blend_poses(f, &pose, active.clock / blend),
                        _ => pose,
                    }
                }
            }
            Phase::Returning { from, clock } => {
                *clock += dt;
                if *clock >= blend {
                    self.phase = Phase::Idle;
                    idle.clone()
                } else {
                    blend_poses(from, idle, *clock / blend)
                }
            }
        };
        let mut out = AvatarPose { t: idle.t, ..out };
        if let Some(prev) = &self.last_output {
            limit_rate(prev, &mut out, self.config.max_angular_velocity_deg.to_radians() * dt);
        }
        self.last_output = Some(out.clone());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::collections::BTreeSet;

    fn state() -> (PlaybackState, TargetSkeleton) {
        let cat = fixtures::cat_skeleton();
        let lib = ClipLibrary::from_json(fixtures::CLIPS_JSON, &cat).unwrap();
        (PlaybackState::new(lib, ResponseTable::default(), PlaybackConfig::default()).unwrap(), cat)
    }

    fn user(kind: Option<GestureKind>) -> UserState {
        UserState {
            t: 0.0,
            emotion: crate::fusion::Emotion::Happy,
            intensity: 1.0,
            active_gesture: kind,
            sources: BTreeSet::new(),
        }
    }

    fn max_angle(a: &AvatarPose, b: &AvatarPose) -> f64 {
        a.local.iter().zip(&b.local).map(|(p, q)| p.angle_to(q)).fold(0.0, f64::max)
    }

    #[test]
    fn gesture_selects_clip() {
        let (mut s, _) = state();
        s.on_event(&user(Some(GestureKind::HeartShape))).unwrap();
        assert_eq!(s.active_clip(), Some("shy"));
        let (mut s, _) = state();
        s.on_event(&user(Some(GestureKind::GreetingWave))).unwrap();
        assert_eq!(s.active_clip(), Some("mimic_wave"));
        let (mut s, _) = state();
        s.on_event(&user(Some(GestureKind::AffectionateTouch))).unwrap();
        assert_eq!(s.active_clip(), Some("victory_smile"));
    }

    #[test]
    fn no_gesture_leaves_state_unchanged() {
        let (mut s, _) = state();
        let before = s.clone();
        s.on_event(&user(None)).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn idle_passes_through() {
        let (mut s, cat) = state();
        let mut idle = AvatarPose::rest(0.0, &cat);
        idle.local[3] = Quat::from_euler_angles(0.1, 0.2, 0.3);
        assert_eq!(s.tick(1.0 / 30.0, &idle), idle);
    }

    #[test]
    fn keyframe_is_reproduced() {
        let (mut s, cat) = state();
        let idle = AvatarPose::rest(0.0, &cat);
        s.on_event(&user(Some(GestureKind::GreetingWave))).unwrap();
        let clip = s.library().get("mimic_wave").unwrap().clone();
        let mut out = idle.clone();
        for _ in 0..6 {
            out = s.tick(0.1, &idle);
        }
        let (t, key) = &clip.keyframes[1];
        assert!((s.clip_clock().unwrap() - t).abs() < 1e-12);
        for (&j, q) in clip.joints.iter().zip(key) {
            assert!(out.local[j].angle_to(q) < 1e-9);
        }
    }

    #[test]
    fn returns_to_idle_after_clip_and_blend() {
        let (mut s, cat) = state();
        let idle = AvatarPose::rest(0.0, &cat);
        s.on_event(&user(Some(GestureKind::HeartShape))).unwrap();
        let total = 2.5 + 0.25;
        let dt = total / 110.0;
        let mut out = idle.clone();
        for _ in 0..110 {
            out = s.tick(dt, &idle);
        }
        assert!(max_angle(&out, &idle) < 1e-6);
        assert_eq!(s.active_clip(), None);
    }

    #[test]
    fn preemption_is_continuous() {
        let (mut s, cat) = state();
        let idle = AvatarPose::rest(0.0, &cat);
        let dt = 1.0 / 30.0;
        s.on_event(&user(Some(GestureKind::GreetingWave))).unwrap();
        let mut prev = idle.clone();
        for k in 0..120 {
            if k == 20 {
                s.on_event(&user(Some(GestureKind::HeartShape))).unwrap();
                assert_eq!(s.active_clip(), Some("shy"));
            }
            let out = s.tick(dt, &idle);
            assert!(max_angle(&prev, &out) <= 720f64.to_radians() * dt + 1e-9);
            prev = out;
        }
    }

    #[test]
    fn intensity_scales_toward_rest() {
        let (mut s, cat) = state();
        let idle = AvatarPose::rest(0.0, &cat);
        let mut u = user(Some(GestureKind::GreetingWave));
        u.intensity = 0.5;
        s.on_event(&u).unwrap();
        let mut out = idle.clone();
        for _ in 0..6 {
            out = s.tick(0.1, &idle);
        }
        let clip = s.library().get("mimic_wave").unwrap();
        let j = cat.topology.index_of("left_front_shoulder").unwrap();
        let k = clip.joints.iter().position(|&x| x == j).unwrap();
        assert!((out.local[j].angle() - 0.5 * clip.keyframes[1].1[k].angle()).abs() < 1e-9);
    }

    #[test]
    fn missing_table_clip_is_rejected() {
        let cat = fixtures::cat_skeleton();
        let lib = ClipLibrary::from_json(fixtures::CLIPS_JSON, &cat).unwrap();
        let table = ResponseTable { heart_shape: "blush".into(), ..Default::default() };
        assert_eq!(
            PlaybackState::new(lib, table, PlaybackConfig::default()).unwrap_err(),
            ResponseError::UnknownClip("blush".into())
        );
    }

    #[test]
    fn clip_validation() {
        let cat = fixtures::cat_skeleton();
        let bad = r#"[{"id":"x","duration":1.0,"loop":false,"keyframes":[{"t":0.0,"rot":{"head":[1,0,0,0]}},{"t":0.5,"rot":{"head":[1,0,0,0]}}]}]"#;
        assert!(matches!(ClipLibrary::from_json(bad, &cat), Err(ResponseError::InvalidClip { .. })));
        let bad = r#"[{"id":"x","duration":1.0,"loop":false,"keyframes":[{"t":0.0,"rot":{"head":[1,0,0,0]}},{"t":1.0,"rot":{"head":[2,0,0,0]}}]}]"#;
        assert!(matches!(ClipLibrary::from_json(bad, &cat), Err(ResponseError::InvalidClip { .. })));
    }
}
