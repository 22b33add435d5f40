//! Body-centric features and temporal detectors for the three interaction
//! gestures: greeting wave, affectionate touch (petting) and heart shape.
//!
//! All distances are in torso units (pelvis to neck) and all speeds in torso
//! units per second, so thresholds do not depend on subject size.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{horizontal, Vec3};
use crate::skeleton::{BodyBasis, JointId, JOINT_COUNT};
use crate::tracker::TrackedPose;

const MIN_TORSO: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GestureError {
    #[error("pose lacks {0}")]
    MissingJoint(&'static str),
    #[error("body basis is degenerate (hips coincide or torso too short)")]
    DegenerateBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureKind {
    GreetingWave,
    AffectionateTouch,
    HeartShape,
}

impl GestureKind {
    pub const ALL: [GestureKind; 3] = [Self::GreetingWave, Self::AffectionateTouch, Self::HeartShape];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestureEvent {
    pub kind: GestureKind,
    pub t_start: f64,
    pub t_end: f64,
    pub confidence: f64,
}

/// Left and right wrist, in that order.
pub const WRISTS: [JointId; 2] = [JointId::LeftWrist, JointId::RightWrist];
const SHOULDERS: [JointId; 2] = [JointId::LeftShoulder, JointId::RightShoulder];
const ELBOWS: [JointId; 2] = [JointId::LeftElbow, JointId::RightElbow];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub t: f64,
    /// Pelvis to neck distance, meters.
    pub torso: f64,
    pub basis: BodyBasis,
    /// Body-frame (right, up, forward) coordinates divided by the torso length.
    pub joints: [Option<Vec3>; JOINT_COUNT],
    pub conf: [f64; JOINT_COUNT],
    /// Left and right wrist velocity in the body frame, torso units per second.
    pub wrist_velocity: [Vec3; 2],
}

impl FeatureFrame {
    pub fn get(&self, j: JointId) -> Option<Vec3> {
        self.joints[j.index()]
    }
}

/// Builds the feature frame for one pose; velocities are backward
/// differences against `prev` (zero when absent).
pub fn extract_features(pose: &TrackedPose, prev: Option<&FeatureFrame>) -> Result<FeatureFrame, GestureError> {
    extract_with_heading(pose, prev, 0.0)
}

/// As [`extract_features`], with the body heading low-pass filtered against
/// `prev.basis` using time constant `heading_tau` seconds (0 disables).
pub fn extract_with_heading(
    pose: &TrackedPose,
    prev: Option<&FeatureFrame>,
    heading_tau: f64,
) -> Result<FeatureFrame, GestureError> {
    let get = |j: JointId| pose.positions[j.index()].ok_or(GestureError::MissingJoint(j.name()));
    let pelvis = get(JointId::Pelvis)?;
    let neck = get(JointId::Neck)?;
    let mut basis = BodyBasis::from_hips(pelvis, get(JointId::LeftHip)?, get(JointId::RightHip)?)
        .ok_or(GestureError::DegenerateBasis)?;
    let torso = (neck - pelvis).norm();
    if torso < MIN_TORSO {
        return Err(GestureError::DegenerateBasis);
    }
    let prev = prev.filter(|p| pose.t > p.t);
    if let Some(p) = prev.filter(|_| heading_tau > 0.0) {
        let k = (-(pose.t - p.t) / heading_tau).exp();
        let blended = horizontal(&(p.basis.right * k + basis.right * (1.0 - k)));
        if blended.norm() > 1e-9 {
            let right = blended.normalize();
            basis = BodyBasis { right, forward: basis.up.cross(&right), ..basis };
        }
    }
    let mut joints = [None; JOINT_COUNT];
    for (slot, p) in joints.iter_mut().zip(&pose.positions) {
        *slot = p.map(|p| basis.local(&p) / torso);
    }
    let mut wrist_velocity = [Vec3::zeros(); 2];
    if let Some(prev) = prev {
        for (v, w) in wrist_velocity.iter_mut().zip(WRISTS) {
            if let (Some(a), Some(b)) = (joints[w.index()], prev.joints[w.index()]) {
                *v = (a - b) / (pose.t - prev.t);
            }
        }
    }
    Ok(FeatureFrame { t: pose.t, torso, basis, joints, conf: pose.conf, wrist_velocity })
}

/// Keeps the previous frame for velocity differencing and heading filtering.
#[derive(Debug, Clone, Default)]
pub struct FeatureExtractor {
    prev: Option<FeatureFrame>,
    heading_tau: f64,
}

impl FeatureExtractor {
    pub fn new(heading_tau: f64) -> Self {
        Self { prev: None, heading_tau }
    }

    pub fn extract(&mut self, pose: &TrackedPose) -> Result<FeatureFrame, GestureError> {
        let f = extract_with_heading(pose, self.prev.as_ref(), self.heading_tau)?;
        self.prev = Some(f.clone());
        Ok(f)
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }
}

/// Detector thresholds. Lengths in torso units, speeds in torso units/s,
/// times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerConfig {
    /// Minimum gap between the end of one event and the start of the next of
    /// the same kind.
    pub refractory: f64,
    /// A detector stays armed through predicate dropouts shorter than this.
    pub release_time: f64,
    /// Time constant of the body heading filter.
    pub heading_smoothing: f64,
    /// Span of the moving average fed to the reversal counters.
    pub reversal_smoothing: f64,

    pub wave_amplitude: f64,
    pub wave_reversals: usize,
    pub wave_window: f64,
    /// Retreat from an extreme needed to confirm a lateral reversal.
    pub wave_hysteresis: f64,

    pub touch_forward_min: f64,
    pub touch_forward_max: f64,
    pub touch_max_speed: f64,
    /// Span over which wrist speed is averaged for the touch speed gate.
    pub touch_speed_window: f64,
    pub touch_stroke_min: f64,
    pub touch_stroke_max: f64,
    pub touch_reversals: usize,
    pub touch_window: f64,
    pub touch_hysteresis: f64,

    pub heart_max_wrist_distance: f64,
    pub heart_elbow_out: f64,
    /// Mean wrist speed over the hold span.
    pub heart_max_speed: f64,
    pub heart_hold: f64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            refractory: 1.0,
            release_time: 0.2,
            heading_smoothing: 0.3,
            reversal_smoothing: 0.2,
            wave_amplitude: 0.25,
            wave_reversals: 2,
            wave_window: 2.0,
            wave_hysteresis: 0.05,
            touch_forward_min: 0.2,
            touch_forward_max: 0.8,
            touch_max_speed: 1.5,
            touch_speed_window: 0.25,
            touch_stroke_min: 0.1,
            touch_stroke_max: 0.4,
            touch_reversals: 2,
            touch_window: 2.5,
            touch_hysteresis: 0.06,
            heart_max_wrist_distance: 0.2,
            heart_elbow_out: 0.1,
            heart_max_speed: 0.2,
            heart_hold: 0.8,
        }
    }
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("refractory", self.refractory),
            ("wave_amplitude", self.wave_amplitude),
            ("wave_window", self.wave_window),
            ("wave_hysteresis", self.wave_hysteresis),
            ("touch_forward_max", self.touch_forward_max),
            ("touch_max_speed", self.touch_max_speed),
            ("touch_speed_window", self.touch_speed_window),
            ("touch_stroke_min", self.touch_stroke_min),
            ("touch_stroke_max", self.touch_stroke_max),
            ("touch_window", self.touch_window),
            ("touch_hysteresis", self.touch_hysteresis),
            ("heart_max_wrist_distance", self.heart_max_wrist_distance),
            ("heart_elbow_out", self.heart_elbow_out),
            ("heart_max_speed", self.heart_max_speed),
            ("heart_hold", self.heart_hold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        let non_negative = [self.release_time, self.touch_forward_min, self.heading_smoothing, self.reversal_smoothing];
        if non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err("release_time, touch_forward_min and smoothing spans must be non-negative".into());
        }
        if self.touch_forward_min >= self.touch_forward_max || self.touch_stroke_min >= self.touch_stroke_max {
            return Err("touch ranges must satisfy min < max".into());
        }
        if self.wave_reversals == 0 || self.touch_reversals == 0 {
            return Err("reversal counts must be at least 1".into());
        }
        Ok(())
    }
}

/// Turning-point detector with hysteresis on a scalar signal.
#[derive(Debug, Clone, Default)]
struct Zigzag {
    dir: i8,
    extreme: f64,
    previous_extreme: f64,
    lo: f64,
    hi: f64,
    started: bool,
}

#[derive(Debug, Clone, Copy)]
struct Reversal {
    /// Distance between this turning point and the previous one.
    swing: f64,
}

impl Zigzag {
    fn update(&mut self, x: f64, h: f64) -> Option<Reversal> {
        if !self.started {
            *self = Self { lo: x, hi: x, extreme: x, started: true, ..Self::default() };
            return None;
        }
        match self.dir {
            0 => {
                if x - self.lo >= h {
                    self.dir = 1;
                    self.previous_extreme = self.lo;
                    self.extreme = x;
                } else if self.hi - x >= h {
                    self.dir = -1;
                    self.previous_extreme = self.hi;
                    self.extreme = x;
                } else {
                    self.lo = self.lo.min(x);
                    self.hi = self.hi.max(x);
                }
                None
            }
            d => {
                let d = d as f64;
                if (x - self.extreme) * d > 0.0 {
                    self.extreme = x;
                    None
                } else if (self.extreme - x) * d >= h {
                    let r = Reversal { swing: (self.extreme - self.previous_extreme).abs() };
                    self.previous_extreme = self.extreme;
                    self.extreme = x;
                    self.dir = -self.dir;
                    Some(r)
                } else {
                    None
                }
            }
        }
    }
}

/// Armed/released bookkeeping shared by all detectors.
#[derive(Debug, Clone, Default)]
struct Gate {
    active_since: Option<f64>,
    failing_since: Option<f64>,
    fired: bool,
    conf_sum: f64,
    conf_frames: usize,
}

enum GateChange {
    Started,
    Held,
    Released,
    Idle,
}

impl Gate {
    fn update(&mut self, ok: bool, t: f64, release: f64) -> GateChange {
        match (self.active_since.is_some(), ok) {
            (false, false) => GateChange::Idle,
            (false, true) => {
                *self = Gate { active_since: Some(t), ..Gate::default() };
                GateChange::Started
            }
            (true, true) => {
                self.failing_since = None;
                GateChange::Held
            }
            (true, false) => {
                let since = *self.failing_since.get_or_insert(t);
                if t - since >= release {
                    *self = Gate::default();
                    GateChange::Released
                } else {
                    GateChange::Held
                }
            }
        }
    }

    fn accumulate(&mut self, conf: f64) {
        self.conf_sum += conf;
        self.conf_frames += 1;
    }

    fn confidence(&self) -> f64 {
        if self.conf_frames == 0 {
            0.0
        } else {
            (self.conf_sum / self.conf_frames as f64).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, Default)]
struct WaveSide {
    gate: Gate,
    lateral: Zigzag,
    reversals: VecDeque<f64>,
}

#[derive(Debug, Clone, Default)]
struct TouchSide {
    gate: Gate,
    axes: [Zigzag; 2],
    reversals: VecDeque<f64>,
}

#[derive(Debug, Clone, Default)]
struct HeartState {
    gate: Gate,
}

#[derive(Debug, Clone)]
struct HistoryEntry {
    t: f64,
    wrists: [Option<Vec3>; 2],
}

/// Per-session gesture state machines.
#[derive(Debug, Clone)]
pub struct GestureRecognizer {
    config: RecognizerConfig,
    wave: [WaveSide; 2],
    touch: [TouchSide; 2],
    heart: HeartState,
    last_end: [Option<f64>; 3],
    history: VecDeque<HistoryEntry>,
    last_t: Option<f64>,
}

fn arm_conf(f: &FeatureFrame, side: usize) -> f64 {
    [SHOULDERS[side], ELBOWS[side], WRISTS[side]].iter().map(|j| f.conf[j.index()]).sum::<f64>() / 3.0
}

impl GestureRecognizer {
    pub fn new(config: RecognizerConfig) -> Self {
        Self {
            config,
            wave: Default::default(),
            touch: Default::default(),
            heart: HeartState::default(),
            last_end: [None; 3],
            history: VecDeque::new(),
            last_t: None,
        }
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    fn in_refractory(&self, kind: GestureKind, t: f64) -> bool {
        self.last_end[kind.index()].is_some_and(|end| t - end < self.config.refractory)
    }

    /// Wrist position at the newest history entry at least `span` seconds old.
    fn wrist_at(&self, side: usize, t: f64, span: f64) -> Option<(f64, Vec3)> {
        let entry = self.history.iter().rev().find(|e| t - e.t >= span - 1e-9)?;
        entry.wrists[side].map(|p| (entry.t, p))
    }

    /// Mean wrist position over the trailing smoothing span.
    fn smoothed_wrist(&self, side: usize, t: f64) -> Option<Vec3> {
        let span = self.config.reversal_smoothing;
        let (sum, n) = self
            .history
            .iter()
            .rev()
            .take_while(|e| t - e.t <= span + 1e-9)
            .filter_map(|e| e.wrists[side])
            .fold((Vec3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    fn mean_speed(&self, side: usize, f: &FeatureFrame, span: f64) -> Option<f64> {
        let now = f.get(WRISTS[side])?;
        let (t0, p0) = self.wrist_at(side, f.t, span)?;
        Some((now - p0).norm() / (f.t - t0))
    }

    /// Feeds one frame and returns any gestures completed at it.
    pub fn step(&mut self, f: &FeatureFrame) -> Vec<GestureEvent> {
        if self.last_t.is_some_and(|last| f.t <= last) {
            return Vec::new();
        }
        self.last_t = Some(f.t);
        self.history.push_back(HistoryEntry { t: f.t, wrists: WRISTS.map(|w| f.get(w)) });
        let horizon =
            self.config.heart_hold.max(self.config.touch_speed_window).max(self.config.reversal_smoothing) + 0.5;
        while self.history.front().is_some_and(|e| f.t - e.t > horizon) {
            self.history.pop_front();
        }

        let mut events = Vec::new();
        if let Some(e) = self.step_wave(f) {
            events.push(e);
        }
        if let Some(e) = self.step_touch(f) {
            events.push(e);
        }
        if let Some(e) = self.step_heart(f) {
            events.push(e);
        }
        for e in &events {
            self.last_end[e.kind.index()] = Some(e.t_end);
        }
        events
    }

    fn step_wave(&mut self, f: &FeatureFrame) -> Option<GestureEvent> {
        let cfg = self.config;
        let blocked = self.in_refractory(GestureKind::GreetingWave, f.t);
        let mut fired = None;
        for side in 0..2 {
            let raised = match (f.get(WRISTS[side]), f.get(SHOULDERS[side])) {
                (Some(w), Some(s)) => w.y > s.y,
                _ => false,
            };
            let smoothed = self.smoothed_wrist(side, f.t);
            let st = &mut self.wave[side];
            match st.gate.update(raised && !(blocked && st.gate.active_since.is_none()), f.t, cfg.release_time) {
                GateChange::Idle | GateChange::Released => continue,
                GateChange::Started => {
                    st.lateral = Zigzag::default();
                    st.reversals.clear();
                }
                GateChange::Held => {}
            }
            st.gate.accumulate(arm_conf(f, side));
            let Some(w) = smoothed else { continue };
            if let Some(r) = st.lateral.update(w.x, cfg.wave_hysteresis) {
                if r.swing >= cfg.wave_amplitude {
                    st.reversals.push_back(f.t);
                }
            }
            while st.reversals.front().is_some_and(|&rt| f.t - rt > cfg.wave_window) {
                st.reversals.pop_front();
            }
            if !st.gate.fired && fired.is_none() && st.reversals.len() >= cfg.wave_reversals {
                let start = st.gate.active_since.expect("active");
                fired = Some(GestureEvent {
                    kind: GestureKind::GreetingWave,
                    t_start: start,
                    t_end: f.t,
                    confidence: st.gate.confidence(),
                });
            }
        }
        if fired.is_some() {
            for st in &mut self.wave {
                st.gate.fired = st.gate.active_since.is_some();
                st.reversals.clear();
            }
        }
        fired
    }

    fn step_touch(&mut self, f: &FeatureFrame) -> Option<GestureEvent> {
        let cfg = self.config;
        let blocked = self.in_refractory(GestureKind::AffectionateTouch, f.t);
        let mut fired = None;
        for side in 0..2 {
            let speed = self.mean_speed(side, f, cfg.touch_speed_window);
            let in_box = match (f.get(WRISTS[side]), f.get(SHOULDERS[side])) {
                (Some(w), Some(s)) => {
                    w.y > 0.0
                        && w.y < s.y
                        && (cfg.touch_forward_min..=cfg.touch_forward_max).contains(&w.z)
                        && speed.is_some_and(|v| v <= cfg.touch_max_speed)
                }
                _ => false,
            };
            let smoothed = self.smoothed_wrist(side, f.t);
            let st = &mut self.touch[side];
            match st.gate.update(in_box && !(blocked && st.gate.active_since.is_none()), f.t, cfg.release_time) {
                GateChange::Idle | GateChange::Released => continue,
                GateChange::Started => {
                    st.axes = Default::default();
                    st.reversals.clear();
                }
                GateChange::Held => {}
            }
            st.gate.accumulate(arm_conf(f, side));
            let Some(w) = smoothed else { continue };
            for (axis, x) in st.axes.iter_mut().zip([w.y, w.z]) {
                if let Some(r) = axis.update(x, cfg.touch_hysteresis) {
                    if r.swing > cfg.touch_stroke_max {
                        st.reversals.clear();
                    } else if r.swing >= cfg.touch_stroke_min {
                        st.reversals.push_back(f.t);
                    }
                }
            }
            while st.reversals.front().is_some_and(|&rt| f.t - rt > cfg.touch_window) {
                st.reversals.pop_front();
            }
            if !st.gate.fired && fired.is_none() && st.reversals.len() >= cfg.touch_reversals {
                fired = Some(GestureEvent {
                    kind: GestureKind::AffectionateTouch,
                    t_start: st.gate.active_since.expect("active"),
                    t_end: f.t,
                    confidence: st.gate.confidence(),
                });
            }
        }
        if fired.is_some() {
            for st in &mut self.touch {
                st.gate.fired = st.gate.active_since.is_some();
                st.reversals.clear();
            }
        }
        fired
    }

    fn heart_posture(&self, f: &FeatureFrame) -> bool {
        let cfg = &self.config;
        let (Some(lw), Some(rw)) = (f.get(WRISTS[0]), f.get(WRISTS[1])) else { return false };
        let (Some(le), Some(re)) = (f.get(ELBOWS[0]), f.get(ELBOWS[1])) else { return false };
        let (Some(ls), Some(rs)) = (f.get(SHOULDERS[0]), f.get(SHOULDERS[1])) else { return false };
        let Some(chest) = f.get(JointId::SpineHigh) else { return false };
        (lw - rw).norm() <= cfg.heart_max_wrist_distance
            && lw.y >= chest.y
            && rw.y >= chest.y
            && le.x <= ls.x - cfg.heart_elbow_out
            && re.x >= rs.x + cfg.heart_elbow_out
    }

    fn step_heart(&mut self, f: &FeatureFrame) -> Option<GestureEvent> {
        let cfg = self.config;
        let blocked = self.in_refractory(GestureKind::HeartShape, f.t);
        let posture = self.heart_posture(f);
        let fresh = self.heart.gate.active_since.is_none();
        match self.heart.gate.update(posture && !(blocked && fresh), f.t, cfg.release_time) {
            GateChange::Idle | GateChange::Released => return None,
            GateChange::Started | GateChange::Held => {}
        }
        self.heart.gate.accumulate(0.5 * (arm_conf(f, 0) + arm_conf(f, 1)));
        let start = self.heart.gate.active_since.expect("active");
        if self.heart.gate.fired || f.t - start < cfg.heart_hold - 1e-9 {
            return None;
        }
        let still =
            (0..2).all(|side| self.mean_speed(side, f, cfg.heart_hold).is_some_and(|v| v <= cfg.heart_max_speed));
        if !still {
            return None;
        }
        self.heart.gate.fired = true;
        Some(GestureEvent {
            kind: GestureKind::HeartShape,
            t_start: start,
            t_end: f.t,
            confidence: self.heart.gate.confidence(),
        })
    }
}

impl Default for GestureRecognizer {
    fn default() -> Self {
        Self::new(RecognizerConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::skeleton::SkeletonPose;
    use nalgebra::{Rotation3, Vector3};

    fn rest_tracked() -> TrackedPose {
        let topo = fixtures::human_topology();
        TrackedPose::from_skeleton_pose(&SkeletonPose::from_positions(0.0, &topo.rest_positions()))
    }

    fn transform(pose: &TrackedPose, f: impl Fn(Vec3) -> Vec3) -> TrackedPose {
        let mut out = pose.clone();
        for p in out.positions.iter_mut().flatten() {
            *p = f(*p);
        }
        out
    }

    fn assert_same(a: &FeatureFrame, b: &FeatureFrame) {
        assert!((a.basis.right - a.basis.up.cross(&a.basis.forward).scale(-1.0)).norm() < 1e-12);
        for (x, y) in a.joints.iter().zip(&b.joints) {
            assert!((x.unwrap() - y.unwrap()).norm() < 1e-9);
        }
    }

    #[test]
    fn features_invariant_to_scale_rotation_translation() {
        let pose = rest_tracked();
        let base = extract_features(&pose, None).unwrap();
        let pelvis = pose.positions[0].unwrap();
        let scaled = transform(&pose, |p| pelvis + (p - pelvis) * 2.0);
        assert_same(&base, &extract_features(&scaled, None).unwrap());
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2);
        let moved = transform(&pose, |p| rot * p + Vec3::new(3.0, 0.0, 0.0));
        assert_same(&base, &extract_features(&moved, None).unwrap());
    }

    #[test]
    fn rest_wrist_features_match_golden() {
        let golden: serde_json::Value = serde_json::from_str(fixtures::REST_WRIST_FEATURES_JSON).unwrap();
        let f = extract_features(&rest_tracked(), None).unwrap();
        assert!((f.torso - golden["torso"].as_f64().unwrap()).abs() < 1e-9);
        for (w, key) in WRISTS.iter().zip(["left_wrist", "right_wrist"]) {
            let want: Vec<f64> = serde_json::from_value(golden[key].clone()).unwrap();
            assert!((f.get(*w).unwrap() - Vec3::new(want[0], want[1], want[2])).norm() < 1e-9);
        }
    }

    #[test]
    fn features_need_hips_and_torso() {
        let mut pose = rest_tracked();
        pose.positions[JointId::Neck.index()] = None;
        assert_eq!(extract_features(&pose, None).unwrap_err(), GestureError::MissingJoint("neck"));
        let mut pose = rest_tracked();
        pose.positions[JointId::RightHip.index()] = pose.positions[JointId::LeftHip.index()];
        assert_eq!(extract_features(&pose, None).unwrap_err(), GestureError::DegenerateBasis);
    }

    #[test]
    fn wrist_velocity_backward_difference() {
        let pose = rest_tracked();
        let mut ex = FeatureExtractor::default();
        let f0 = ex.extract(&pose).unwrap();
        assert_eq!(f0.wrist_velocity, [Vec3::zeros(); 2]);
        let mut next = pose.clone();
        next.t = 0.1;
        let w = JointId::RightWrist.index();
        next.positions[w] = Some(next.positions[w].unwrap() + Vec3::new(0.0, 0.05, 0.0));
        let f1 = ex.extract(&next).unwrap();
        assert!((f1.wrist_velocity[1] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
        assert_eq!(f1.wrist_velocity[0], Vec3::zeros());
    }

    #[test]
    fn idle_rest_pose_emits_nothing() {
        let pose = rest_tracked();
        let mut ex = FeatureExtractor::default();
        let mut rec = GestureRecognizer::default();
        for k in 0..300 {
            let mut p = pose.clone();
            p.t = k as f64 / 30.0;
            assert!(rec.step(&ex.extract(&p).unwrap()).is_empty());
        }
    }

    #[test]
    fn zigzag_reports_turning_points() {
        let mut z = Zigzag::default();
        let mut out = Vec::new();
        for k in 0..200 {
            let t = k as f64 * 0.01;
            if let Some(r) = z.update((t * std::f64::consts::TAU).sin(), 0.1) {
                out.push(r);
            }
        }
        assert_eq!(out.len(), 4);
        assert!((out[0].swing - 1.0).abs() < 1e-9);
        assert!((out[1].swing - 2.0).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(RecognizerConfig::default().validate().is_ok());
        let bad = RecognizerConfig { heart_hold: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RecognizerConfig { touch_stroke_min: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<RecognizerConfig>(r#"{"wave_amplitud": 0.3}"#).is_err());
    }
}
