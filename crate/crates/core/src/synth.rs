//! Seeded procedural gesture animations with ground-truth labels, rendered
//! through a virtual stereo rig.
//!
//! Motion is authored for a unit subject (torso length 0.5 m) in the rest
//! frame (right = +X, up = +Y, forward = -Z), then scaled, turned and placed
//! in front of the cameras.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Keypoint2D, KeypointFrame2D, StereoRig};
use crate::gesture::{extract_features, FeatureFrame, GestureKind, RecognizerConfig};
use crate::math::{any_perpendicular, Vec3};
use crate::skeleton::{JointId, SkeletonPose, SkeletonTopology, JOINT_COUNT};
use crate::tracker::TrackedPose;

/// Torso length of the authored motion, meters.
pub const UNIT_TORSO: f64 = 0.5;
/// Fraction of frames that must keep every joint inside both images.
pub const MIN_VISIBLE_FRACTION: f64 = 0.95;
/// Sequences per scenario kind in the default corpus.
pub const DEFAULT_PER_KIND: usize = 20;
pub const DEFAULT_BASE_SEED: u64 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("subject fully visible in only {visible} of {frames} frames")]
    SubjectOutOfFrustum { visible: usize, frames: usize },
    #[error("invalid render settings: {0}")]
    InvalidRender(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Wave,
    Petting,
    Heart,
    Idle,
    LowWaveNegative,
    FastWalkNegative,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] =
        [Self::Wave, Self::Petting, Self::Heart, Self::Idle, Self::LowWaveNegative, Self::FastWalkNegative];

    /// Gesture labeled in this scenario, if any.
    pub fn gesture(self) -> Option<GestureKind> {
        match self {
            Self::Wave => Some(GestureKind::GreetingWave),
            Self::Petting => Some(GestureKind::AffectionateTouch),
            Self::Heart => Some(GestureKind::HeartShape),
            _ => None,
        }
    }

    pub fn default_duration(self) -> f64 {
        match self {
            Self::Heart => 5.0,
            Self::Idle => 10.0,
            _ => 6.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Wave => "wave",
            Self::Petting => "petting",
            Self::Heart => "heart",
            Self::Idle => "idle",
            Self::LowWaveNegative => "low_wave_negative",
            Self::FastWalkNegative => "fast_walk_negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub duration: f64,
    pub fps: f64,
    /// Multiplier on gesture amplitudes.
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Subject torso length, meters.
    #[serde(default = "unit_torso")]
    pub torso: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn unit_torso() -> f64 {
    UNIT_TORSO
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self { kind, duration: kind.default_duration(), fps: 30.0, amplitude: 1.0, torso: UNIT_TORSO, seed }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(10.0..=120.0).contains(&self.fps) {
            return bad("fps must lie in [10, 120]");
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 2.0) {
            return bad("amplitude must lie in (0, 2]");
        }
        if !(0.3..=0.8).contains(&self.torso) {
            return bad("torso must lie in [0.3, 0.8] m");
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }
}

/// A labeled gesture interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestureLabel {
    pub kind: GestureKind,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spec: ScenarioSpec,
    pub poses: Vec<SkeletonPose>,
    pub labels: Vec<GestureLabel>,
}

/// Minimum-jerk ease on [0, 1].
fn ease(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

fn rot_x(angle: f64, v: Vec3) -> Vec3 {
    let (s, c) = angle.sin_cos();
    Vec3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z)
}

/// Wrist target relative to the shoulder and elbow pole direction.
#[derive(Debug, Clone, Copy)]
struct ArmGoal {
    wrist: Vec3,
    pole: Vec3,
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    pelvis_offset: Vec3,
    arms: [ArmGoal; 2],
    /// Hip and knee flexion per leg, radians.
    legs: [(f64, f64); 2],
}

const SIDES: [f64; 2] = [-1.0, 1.0];

fn hanging(side: usize) -> ArmGoal {
    let s = SIDES[side];
    ArmGoal { wrist: Vec3::new(0.02 * s, -0.52, 0.0), pole: Vec3::new(0.3 * s, 0.0, 1.0) }
}

/// Blends from `a` to `b` with the lateral/forward components settling first.
fn raise_path(a: Vec3, b: Vec3, u: f64) -> Vec3 {
    let h = ease(2.0 * u);
    let v = ease(u);
    Vec3::new(a.x + (b.x - a.x) * h, a.y + (b.y - a.y) * v, a.z + (b.z - a.z) * h)
}

/// Forward arm raise: a straight-arm arc to horizontal, then up to `center`.
fn arc_raise(down: Vec3, center: Vec3, u: f64) -> Vec3 {
    let radius = 0.5;
    let front = Vec3::new(center.x, 0.0, -radius);
    if u < 0.5 {
        let phi = std::f64::consts::FRAC_PI_2 * ease(2.0 * u);
        let x = down.x + (center.x - down.x) * ease(2.0 * u);
        Vec3::new(x, -radius * phi.cos(), -radius * phi.sin())
    } else {
        front.lerp(&center, ease(2.0 * u - 1.0))
    }
}

fn lerp_goal(a: ArmGoal, b: ArmGoal, wrist: Vec3, u: f64) -> ArmGoal {
    ArmGoal { wrist, pole: a.pole.lerp(&b.pole, ease(u)) }
}

/// Per-seed variation applied on top of the authored motion.
#[derive(Debug, Clone, Copy)]
struct Variation {
    yaw: f64,
    origin: Vec3,
    lead_in: f64,
    side: usize,
    rate: f64,
}

fn breathing(t: f64) -> Vec3 {
    let a = 0.01 * UNIT_TORSO;
    Vec3::new(a * (TAU * 0.25 * t).sin(), 0.5 * a * (TAU * 0.25 * t + 1.0).sin(), 0.0)
}

/// How a positive scenario's label end is found.
enum Completion {
    /// At the qualifying reversal that satisfies the detector's count.
    Reversals,
    /// When the posture has held, with still wrists, for the hold time.
    Hold,
}

struct Motion {
    frame: Box<dyn Fn(f64) -> Frame>,
    completion: Option<Completion>,
}

fn motion(kind: ScenarioKind, amp: f64, var: Variation) -> Motion {
    let side = var.side;
    let s = SIDES[side];
    let lead = var.lead_in;
    let rest_frame =
        move |t: f64| Frame { pelvis_offset: breathing(t), arms: [hanging(0), hanging(1)], legs: [(0.0, 0.0); 2] };
    match kind {
        ScenarioKind::Idle => Motion { frame: Box::new(rest_frame), completion: None },
        ScenarioKind::Wave | ScenarioKind::LowWaveNegative => {
            let raised = kind == ScenarioKind::Wave;
            let path = if raised { arc_raise } else { raise_path };
            let center = if raised { Vec3::new(0.05 * s, 0.30, 0.0) } else { Vec3::new(0.05 * s, -0.25, 0.0) };
            let pole = Vec3::new(s, -0.3, 0.4);
            let freq = 1.0 * var.rate;
            let amplitude = 0.3 * UNIT_TORSO * amp;
            let raise = 0.8;
            let osc_start = lead + raise;
            let osc_end = osc_start + 3.0 / freq;
            let frame = move |t: f64| {
                let mut f = rest_frame(t);
                let down = hanging(side);
                let up = ArmGoal { wrist: center, pole };
                f.arms[side] = if t < lead {
                    down
                } else if t < osc_start {
                    let u = (t - lead) / raise;
                    lerp_goal(down, up, path(down.wrist, center, u), u)
                } else if t < osc_end {
                    let dx = amplitude * (TAU * freq * (t - osc_start)).sin();
                    ArmGoal { wrist: center + Vec3::new(dx * s, 0.0, 0.0), pole }
                } else {
                    let u = ((t - osc_end) / raise).min(1.0);
                    lerp_goal(up, down, path(down.wrist, center, 1.0 - u), u)
                };
                f
            };
            Motion { frame: Box::new(frame), completion: raised.then_some(Completion::Reversals) }
        }
        ScenarioKind::Petting => {
            let center = Vec3::new(-0.06 * s, -0.15, -0.25);
            let pole = Vec3::new(0.6 * s, -1.0, 0.3);
            let stroke = 0.12 * UNIT_TORSO * amp;
            // Peak stroke speed of 0.8 torso lengths per second.
            let freq = 0.8 * UNIT_TORSO * var.rate / (TAU * stroke);
            let reach = 1.2;
            let stroke_start = lead + reach;
            let stroke_end = stroke_start + 2.5;
            let frame = move |t: f64| {
                let mut f = rest_frame(t);
                let down = hanging(side);
                let there = ArmGoal { wrist: center, pole };
                f.arms[side] = if t < lead {
                    down
                } else if t < stroke_start {
                    let u = (t - lead) / reach;
                    lerp_goal(down, there, down.wrist.lerp(&center, ease(u)), u)
                } else if t < stroke_end {
                    let dy = stroke * (TAU * freq * (t - stroke_start)).sin();
                    ArmGoal { wrist: center + Vec3::new(0.0, dy, 0.0), pole }
                } else {
                    let u = ((t - stroke_end) / 0.8).min(1.0);
                    let from = center + Vec3::new(0.0, stroke * (TAU * freq * (stroke_end - stroke_start)).sin(), 0.0);
                    lerp_goal(there, down, from.lerp(&down.wrist, ease(u)), u)
                };
                f
            };
            Motion { frame: Box::new(frame), completion: Some(Completion::Reversals) }
        }
        ScenarioKind::Heart => {
            let approach = 0.7;
            let hold = 1.2;
            let hold_start = lead + approach;
            let hold_end = hold_start + hold;
            let goals = |k: usize| {
                let sk = SIDES[k];
                let shoulder_x = 0.18 * sk;
                ArmGoal { wrist: Vec3::new(0.012 * sk - shoulder_x, 0.25, -0.08), pole: Vec3::new(sk, 0.0, 0.0) }
            };
            let frame = move |t: f64| {
                let mut f = rest_frame(t);
                for k in 0..2 {
                    let down = hanging(k);
                    let up = goals(k);
                    f.arms[k] = if t < lead {
                        down
                    } else if t < hold_start {
                        let u = (t - lead) / approach;
                        lerp_goal(down, up, raise_path(down.wrist, up.wrist, u), u)
                    } else if t < hold_end {
                        up
                    } else {
                        let u = ((t - hold_end) / approach).min(1.0);
                        lerp_goal(up, down, raise_path(down.wrist, up.wrist, 1.0 - u), u)
                    };
                }
                f
            };
            Motion { frame: Box::new(frame), completion: Some(Completion::Hold) }
        }
        ScenarioKind::FastWalkNegative => {
            let cadence = 1.8 * var.rate;
            let frame = move |t: f64| {
                let phase = TAU * 0.5 * cadence * (t - lead).max(0.0);
                let walking = if t < lead { 0.0 } else { ease((t - lead) / 0.5) };
                let drift = 0.3 * (TAU * 0.1 * (t - lead).max(0.0)).sin() * walking;
                let bob = 0.02 * walking * (2.0 * phase).cos().abs();
                let mut f = rest_frame(t);
                f.pelvis_offset += Vec3::new(drift, -bob, 0.0);
                for (k, side) in SIDES.into_iter().enumerate() {
                    let sign = if k == 0 { 1.0 } else { -1.0 };
                    let swing = phase.sin() * sign;
                    let lift = swing.max(0.0);
                    f.legs[k] = (walking * 0.5 * lift, walking * 0.9 * lift);
                    // Arms swing opposite to the legs, hanging slightly forward of vertical.
                    let arm_angle = walking * (12f64.to_radians() - 8f64.to_radians() * swing);
                    let reach = 0.52;
                    let wrist = Vec3::new(0.02 * side, -reach * arm_angle.cos(), -reach * arm_angle.sin());
                    f.arms[k] = ArmGoal { wrist, pole: Vec3::new(0.3 * side, 0.0, 1.0) };
                }
                f
            };
            Motion { frame: Box::new(frame), completion: None }
        }
    }
}

/// Two-bone solve: elbow and wrist positions for a shoulder, goal and pole.
fn solve_arm(shoulder: Vec3, goal: ArmGoal, upper: f64, lower: f64) -> (Vec3, Vec3) {
    let mut d = goal.wrist;
    let reach = d.norm().clamp((upper - lower).abs() + 1e-3, upper + lower - 1e-3);
    d = if d.norm() < 1e-9 { Vec3::new(0.0, -1.0, 0.0) } else { d.normalize() };
    let cos_a = ((upper * upper + reach * reach - lower * lower) / (2.0 * upper * reach)).clamp(-1.0, 1.0);
    let sin_a = (1.0 - cos_a * cos_a).sqrt();
    let mut n = goal.pole - d * goal.pole.dot(&d);
    if n.norm() < 1e-9 {
        n = any_perpendicular(&d);
    }
    let n = n.normalize();
    let elbow = shoulder + (d * cos_a + n * sin_a) * upper;
    let target = shoulder + d * reach;
    let wrist = elbow + (target - elbow).normalize() * lower;
    (elbow, wrist)
}

/// Joint positions of one frame in the unit rest frame.
fn build_pose(topology: &SkeletonTopology, rest: &[Vec3], f: &Frame) -> Vec<Vec3> {
    let mut pos: Vec<Vec3> = rest.iter().map(|p| p + f.pelvis_offset).collect();
    let len = |j: JointId| topology.rest_length(j.index());
    let arms = [
        [JointId::LeftShoulder, JointId::LeftElbow, JointId::LeftWrist, JointId::LeftHand],
        [JointId::RightShoulder, JointId::RightElbow, JointId::RightWrist, JointId::RightHand],
    ];
    for (arm, goal) in arms.iter().zip(&f.arms) {
        let [s, e, w, h] = arm.map(|j| j.index());
        let (elbow, wrist) = solve_arm(pos[s], *goal, len(arm[1]), len(arm[2]));
        pos[e] = elbow;
        pos[w] = wrist;
        pos[h] = wrist + (wrist - elbow).normalize() * len(arm[3]);
    }
    let legs = [
        [JointId::LeftHip, JointId::LeftKnee, JointId::LeftAnkle, JointId::LeftFoot, JointId::LeftToe],
        [JointId::RightHip, JointId::RightKnee, JointId::RightAnkle, JointId::RightFoot, JointId::RightToe],
    ];
    for (leg, &(hip_flex, knee_flex)) in legs.iter().zip(&f.legs) {
        let [h, k, a, fo, to] = leg.map(|j| j.index());
        let off = |j: usize| topology.joint(j).rest_offset;
        pos[k] = pos[h] + rot_x(hip_flex, off(k));
        let shank = hip_flex - knee_flex;
        pos[a] = pos[k] + rot_x(shank, off(a));
        pos[fo] = pos[a] + rot_x(shank, off(fo));
        pos[to] = pos[fo] + rot_x(shank, off(to));
    }
    pos
}

fn variation(spec: &ScenarioSpec) -> Variation {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Variation {
        yaw: rng.random_range(-15f64..=15.0).to_radians(),
        origin: Vec3::new(rng.random_range(-0.2..=0.2), 0.0, rng.random_range(2.3..=2.7)),
        lead_in: rng.random_range(1.0..=1.3),
        side: rng.random_range(0..2),
        rate: rng.random_range(0.9..=1.1),
    }
}

fn place(p: Vec3, scale: f64, var: &Variation) -> Vec3 {
    let (s, c) = var.yaw.sin_cos();
    let q = p * scale;
    var.origin + Vec3::new(c * q.x + s * q.z, q.y, -s * q.x + c * q.z)
}

fn truth_features(poses: &[SkeletonPose]) -> Vec<Option<FeatureFrame>> {
    let mut prev: Option<FeatureFrame> = None;
    poses
        .iter()
        .map(|p| {
            let f = extract_features(&TrackedPose::from_skeleton_pose(p), prev.as_ref()).ok();
            prev = f.clone();
            f
        })
        .collect()
}

fn wave_predicate(f: &FeatureFrame) -> bool {
    (0..2).any(|k| {
        let [w, s] = [[JointId::LeftWrist, JointId::LeftShoulder], [JointId::RightWrist, JointId::RightShoulder]][k];
        matches!((f.get(w), f.get(s)), (Some(w), Some(s)) if w.y > s.y)
    })
}

fn in_touch_box(f: &FeatureFrame, k: usize, cfg: &RecognizerConfig) -> bool {
    let [w, s] = [[JointId::LeftWrist, JointId::LeftShoulder], [JointId::RightWrist, JointId::RightShoulder]][k];
    match (f.get(w), f.get(s)) {
        (Some(w), Some(s)) => {
            w.y > 0.0
                && w.y < s.y
                && (cfg.touch_forward_min..=cfg.touch_forward_max).contains(&w.z)
                && f.wrist_velocity[k].norm() <= cfg.touch_max_speed
        }
        _ => false,
    }
}

fn touch_predicate(f: &FeatureFrame) -> bool {
    let cfg = RecognizerConfig::default();
    (0..2).any(|k| in_touch_box(f, k, &cfg))
}

/// Time of the `count`-th extreme whose swing from the previous extreme lies
/// in `[min, max]`; a larger swing restarts the count.
fn qualifying_extreme(series: &[(f64, f64)], min: f64, max: f64, count: usize) -> Option<f64> {
    const JITTER: f64 = 0.005;
    let (_, first) = *series.first()?;
    let (mut anchor, mut extreme, mut rising): (f64, (f64, f64), Option<bool>) = (first, series[0], None);
    let mut n = 0;
    for &(t, x) in &series[1..] {
        let up = x > extreme.1;
        match rising {
            None if (x - extreme.1).abs() > JITTER => {
                rising = Some(up);
                extreme = (t, x);
            }
            None => {}
            Some(r) if r == up || x == extreme.1 => extreme = (t, x),
            Some(r) => {
                if (x - extreme.1).abs() <= JITTER {
                    continue;
                }
                let swing = (extreme.1 - anchor).abs();
                if swing > max {
                    n = 0;
                } else if swing >= min {
                    n += 1;
                    if n >= count {
                        return Some(extreme.0);
                    }
                }
                anchor = extreme.1;
                extreme = (t, x);
                rising = Some(!r);
            }
        }
    }
    None
}

/// First frame at least one hold time after onset whose trailing hold window
/// shows both wrists at or below the stillness speed.
fn hold_completion(feats: &[Option<FeatureFrame>], onset: f64) -> Option<f64> {
    let cfg = RecognizerConfig::default();
    let frames: Vec<&FeatureFrame> = feats.iter().flatten().filter(|f| f.t >= onset - 1e-9).collect();
    let wrists = [JointId::LeftWrist, JointId::RightWrist];
    for (i, f) in frames.iter().enumerate() {
        if !heart_predicate(f) {
            return None;
        }
        if f.t - onset < cfg.heart_hold - 1e-9 {
            continue;
        }
        let window: Vec<&&FeatureFrame> = frames[..=i].iter().filter(|g| f.t - g.t <= cfg.heart_hold + 1e-9).collect();
        let span = f.t - window[0].t;
        let still = wrists.iter().all(|&w| {
            let moved = (f.get(w).unwrap() - window[0].get(w).unwrap()).norm();
            span > 0.0 && moved / span <= cfg.heart_max_speed
        });
        if still {
            return Some(f.t);
        }
    }
    None
}

/// Label end for reversal-counted gestures, read off the noise-free
/// trajectory with the default detector thresholds.
fn reversal_completion(feats: &[Option<FeatureFrame>], kind: GestureKind, onset: f64) -> Option<f64> {
    let cfg = RecognizerConfig::default();
    let wrists = [JointId::LeftWrist, JointId::RightWrist];
    let shoulders = [JointId::LeftShoulder, JointId::RightShoulder];
    let mut best: Option<f64> = None;
    for k in 0..2 {
        let active = |f: &FeatureFrame| match kind {
            GestureKind::GreetingWave => {
                matches!((f.get(wrists[k]), f.get(shoulders[k])), (Some(w), Some(s)) if w.y > s.y)
            }
            _ => in_touch_box(f, k, &cfg),
        };
        let span: Vec<&FeatureFrame> =
            feats.iter().flatten().skip_while(|f| f.t < onset || !active(f)).take_while(|f| active(f)).collect();
        let axis = |axis: usize| -> Vec<(f64, f64)> {
            span.iter().filter_map(|f| f.get(wrists[k]).map(|w| (f.t, w[axis]))).collect()
        };
        let found = match kind {
            GestureKind::GreetingWave => {
                qualifying_extreme(&axis(0), cfg.wave_amplitude, f64::INFINITY, cfg.wave_reversals)
            }
            _ => [1, 2]
                .into_iter()
                .filter_map(|a| {
                    qualifying_extreme(&axis(a), cfg.touch_stroke_min, cfg.touch_stroke_max, cfg.touch_reversals)
                })
                .reduce(f64::min),
        };
        best = match (best, found) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
    best
}

fn heart_predicate(f: &FeatureFrame) -> bool {
    let g = |j: JointId| f.get(j).expect("truth poses are complete");
    let (lw, rw) = (g(JointId::LeftWrist), g(JointId::RightWrist));
    let chest = g(JointId::SpineHigh).y;
    (lw - rw).norm() <= 0.2
        && lw.y >= chest
        && rw.y >= chest
        && g(JointId::LeftElbow).x <= g(JointId::LeftShoulder).x - 0.1
        && g(JointId::RightElbow).x >= g(JointId::RightShoulder).x + 0.1
}

/// Generates the labeled ground-truth animation for a scenario.
pub fn generate_motion(topology: &SkeletonTopology, spec: &ScenarioSpec) -> Result<GroundTruth, SynthError> {
    spec.validate()?;
    topology.ensure_human().map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let var = variation(spec);
    let m = motion(spec.kind, spec.amplitude, var);
    let rest = topology.rest_positions();
    let scale = spec.torso / UNIT_TORSO;
    let poses: Vec<SkeletonPose> = (0..spec.frame_count())
        .map(|k| {
            let t = k as f64 / spec.fps;
            let local = build_pose(topology, &rest, &(m.frame)(t));
            let world: Vec<Vec3> = local.iter().map(|p| place(*p, scale, &var)).collect();
            SkeletonPose::from_positions(t, &world)
        })
        .collect();

    let mut labels = Vec::new();
    if let (Some(kind), Some(completion)) = (spec.kind.gesture(), m.completion.as_ref()) {
        let feats = truth_features(&poses);
        let holds = |f: &FeatureFrame| match kind {
            GestureKind::GreetingWave => wave_predicate(f),
            GestureKind::AffectionateTouch => touch_predicate(f),
            GestureKind::HeartShape => heart_predicate(f),
        };
        let onset = feats.iter().flatten().find(|f| holds(f)).map(|f| f.t);
        if let Some(t_start) = onset {
            let t_end = match completion {
                Completion::Reversals => reversal_completion(&feats, kind, t_start),
                Completion::Hold => hold_completion(&feats, t_start),
            };
            if let Some(t_end) = t_end.filter(|&e| e <= spec.duration && e > t_start) {
                labels.push(GestureLabel { kind, t_start, t_end });
            }
        }
    }
    Ok(GroundTruth { spec: *spec, poses, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    /// Pixel noise standard deviation.
    pub noise_px: f64,
    /// Per-observation drop probability.
    pub dropout: f64,
    pub seed: u64,
}

impl RenderConfig {
    pub fn clean(seed: u64) -> Self {
        Self { noise_px: 0.0, dropout: 0.0, seed }
    }
}

/// Projects the truth poses into both cameras with noise and dropout.
pub fn render_views(
    rig: &StereoRig,
    truth: &GroundTruth,
    render: &RenderConfig,
) -> Result<(Vec<KeypointFrame2D>, Vec<KeypointFrame2D>), SynthError> {
    if !(render.noise_px >= 0.0 && render.noise_px.is_finite()) {
        return Err(SynthError::InvalidRender("noise_px must be non-negative".into()));
    }
    let drop =
        Bernoulli::new(render.dropout).map_err(|_| SynthError::InvalidRender("dropout must lie in [0, 1]".into()))?;
    let noise = Normal::new(0.0, render.noise_px).expect("validated sigma");
    let conf = (1.0 - render.noise_px / 4.0).clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(render.seed);
    let cams = [&rig.left, &rig.right];
    let mut streams = (Vec::with_capacity(truth.poses.len()), Vec::with_capacity(truth.poses.len()));
    let mut visible = 0;
    for pose in &truth.poses {
        let mut all_in = true;
        let mut frames = cams.map(|c| KeypointFrame2D { t: pose.t, cam: c.id, points: [None; JOINT_COUNT] });
        for (cam, frame) in cams.iter().zip(frames.iter_mut()) {
            let (w, h) = cam.image_size();
            for (slot, p) in frame.points.iter_mut().zip(&pose.positions) {
                let Some(p) = p else { continue };
                let Ok(([u, v], _)) = cam.project(p) else {
                    all_in = false;
                    continue;
                };
                if !(0.0..w).contains(&u) || !(0.0..h).contains(&v) {
                    all_in = false;
                    continue;
                }
                let (du, dv) =
                    if render.noise_px > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
                if render.dropout > 0.0 && drop.sample(&mut rng) {
                    continue;
                }
                *slot = Some(Keypoint2D { u: u + du, v: v + dv, conf });
            }
        }
        visible += usize::from(all_in);
        let [l, r] = frames;
        streams.0.push(l);
        streams.1.push(r);
    }
    let frames = truth.poses.len();
    if frames > 0 && (visible as f64) < MIN_VISIBLE_FRACTION * frames as f64 {
        return Err(SynthError::SubjectOutOfFrustum { visible, frames });
    }
    Ok(streams)
}

/// Scenario specs for a corpus: `per_kind` sequences of each listed kind,
/// with subject size varied by seed.
pub fn corpus(kinds: &[ScenarioKind], per_kind: usize, base_seed: u64) -> Vec<ScenarioSpec> {
    let mut out = Vec::with_capacity(kinds.len() * per_kind);
    for (ki, &kind) in kinds.iter().enumerate() {
        for i in 0..per_kind {
            let seed = base_seed.wrapping_add((ki as u64) << 32).wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            let spec = ScenarioSpec { torso: rng.random_range(0.45..=0.55), ..ScenarioSpec::new(kind, seed) };
            out.push(spec);
        }
    }
    out
}

/// Every scenario kind, [`DEFAULT_PER_KIND`] sequences each.
pub fn default_corpus() -> Vec<ScenarioSpec> {
    corpus(&ScenarioKind::ALL, DEFAULT_PER_KIND, DEFAULT_BASE_SEED)
}
