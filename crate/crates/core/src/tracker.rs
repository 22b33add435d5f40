//! Per-joint alpha-beta filtering with coasting through short occlusions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec3;
use crate::skeleton::{SkeletonPose, JOINT_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("timestamp {t} does not advance past {last}")]
    NonMonotonicTimestamp { t: f64, last: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Frames a joint may be predicted without a measurement.
    pub max_coast: u32,
    /// Confidence multiplier per coasted frame.
    pub conf_decay: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.1, max_coast: 10, conf_decay: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct JointTrack {
    position: Vec3,
    velocity: Vec3,
    conf: f64,
    frames_since_measurement: u32,
    measurements: u32,
    measured_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedPose {
    pub t: f64,
    pub positions: [Option<Vec3>; JOINT_COUNT],
    pub conf: [f64; JOINT_COUNT],
    /// m/s, zero for missing joints.
    pub velocity: [Vec3; JOINT_COUNT],
    pub coasting: [bool; JOINT_COUNT],
}

impl TrackedPose {
    pub fn to_skeleton_pose(&self) -> SkeletonPose {
        SkeletonPose { t: self.t, positions: self.positions, conf: self.conf }
    }

    pub fn from_skeleton_pose(pose: &SkeletonPose) -> Self {
        Self {
            t: pose.t,
            positions: pose.positions,
            conf: pose.conf,
            velocity: [Vec3::zeros(); JOINT_COUNT],
            coasting: [false; JOINT_COUNT],
        }
    }
}

/// Filter state for one tracked subject.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    joints: [Option<JointTrack>; JOINT_COUNT],
    last_t: Option<f64>,
    config: TrackerConfig,
}

impl TrackerState {
    pub fn new(config: TrackerConfig) -> Self {
        Self { joints: [None; JOINT_COUNT], last_t: None, config }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn last_t(&self) -> Option<f64> {
        self.last_t
    }

    /// Frames since the last measurement of `joint`, if it is being tracked.
    pub fn frames_since_measurement(&self, joint: usize) -> Option<u32> {
        self.joints[joint].map(|j| j.frames_since_measurement)
    }

    /// Forgets all history; the next step starts cold.
    pub fn reset(&mut self) {
        self.joints = [None; JOINT_COUNT];
        self.last_t = None;
    }

    /// Advances the filter to `pose.t`.
    ///
    /// A joint's first measurement initializes its position and the second
    /// initializes velocity by finite difference, so a constant-velocity
    /// joint has zero residual from the third frame on.
    pub fn step(&mut self, pose: &SkeletonPose) -> Result<TrackedPose, TrackerError> {
        let t = pose.t;
        let dt = match self.last_t {
            Some(last) if t <= last => return Err(TrackerError::NonMonotonicTimestamp { t, last }),
            Some(last) => t - last,
            None => 0.0,
        };
        self.last_t = Some(t);
        let cfg = self.config;
        let mut out = TrackedPose {
            t,
            positions: [None; JOINT_COUNT],
            conf: [0.0; JOINT_COUNT],
            velocity: [Vec3::zeros(); JOINT_COUNT],
            coasting: [false; JOINT_COUNT],
        };

        for j in 0..JOINT_COUNT {
            let measured = pose.positions[j];
            let next = match (self.joints[j], measured) {
                (None, None) => None,
                (None, Some(z)) => Some(JointTrack {
                    position: z,
                    velocity: Vec3::zeros(),
                    conf: pose.conf[j],
                    frames_since_measurement: 0,
                    measurements: 1,
                    measured_at: t,
                }),
                (Some(track), Some(z)) => {
                    let predicted = track.position + track.velocity * dt;
                    let (position, velocity) = if track.measurements == 1 {
                        (z, (z - track.position) / (t - track.measured_at))
                    } else {
                        let r = z - predicted;
                        (predicted + r * cfg.alpha, track.velocity + r * (cfg.beta / dt))
                    };
                    Some(JointTrack {
                        position,
                        velocity,
                        conf: pose.conf[j],
                        frames_since_measurement: 0,
                        measurements: track.measurements.saturating_add(1),
                        measured_at: t,
                    })
                }
                (Some(track), None) if track.frames_since_measurement < cfg.max_coast => Some(JointTrack {
                    position: track.position + track.velocity * dt,
                    conf: track.conf * cfg.conf_decay,
                    frames_since_measurement: track.frames_since_measurement + 1,
                    ..track
                }),
                (Some(_), None) => None,
            };
            self.joints[j] = next;
            if let Some(track) = next {
                out.positions[j] = Some(track.position);
                out.conf[j] = track.conf.clamp(0.0, 1.0);
                out.velocity[j] = track.velocity;
                out.coasting[j] = track.frames_since_measurement > 0;
            }
        }
        Ok(out)
    }
}

impl Default for TrackerState {
    fn default() -> Self {
        Self::new(TrackerConfig::default())
    }
}
