//! JSON Lines records for keypoint streams, poses, events and animation.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Keypoint2D, KeypointFrame2D};
use crate::gesture::GestureEvent;
use crate::math::{quat_from_array, quat_to_array, Quat, Vec3};
use crate::pipeline::FrameOutput;
use crate::retarget::AvatarPose;
use crate::skeleton::{SkeletonPose, JOINT_COUNT};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FormatError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self::Malformed { line, message: message.into() }
    }
}

/// Reads one record per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FormatError::at(i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, records: &[T]) -> Result<(), FormatError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointRecord {
    pub t: f64,
    pub cam: u32,
    pub pts: Vec<Option<[f64; 3]>>,
}

impl From<&KeypointFrame2D> for KeypointRecord {
    fn from(f: &KeypointFrame2D) -> Self {
        Self { t: f.t, cam: f.cam, pts: f.points.iter().map(|p| p.map(|p| [p.u, p.v, p.conf])).collect() }
    }
}

impl KeypointRecord {
    pub fn to_frame(&self) -> Result<KeypointFrame2D, String> {
        if self.pts.len() != JOINT_COUNT {
            return Err(format!("expected {JOINT_COUNT} points, found {}", self.pts.len()));
        }
        if !self.t.is_finite() {
            return Err("timestamp is not finite".into());
        }
        let mut points = [None; JOINT_COUNT];
        for (slot, p) in points.iter_mut().zip(&self.pts) {
            if let Some([u, v, conf]) = *p {
                if !(u.is_finite() && v.is_finite() && (0.0..=1.0).contains(&conf)) {
                    return Err("point values out of range".into());
                }
                *slot = Some(Keypoint2D { u, v, conf });
            }
        }
        Ok(KeypointFrame2D { t: self.t, cam: self.cam, points })
    }
}

/// Reads a keypoint stream, reporting the offending line on bad records.
pub fn read_keypoints(reader: impl BufRead) -> Result<Vec<KeypointFrame2D>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: KeypointRecord = serde_json::from_str(&line).map_err(|e| FormatError::at(i + 1, e.to_string()))?;
        out.push(rec.to_frame().map_err(|m| FormatError::at(i + 1, m))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub t: f64,
    pub joints: Vec<Option<[f64; 4]>>,
}

impl From<&SkeletonPose> for PoseRecord {
    fn from(p: &SkeletonPose) -> Self {
        Self { t: p.t, joints: p.positions.iter().zip(&p.conf).map(|(q, c)| q.map(|q| [q.x, q.y, q.z, *c])).collect() }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<SkeletonPose, String> {
        if self.joints.len() != JOINT_COUNT {
            return Err(format!("expected {JOINT_COUNT} joints, found {}", self.joints.len()));
        }
        let mut pose = SkeletonPose::empty(self.t);
        for (i, j) in self.joints.iter().enumerate() {
            if let Some([x, y, z, c]) = *j {
                pose.positions[i] = Some(Vec3::new(x, y, z));
                pose.conf[i] = c;
            }
        }
        Ok(pose)
    }
}

pub fn read_poses(reader: impl BufRead) -> Result<Vec<SkeletonPose>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(&line).map_err(|e| FormatError::at(i + 1, e.to_string()))?;
        out.push(rec.to_pose().map_err(|m| FormatError::at(i + 1, m))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootRecord {
    pub p: [f64; 3],
    pub q: [f64; 4],
}

/// Avatar frame: root transform, per-joint local rotations `[w, x, y, z]`
/// in target joint order, and the clip in control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnimationRecord {
    pub t: f64,
    pub root: RootRecord,
    pub rot: Vec<[f64; 4]>,
    pub clip: Option<String>,
}

impl AnimationRecord {
    pub fn new(pose: &AvatarPose, clip: Option<&str>) -> Self {
        let p = pose.root_position;
        Self {
            t: pose.t,
            root: RootRecord { p: [p.x, p.y, p.z], q: quat_to_array(&pose.root_rotation) },
            rot: pose.local.iter().map(quat_to_array).collect(),
            clip: clip.map(str::to_string),
        }
    }

    pub fn to_pose(&self) -> AvatarPose {
        AvatarPose {
            t: self.t,
            root_position: Vec3::from(self.root.p),
            root_rotation: Quat::new_normalize(quat_from_array(self.root.q)),
            local: self.rot.iter().map(|a| Quat::new_normalize(quat_from_array(*a))).collect(),
        }
    }
}

fn jsonl<T: Serialize>(records: &[T]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// The four JSONL output streams of a pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStreams {
    pub poses: String,
    pub events: String,
    pub states: String,
    pub animation: String,
}

impl RunStreams {
    pub fn from_outputs(outputs: &[FrameOutput]) -> Self {
        let poses: Vec<PoseRecord> = outputs.iter().map(|o| PoseRecord::from(&o.tracked)).collect();
        let events: Vec<GestureEvent> = outputs.iter().flat_map(|o| o.events.iter().copied()).collect();
        let states: Vec<_> = outputs.iter().map(|o| &o.user).collect();
        let animation: Vec<AnimationRecord> =
            outputs.iter().map(|o| AnimationRecord::new(&o.avatar, o.clip.as_deref())).collect();
        Self { poses: jsonl(&poses), events: jsonl(&events), states: jsonl(&states), animation: jsonl(&animation) }
    }

    /// File name and contents of each stream.
    pub fn files(&self) -> [(&'static str, &str); 4] {
        [
            ("poses.jsonl", &self.poses),
            ("events.jsonl", &self.events),
            ("states.jsonl", &self.states),
            ("animation.jsonl", &self.animation),
        ]
    }
}
