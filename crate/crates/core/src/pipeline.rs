//! End-to-end streaming session: stereo pairing, triangulation, skeleton
//! fitting, tracking, recognition, fusion, retargeting and avatar response.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{triangulate_frame, GeometryError, KeypointFrame2D, RawPose3D, StereoRig, DEFAULT_SYNC_TOLERANCE};
use crate::fusion::{AudioEmotionEvent, FusionConfig, FusionState, UserState};
use crate::gesture::{FeatureExtractor, GestureEvent, GestureRecognizer, RecognizerConfig};
use crate::response::{ClipLibrary, PlaybackConfig, PlaybackState, ResponseError, ResponseTable};
use crate::retarget::{auto_map, retarget_pose, AvatarPose, BoneMap, RetargetConfig, RetargetError, TargetSkeleton};
use crate::skeleton::{
    constrain_pose, estimate_proportions, pose_to_rotations, update_proportions, SkeletonError, SkeletonPose,
    SkeletonProportions, SkeletonTopology, DEFAULT_MIN_SAMPLES, DEFAULT_UPDATE_ALPHA,
};
use crate::tracker::{TrackedPose, TrackerConfig, TrackerError, TrackerState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("frame at t={t}: {source}")]
    Geometry { t: f64, source: GeometryError },
    #[error("frame at t={t}: {source}")]
    Tracker { t: f64, source: TrackerError },
    #[error("frame at t={t}: {source}")]
    Skeleton { t: f64, source: SkeletonError },
    #[error("frame at t={t}: {source}")]
    Retarget { t: f64, source: RetargetError },
    #[error("{0}")]
    Response(#[from] ResponseError),
    #[error("camera {cam} frame at t={t} arrives before t={last}")]
    OutOfOrder { cam: u32, t: f64, last: f64 },
    #[error("frame from camera {0} matches neither calibrated camera")]
    UnknownCamera(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sync_tolerance: f64,
    /// Observations per bone required before skeleton fitting starts.
    pub warmup_samples: usize,
    /// Weight of each new observation in the running bone lengths.
    pub update_alpha: f64,
    pub tracker: TrackerConfig,
    pub recognizer: RecognizerConfig,
    pub fusion: FusionConfig,
    pub retarget: RetargetConfig,
    pub playback: PlaybackConfig,
    pub responses: ResponseTable,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sync_tolerance: DEFAULT_SYNC_TOLERANCE,
            warmup_samples: DEFAULT_MIN_SAMPLES,
            update_alpha: DEFAULT_UPDATE_ALPHA,
            tracker: TrackerConfig::default(),
            recognizer: RecognizerConfig::default(),
            fusion: FusionConfig::default(),
            retarget: RetargetConfig::default(),
            playback: PlaybackConfig::default(),
            responses: ResponseTable::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.sync_tolerance >= 0.0 && self.sync_tolerance.is_finite()) {
            return bad("sync_tolerance must be non-negative".into());
        }
        if self.warmup_samples == 0 {
            return bad("warmup_samples must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.update_alpha) {
            return bad("update_alpha must lie in [0, 1]".into());
        }
        self.recognizer.validate().map_err(PipelineError::Config)?;
        self.fusion.validate().map_err(PipelineError::Config)?;
        if !(self.playback.blend > 0.0 && self.playback.max_angular_velocity_deg > 0.0) {
            return bad("playback blend and angular velocity bound must be positive".into());
        }
        let t = &self.tracker;
        if !((0.0..=1.0).contains(&t.alpha) && (0.0..=1.0).contains(&t.beta) && (0.0..=1.0).contains(&t.conf_decay)) {
            return bad("tracker gains must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Everything a session needs besides the streams.
#[derive(Debug, Clone)]
pub struct SessionSetup {
    pub rig: StereoRig,
    pub topology: SkeletonTopology,
    pub target: TargetSkeleton,
    pub clips: ClipLibrary,
    pub config: PipelineConfig,
}

/// Per-frame session output.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub tracked: SkeletonPose,
    pub events: Vec<GestureEvent>,
    pub user: UserState,
    pub avatar: AvatarPose,
    pub clip: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Session {
    rig: StereoRig,
    topology: SkeletonTopology,
    config: PipelineConfig,
    left: VecDeque<KeypointFrame2D>,
    right: VecDeque<KeypointFrame2D>,
    last_pushed: [Option<f64>; 2],
    proportions: Option<SkeletonProportions>,
    warmup: Vec<RawPose3D>,
    tracker: TrackerState,
    extractor: FeatureExtractor,
    recognizer: GestureRecognizer,
    responder: Responder,
}

/// Fusion, response playback and mimic retargeting for one avatar.
#[derive(Debug, Clone)]
struct Responder {
    map: BoneMap,
    target: TargetSkeleton,
    topology: SkeletonTopology,
    retarget: RetargetConfig,
    fusion: FusionState,
    playback: PlaybackState,
    audio: VecDeque<AudioEmotionEvent>,
    idle: AvatarPose,
    last_t: Option<f64>,
}

impl Responder {
    fn new(
        topology: &SkeletonTopology,
        target: &TargetSkeleton,
        map: BoneMap,
        playback: PlaybackState,
        config: &PipelineConfig,
    ) -> Self {
        Self {
            map,
            idle: AvatarPose::rest(0.0, target),
            target: target.clone(),
            topology: topology.clone(),
            retarget: config.retarget,
            fusion: FusionState::new(config.fusion),
            playback,
            audio: VecDeque::new(),
            last_t: None,
        }
    }

    /// Consumes queued audio up to `pose.t` and returns the displayed
    /// avatar, the fused state and the clip in control.
    fn respond(
        &mut self,
        pose: &SkeletonPose,
        events: &[GestureEvent],
        proportions: Option<&SkeletonProportions>,
    ) -> Result<(AvatarPose, UserState, Option<String>), PipelineError> {
        let t = pose.t;
        let mut audio = Vec::new();
        while self.audio.front().is_some_and(|a| a.t <= t) {
            audio.push(self.audio.pop_front().expect("front"));
        }
        let user = self.fusion.step(events, &audio, t);
        self.playback.on_event(&user)?;
        if let Ok(rot) = pose_to_rotations(&self.topology, pose) {
            self.idle = retarget_pose(&self.map, &rot, proportions, &self.target, t, &self.retarget)
                .map_err(|source| PipelineError::Retarget { t, source })?;
        }
        self.idle.t = t;
        let dt = self.last_t.map_or(0.0, |last| t - last);
        self.last_t = Some(t);
        let avatar = self.playback.tick(dt, &self.idle);
        Ok((avatar, user, self.playback.active_clip().map(str::to_string)))
    }
}

impl Session {
    pub fn new(setup: SessionSetup) -> Result<Self, PipelineError> {
        let SessionSetup { rig, topology, target, clips, config } = setup;
        config.validate()?;
        topology.ensure_human().map_err(|e| PipelineError::Config(e.to_string()))?;
        let map = auto_map(&topology, &target).map_err(|e| PipelineError::Config(e.to_string()))?;
        let playback = PlaybackState::new(clips, config.responses.clone(), config.playback)?;
        let responder = Responder::new(&topology, &target, map, playback, &config);
        Ok(Self {
            rig,
            topology,
            tracker: TrackerState::new(config.tracker),
            recognizer: GestureRecognizer::new(config.recognizer),
            extractor: FeatureExtractor::new(config.recognizer.heading_smoothing),
            responder,
            config,
            left: VecDeque::new(),
            right: VecDeque::new(),
            last_pushed: [None; 2],
            proportions: None,
            warmup: Vec::new(),
        })
    }

    pub fn bone_map(&self) -> &BoneMap {
        &self.responder.map
    }

    pub fn target(&self) -> &TargetSkeleton {
        &self.responder.target
    }

    pub fn proportions(&self) -> Option<&SkeletonProportions> {
        self.proportions.as_ref()
    }

    /// Queues audio-emotion events; each is consumed by the first frame at or after its time.
    pub fn push_audio(&mut self, events: &[AudioEmotionEvent]) {
        self.responder.audio.extend(events.iter().copied());
    }

    /// Adds camera frames (either camera, each camera time-sorted) and
    /// returns the outputs of every frame that can be completed.
    pub fn push(&mut self, frames: &[KeypointFrame2D]) -> Result<Vec<FrameOutput>, PipelineError> {
        for f in frames {
            let side = if f.cam == self.rig.left.id {
                0
            } else if f.cam == self.rig.right.id {
                1
            } else {
                return Err(PipelineError::UnknownCamera(f.cam));
            };
            if let Some(last) = self.last_pushed[side].filter(|&last| f.t <= last) {
                return Err(PipelineError::OutOfOrder { cam: f.cam, t: f.t, last });
            }
            self.last_pushed[side] = Some(f.t);
            if side == 0 {
                self.left.push_back(f.clone());
            } else {
                self.right.push_back(f.clone());
            }
        }
        let mut out = Vec::new();
        while let (Some(l), Some(r)) = (self.left.front(), self.right.front()) {
            let tol = self.config.sync_tolerance;
            if (l.t - r.t).abs() <= tol {
                let (l, r) = (self.left.pop_front().expect("front"), self.right.pop_front().expect("front"));
                self.ingest(&l, &r, &mut out)?;
            } else if l.t < r.t {
                self.left.pop_front();
            } else {
                self.right.pop_front();
            }
        }
        Ok(out)
    }

    /// Ends the streams: frames still held for skeleton fitting are emitted
    /// with a best-effort bone length estimate.
    pub fn finish(&mut self) -> Result<Vec<FrameOutput>, PipelineError> {
        self.left.clear();
        self.right.clear();
        let mut out = Vec::new();
        if self.proportions.is_none() && !self.warmup.is_empty() {
            self.proportions = Some(fallback_proportions(&self.topology, &self.warmup));
            let frames = std::mem::take(&mut self.warmup);
            for raw in &frames {
                out.push(self.process(raw)?);
            }
        }
        Ok(out)
    }

    fn ingest(
        &mut self,
        l: &KeypointFrame2D,
        r: &KeypointFrame2D,
        out: &mut Vec<FrameOutput>,
    ) -> Result<(), PipelineError> {
        let raw = triangulate_frame(&self.rig, l, r, self.config.sync_tolerance)
            .map_err(|source| PipelineError::Geometry { t: l.t, source })?;
        if self.proportions.is_some() {
            out.push(self.process(&raw)?);
            return Ok(());
        }
        self.warmup.push(raw);
        if let Ok(p) = estimate_proportions(&self.topology, &self.warmup, self.config.warmup_samples) {
            self.proportions = Some(p);
            let frames = std::mem::take(&mut self.warmup);
            for raw in &frames {
                out.push(self.process(raw)?);
            }
        }
        Ok(())
    }

    fn process(&mut self, raw: &RawPose3D) -> Result<FrameOutput, PipelineError> {
        let t = raw.t;
        let props = update_proportions(
            &self.topology,
            self.proportions.as_ref().expect("fitted"),
            raw,
            self.config.update_alpha,
        );
        let constrained = match constrain_pose(&self.topology, &props, raw) {
            Ok(p) => p,
            Err(SkeletonError::MissingRoot) => raw_pose(raw),
            Err(source) => return Err(PipelineError::Skeleton { t, source }),
        };
        let tracked = self.tracker.step(&constrained).map_err(|source| PipelineError::Tracker { t, source })?;
        let tracked = refit(&self.topology, &props, &tracked);
        self.proportions = Some(props);

        let events = match self.extractor.extract(&tracked) {
            Ok(f) => self.recognizer.step(&f),
            Err(_) => {
                self.extractor.reset();
                Vec::new()
            }
        };
        let pose = tracked.to_skeleton_pose();
        let (avatar, user, clip) = self.responder.respond(&pose, &events, self.proportions.as_ref())?;
        Ok(FrameOutput { tracked: pose, events, user, avatar, clip })
    }
}

fn raw_pose(raw: &RawPose3D) -> SkeletonPose {
    let mut p = SkeletonPose::empty(raw.t);
    for (i, j) in raw.joints.iter().enumerate() {
        if let Some(j) = j {
            p.positions[i] = Some(j.position);
            p.conf[i] = j.conf;
        }
    }
    p
}

/// Projects filtered positions back onto the bone lengths, keeping tracker
/// confidences and velocities.
fn refit(topology: &SkeletonTopology, props: &SkeletonProportions, tracked: &TrackedPose) -> TrackedPose {
    let raw = tracked.to_skeleton_pose().to_raw();
    match constrain_pose(topology, props, &raw) {
        Ok(p) => TrackedPose { positions: p.positions, ..tracked.clone() },
        Err(_) => tracked.clone(),
    }
}

/// Median bone lengths where observed; unobserved bones take their rest
/// length scaled by the median observed-to-rest ratio.
fn fallback_proportions(topology: &SkeletonTopology, frames: &[RawPose3D]) -> SkeletonProportions {
    let rest = topology.rest_lengths();
    let mut lengths = rest.lengths.clone();
    let mut observed = vec![false; topology.len()];
    let mut ratios = Vec::new();
    for j in 1..topology.len() {
        let p = topology.parent(j).expect("non-root");
        let mut samples: Vec<f64> =
            frames.iter().filter_map(|f| Some((f.position(p)? - f.position(j)?).norm())).collect();
        if samples.is_empty() {
            continue;
        }
        samples.sort_by(f64::total_cmp);
        let m = samples[samples.len() / 2];
        lengths[j] = m;
        observed[j] = true;
        ratios.push(m / rest.lengths[j]);
    }
    ratios.sort_by(f64::total_cmp);
    let scale = ratios.get(ratios.len() / 2).copied().unwrap_or(1.0);
    for j in 1..topology.len() {
        if !observed[j] {
            lengths[j] = rest.lengths[j] * scale;
        }
    }
    SkeletonProportions { lengths }
}

/// Runs a whole recording through a fresh session.
pub fn run_streams(
    setup: SessionSetup,
    left: &[KeypointFrame2D],
    right: &[KeypointFrame2D],
    audio: &[AudioEmotionEvent],
) -> Result<Vec<FrameOutput>, PipelineError> {
    let mut session = Session::new(setup)?;
    session.push_audio(audio);
    let mut frames: Vec<KeypointFrame2D> = Vec::with_capacity(left.len() + right.len());
    frames.extend_from_slice(left);
    frames.extend_from_slice(right);
    let mut out = session.push(&frames)?;
    out.extend(session.finish()?);
    Ok(out)
}

/// Gesture events for an already tracked pose sequence.
pub fn recognize_poses(poses: &[SkeletonPose], config: &RecognizerConfig) -> Vec<GestureEvent> {
    let mut extractor = FeatureExtractor::new(config.heading_smoothing);
    let mut recognizer = GestureRecognizer::new(*config);
    let mut events = Vec::new();
    for pose in poses {
        match extractor.extract(&TrackedPose::from_skeleton_pose(pose)) {
            Ok(f) => events.extend(recognizer.step(&f)),
            Err(_) => extractor.reset(),
        }
    }
    events
}

/// Avatar response for a tracked pose sequence and its gesture events.
///
/// Each event is delivered on the first pose at or after its `t_end`; audio
/// is interleaved by timestamp as in a live session. Proportions are
/// estimated once over the whole sequence.
pub fn animate_poses(
    setup: SessionSetup,
    poses: &[SkeletonPose],
    events: &[GestureEvent],
    audio: &[AudioEmotionEvent],
) -> Result<Vec<FrameOutput>, PipelineError> {
    let SessionSetup { topology, target, clips, config, .. } = setup;
    config.validate()?;
    topology.ensure_human().map_err(|e| PipelineError::Config(e.to_string()))?;
    let map = auto_map(&topology, &target).map_err(|e| PipelineError::Config(e.to_string()))?;
    let playback = PlaybackState::new(clips, config.responses.clone(), config.playback)?;
    let mut responder = Responder::new(&topology, &target, map, playback, &config);
    let mut queued: Vec<AudioEmotionEvent> = audio.to_vec();
    queued.sort_by(|a, b| a.t.total_cmp(&b.t));
    responder.audio.extend(queued);

    let raws: Vec<RawPose3D> = poses.iter().map(SkeletonPose::to_raw).collect();
    let proportions = (!raws.is_empty()).then(|| {
        estimate_proportions(&topology, &raws, config.warmup_samples)
            .unwrap_or_else(|_| fallback_proportions(&topology, &raws))
    });
    let mut pending: Vec<GestureEvent> = events.to_vec();
    pending.sort_by(|a, b| a.t_end.total_cmp(&b.t_end));
    let mut pending = pending.into_iter().peekable();

    let mut out = Vec::with_capacity(poses.len());
    for pose in poses {
        let mut due = Vec::new();
        while let Some(e) = pending.next_if(|e| e.t_end <= pose.t) {
            due.push(e);
        }
        let (avatar, user, clip) = responder.respond(pose, &due, proportions.as_ref())?;
        out.push(FrameOutput { tracked: pose.clone(), events: due, user, avatar, clip });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::synth::{generate_motion, render_views, RenderConfig, ScenarioKind, ScenarioSpec};

    fn setup() -> SessionSetup {
        let target = fixtures::cat_skeleton();
        SessionSetup {
            rig: fixtures::default_rig(),
            topology: fixtures::human_topology(),
            clips: ClipLibrary::from_json(fixtures::CLIPS_JSON, &target).unwrap(),
            target,
            config: PipelineConfig::default(),
        }
    }

    fn streams(kind: ScenarioKind, seed: u64, noise: f64) -> (Vec<KeypointFrame2D>, Vec<KeypointFrame2D>) {
        let truth = generate_motion(&fixtures::human_topology(), &ScenarioSpec::new(kind, seed)).unwrap();
        render_views(&fixtures::default_rig(), &truth, &RenderConfig { noise_px: noise, dropout: 0.0, seed }).unwrap()
    }

    #[test]
    fn empty_streams_give_empty_output() {
        assert!(run_streams(setup(), &[], &[], &[]).unwrap().is_empty());
    }

    #[test]
    fn every_paired_frame_is_emitted() {
        let (l, r) = streams(ScenarioKind::Idle, 1, 0.0);
        let out = run_streams(setup(), &l, &r, &[]).unwrap();
        assert_eq!(out.len(), l.len());
        assert!(out.iter().all(|o| o.events.is_empty() && o.clip.is_none()));
    }

    #[test]
    fn short_stream_uses_fallback_lengths() {
        let (l, r) = streams(ScenarioKind::Idle, 2, 0.0);
        let out = run_streams(setup(), &l[..5], &r[..5], &[]).unwrap();
        assert_eq!(out.len(), 5);
    }

    #[test]
    fn unmatched_frames_are_dropped() {
        let (l, mut r) = streams(ScenarioKind::Idle, 3, 0.0);
        r.remove(40);
        for f in r.iter_mut().skip(60) {
            f.t += 0.01;
        }
        let out = run_streams(setup(), &l, &r, &[]).unwrap();
        assert_eq!(out.len(), 60);
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let (l, _) = streams(ScenarioKind::Idle, 3, 0.0);
        let mut s = Session::new(setup()).unwrap();
        s.push(&l[5..6]).unwrap();
        assert!(matches!(s.push(&l[4..5]), Err(PipelineError::OutOfOrder { .. })));
    }

    #[test]
    fn wave_triggers_mimic_clip() {
        let (l, r) = streams(ScenarioKind::Wave, 4, 0.0);
        let out = run_streams(setup(), &l, &r, &[]).unwrap();
        let events: Vec<_> = out.iter().flat_map(|o| o.events.iter()).collect();
        assert_eq!(events.len(), 1, "{events:?}");
        let k = out.iter().position(|o| !o.events.is_empty()).unwrap();
        assert_eq!(out[k].clip.as_deref(), Some("mimic_wave"));
    }

    #[test]
    fn stage_helpers_reproduce_live_session() {
        let (l, r) = streams(ScenarioKind::Wave, 5, 0.0);
        let live = run_streams(setup(), &l, &r, &[]).unwrap();
        let poses: Vec<SkeletonPose> = live.iter().map(|o| o.tracked.clone()).collect();
        let events = recognize_poses(&poses, &RecognizerConfig::default());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, live.iter().flat_map(|o| &o.events).next().unwrap().kind);

        let animated = animate_poses(setup(), &poses, &events, &[]).unwrap();
        assert_eq!(animated.len(), poses.len());
        let k = animated.iter().position(|o| !o.events.is_empty()).unwrap();
        assert_eq!(animated[k].clip.as_deref(), Some("mimic_wave"));
        assert!(animate_poses(setup(), &[], &[], &[]).unwrap().is_empty());
    }
}
