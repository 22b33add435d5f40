//! Scoring of predicted events and poses against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gesture::{GestureEvent, GestureKind};
use crate::skeleton::SkeletonPose;
use crate::synth::GestureLabel;

/// Timestamps closer than this are treated as the same frame.
const SAME_FRAME: f64 = 1e-6;
/// An event matches a label when it covers at least this share of it.
pub const MIN_LABEL_OVERLAP: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("predictions span [{pred_start}, {pred_end}] and truth spans [{truth_start}, {truth_end}]; no overlap")]
    TimeBaseMismatch { pred_start: f64, pred_end: f64, truth_start: f64, truth_end: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GestureScore {
    pub labels: usize,
    pub predictions: usize,
    pub matched: usize,
    /// 1 when there are no predictions (see `no_predictions`).
    pub precision: f64,
    /// 1 when there are no labels (see `no_labels`).
    pub recall: f64,
    pub f1: f64,
    pub no_predictions: bool,
    pub no_labels: bool,
}

impl GestureScore {
    fn new(labels: usize, predictions: usize, matched: usize) -> Self {
        let precision = if predictions == 0 { 1.0 } else { matched as f64 / predictions as f64 };
        let recall = if labels == 0 { 1.0 } else { matched as f64 / labels as f64 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self {
            labels,
            predictions,
            matched,
            precision,
            recall,
            f1,
            no_predictions: predictions == 0,
            no_labels: labels == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingError {
    /// Mean onset error over matched events, milliseconds.
    pub mean_ms: f64,
    pub max_ms: f64,
    /// Mean completion error over matched events, milliseconds.
    pub mean_end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub pose_pairs: usize,
    pub joints_compared: usize,
    pub events: usize,
    pub labels: usize,
    pub false_events: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean per-joint position error over mutually present joints, millimeters.
    pub mpjpe_mm: f64,
    pub per_gesture: BTreeMap<GestureKind, GestureScore>,
    pub overall: GestureScore,
    pub timing: TimingError,
    /// Filled in by the caller that timed the run.
    pub throughput_fps: Option<f64>,
    pub counts: EvalCounts,
}

/// Matched (event index, label index) pairs, greedy by overlap.
pub fn match_events(events: &[GestureEvent], labels: &[GestureLabel]) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, e) in events.iter().enumerate() {
        for (j, l) in labels.iter().enumerate() {
            if e.kind != l.kind {
                continue;
            }
            let overlap = e.t_end.min(l.t_end) - e.t_start.max(l.t_start);
            if overlap > 0.0 && overlap >= MIN_LABEL_OVERLAP * (l.t_end - l.t_start) {
                candidates.push((overlap, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; events.len()];
    let mut used_l = vec![false; labels.len()];
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_e[i] && !used_l[j] {
            used_e[i] = true;
            used_l[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

fn span(times: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    times.fold(None, |acc, t| match acc {
        None => Some((t, t)),
        Some((a, b)) => Some((a.min(t), b.max(t))),
    })
}

/// Mean per-joint error in millimeters and the number of joints compared.
pub fn mpjpe(pred: &[SkeletonPose], truth: &[SkeletonPose]) -> (f64, usize, usize) {
    let (mut sum, mut joints, mut pairs) = (0.0, 0, 0);
    let mut k = 0;
    for p in pred {
        while k < truth.len() && truth[k].t < p.t - SAME_FRAME {
            k += 1;
        }
        let Some(t) = truth.get(k).filter(|t| (t.t - p.t).abs() <= SAME_FRAME) else { continue };
        pairs += 1;
        for (a, b) in p.positions.iter().zip(&t.positions) {
            if let (Some(a), Some(b)) = (a, b) {
                sum += (a - b).norm();
                joints += 1;
            }
        }
    }
    let mean = if joints == 0 { 0.0 } else { 1000.0 * sum / joints as f64 };
    (mean, joints, pairs)
}

pub fn evaluate(
    events: &[GestureEvent],
    labels: &[GestureLabel],
    pred_poses: &[SkeletonPose],
    truth_poses: &[SkeletonPose],
) -> Result<EvalReport, EvalError> {
    let pred_span = span(pred_poses.iter().map(|p| p.t).chain(events.iter().flat_map(|e| [e.t_start, e.t_end])));
    let truth_span = span(truth_poses.iter().map(|p| p.t).chain(labels.iter().flat_map(|l| [l.t_start, l.t_end])));
    if let (Some((ps, pe)), Some((ts, te))) = (pred_span, truth_span) {
        if pe < ts - SAME_FRAME || te < ps - SAME_FRAME {
            return Err(EvalError::TimeBaseMismatch { pred_start: ps, pred_end: pe, truth_start: ts, truth_end: te });
        }
    }
    let matches = match_events(events, labels);
    let mut per_gesture = BTreeMap::new();
    for kind in GestureKind::ALL {
        let n_labels = labels.iter().filter(|l| l.kind == kind).count();
        let n_events = events.iter().filter(|e| e.kind == kind).count();
        let matched = matches.iter().filter(|(i, _)| events[*i].kind == kind).count();
        per_gesture.insert(kind, GestureScore::new(n_labels, n_events, matched));
    }
    let onset: Vec<f64> =
        matches.iter().map(|&(i, j)| (events[i].t_start - labels[j].t_start).abs() * 1000.0).collect();
    let end: Vec<f64> = matches.iter().map(|&(i, j)| (events[i].t_end - labels[j].t_end).abs() * 1000.0).collect();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (mpjpe_mm, joints_compared, pose_pairs) = mpjpe(pred_poses, truth_poses);
    Ok(EvalReport {
        mpjpe_mm,
        per_gesture,
        overall: GestureScore::new(labels.len(), events.len(), matches.len()),
        timing: TimingError {
            mean_ms: mean(&onset),
            max_ms: onset.iter().copied().fold(0.0, f64::max),
            mean_end_ms: mean(&end),
        },
        throughput_fps: None,
        counts: EvalCounts {
            pose_pairs,
            joints_compared,
            events: events.len(),
            labels: labels.len(),
            false_events: events.len() - matches.len(),
        },
    })
}

/// Pools per-sequence reports: scores are recomputed from summed counts,
/// MPJPE is weighted by compared joints and timing by matched events.
/// Throughput is left unset.
pub fn combine(reports: &[EvalReport]) -> EvalReport {
    let pooled = |get: &dyn Fn(&EvalReport) -> &GestureScore| {
        let (l, p, m) =
            reports.iter().map(get).fold((0, 0, 0), |(l, p, m), s| (l + s.labels, p + s.predictions, m + s.matched));
        GestureScore::new(l, p, m)
    };
    let per_gesture = GestureKind::ALL
        .into_iter()
        .map(|k| (k, pooled(&|r: &EvalReport| r.per_gesture.get(&k).expect("every kind is scored"))))
        .collect();
    let overall = pooled(&|r: &EvalReport| &r.overall);
    let weighted = |value: &dyn Fn(&EvalReport) -> f64, weight: &dyn Fn(&EvalReport) -> usize| {
        let total: usize = reports.iter().map(weight).sum();
        if total == 0 {
            0.0
        } else {
            reports.iter().map(|r| value(r) * weight(r) as f64).sum::<f64>() / total as f64
        }
    };
    let matched = |r: &EvalReport| r.overall.matched;
    let sum = |f: &dyn Fn(&EvalCounts) -> usize| reports.iter().map(|r| f(&r.counts)).sum();
    EvalReport {
        mpjpe_mm: weighted(&|r| r.mpjpe_mm, &|r| r.counts.joints_compared),
        per_gesture,
        overall,
        timing: TimingError {
            mean_ms: weighted(&|r| r.timing.mean_ms, &matched),
            max_ms: reports.iter().map(|r| r.timing.max_ms).fold(0.0, f64::max),
            mean_end_ms: weighted(&|r| r.timing.mean_end_ms, &matched),
        },
        throughput_fps: None,
        counts: EvalCounts {
            pose_pairs: sum(&|c| c.pose_pairs),
            joints_compared: sum(&|c| c.joints_compared),
            events: sum(&|c| c.events),
            labels: sum(&|c| c.labels),
            false_events: sum(&|c| c.false_events),
        },
    }
}
