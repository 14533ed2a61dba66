//! Decision points, navigable steps and action candidates mined from a
//! merged camera trajectory.
//!
//! Everything here is pure pose geometry. Viewing-direction changes over a
//! short look-ahead are thresholded, thinned by 1-D non-maximum suppression,
//! and the surviving frames are grouped spatially with DBSCAN. Each group
//! yields one positive frame (the most recent) and its most divergent views
//! as negatives.

mod dbscan;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dbscan::{dbscan, NOISE};

use crate::colmap::{CameraPose, FrameIndex};
use crate::geometry::{angular_change, view_state, Vec3, ViewState};

pub const DEFAULT_WALKING_SPEED: f64 = 1.42;
pub const MIN_FRAMES_FOR_SCALE: usize = 10;
/// Displacements below this share of the 90th percentile count as standing still.
pub const STILLNESS_FRACTION: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiningError {
    #[error("trajectory frames are not strictly increasing at frame {0}")]
    UnorderedFrames(FrameIndex),
    #[error("scale estimation needs at least {needed} frames, got {got}")]
    InsufficientFrames { needed: usize, got: usize },
    #[error("camera never moves; supply a scale override")]
    ScaleUndetermined,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSource {
    WalkingSpeedEstimate,
    UserOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFrame {
    pub frame_index: FrameIndex,
    pub view: ViewState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub video_id: String,
    pub frames: Vec<TrajectoryFrame>,
    pub fps: f64,
    /// Meters per reconstruction unit; 1 until scaled.
    pub scale: f64,
    pub scale_source: Option<ScaleSource>,
}

impl Trajectory {
    pub fn new(
        video_id: impl Into<String>,
        frames: Vec<TrajectoryFrame>,
        fps: f64,
    ) -> Result<Self, MiningError> {
        if !(fps > 0.0) {
            return Err(MiningError::InvalidParameter(format!("fps {fps}")));
        }
        for pair in frames.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(MiningError::UnorderedFrames(pair[1].frame_index));
            }
        }
        Ok(Self {
            video_id: video_id.into(),
            frames,
            fps,
            scale: 1.0,
            scale_source: None,
        })
    }

    /// Unscaled trajectory from merged poses, in frame order.
    pub fn from_poses(
        video_id: impl Into<String>,
        poses: &BTreeMap<FrameIndex, CameraPose>,
        fps: f64,
    ) -> Result<Self, MiningError> {
        let frames = poses
            .iter()
            .map(|(&frame_index, pose)| TrajectoryFrame {
                frame_index,
                view: view_state(pose),
            })
            .collect();
        Self::new(video_id, frames, fps)
    }

    /// Multiplies positions by `scale` (meters per unit).
    pub fn scaled(mut self, scale: f64, source: ScaleSource) -> Self {
        for f in &mut self.frames {
            f.view = f.view.scaled(scale);
        }
        self.scale *= scale;
        self.scale_source = Some(source);
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, frame_index: FrameIndex) -> Option<&TrajectoryFrame> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn frame_indices(&self) -> Vec<FrameIndex> {
        self.frames.iter().map(|f| f.frame_index).collect()
    }
}

fn nearest_rank(sorted: &[f64], percent: usize) -> f64 {
    // ceil(p * n / 100) in integers, 1-based.
    let rank = (percent * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Meters per reconstruction unit, anchored on a typical walking speed.
///
/// `scale = (walking_speed / fps) / median(per-frame displacement)`, where
/// the median skips displacements at or below 1% of the 90th percentile so
/// that pauses do not drag it down. Displacements across dropped frames are
/// divided by the number of frame intervals they span.
pub fn estimate_scale(trajectory: &Trajectory, walking_speed: f64) -> Result<f64, MiningError> {
    if trajectory.len() < MIN_FRAMES_FOR_SCALE {
        return Err(MiningError::InsufficientFrames {
            needed: MIN_FRAMES_FOR_SCALE,
            got: trajectory.len(),
        });
    }
    if !(walking_speed > 0.0) {
        return Err(MiningError::InvalidParameter(format!(
            "walking speed {walking_speed}"
        )));
    }
    let mut steps: Vec<f64> = trajectory
        .frames
        .windows(2)
        .map(|w| {
            let gap = (w[1].frame_index - w[0].frame_index) as f64;
            (w[1].view.position - w[0].view.position).norm() / gap
        })
        .collect();
    steps.sort_by(f64::total_cmp);
    let floor = STILLNESS_FRACTION * nearest_rank(&steps, 90);
    let moving: Vec<f64> = steps.into_iter().filter(|&d| d > floor).collect();
    if moving.is_empty() {
        return Err(MiningError::ScaleUndetermined);
    }
    let mid = moving.len() / 2;
    let median = if moving.len() % 2 == 1 {
        moving[mid]
    } else {
        0.5 * (moving[mid - 1] + moving[mid])
    };
    Ok((walking_speed / trajectory.fps) / median)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionParams {
    /// Minimum accumulated change, exclusive.
    pub threshold_deg: f64,
    /// Frames between the two directions compared.
    pub look_ahead: usize,
    pub nms_window: usize,
    pub eps_m: f64,
    pub min_pts: usize,
}

impl Default for DecisionParams {
    fn default() -> Self {
        Self {
            threshold_deg: 45.0,
            look_ahead: 3,
            nms_window: 4,
            eps_m: 1.0,
            min_pts: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub frame_index: FrameIndex,
    pub peak_angular_change: f64,
    pub cluster_id: usize,
}

/// Accumulated viewing-direction change ending at each frame.
///
/// Entry `i` compares frame `i - w` with frame `i`, where `w` is the
/// look-ahead clipped to the trajectory length, and is attributed to frame
/// `i` (the first frame showing the new view). Frames with fewer than `w`
/// predecessors get no entry.
pub fn angular_change_signal(trajectory: &Trajectory, look_ahead: usize) -> Vec<(usize, f64)> {
    let n = trajectory.len();
    if n < 2 {
        return Vec::new();
    }
    let w = look_ahead.clamp(1, n - 1);
    (w..n)
        .map(|i| {
            let a = &trajectory.frames[i - w].view.direction;
            let b = &trajectory.frames[i].view.direction;
            (i, angular_change(a, b))
        })
        .collect()
}

/// Positions (into `signal`) of entries above `threshold` that are the
/// maximum of their `±window` neighbourhood; equal values keep the earliest.
pub fn non_maximum_suppression(signal: &[f64], threshold: f64, window: usize) -> Vec<usize> {
    (0..signal.len())
        .filter(|&i| signal[i] > threshold)
        .filter(|&i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(signal.len() - 1);
            (lo..=hi).all(|k| {
                k == i || signal[k] < signal[i] || (signal[k] == signal[i] && k > i)
            })
        })
        .collect()
}

/// Thresholded, suppressed and clustered view-change frames.
///
/// DBSCAN noise points receive their own singleton cluster ids after the
/// dense clusters, in frame order.
pub fn detect_decision_points(trajectory: &Trajectory, params: &DecisionParams) -> Vec<DecisionPoint> {
    assert!(params.nms_window >= 1, "nms_window must be at least 1");
    let signal = angular_change_signal(trajectory, params.look_ahead);
    let values: Vec<f64> = signal.iter().map(|&(_, v)| v).collect();
    let peaks = non_maximum_suppression(&values, params.threshold_deg, params.nms_window);
    if peaks.is_empty() {
        return Vec::new();
    }
    let positions: Vec<Vec3> = peaks
        .iter()
        .map(|&p| trajectory.frames[signal[p].0].view.position)
        .collect();
    let labels = dbscan(&positions, params.eps_m, params.min_pts);
    let mut next_singleton = labels.iter().copied().max().unwrap_or(NOISE).max(NOISE) + 1;
    peaks
        .iter()
        .zip(labels)
        .map(|(&p, label)| {
            let cluster_id = if label == NOISE {
                next_singleton += 1;
                next_singleton - 1
            } else {
                label
            };
            DecisionPoint {
                frame_index: trajectory.frames[signal[p].0].frame_index,
                peak_angular_change: signal[p].1,
                cluster_id: cluster_id as usize,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCandidateSet {
    pub cluster_id: usize,
    pub positive: FrameIndex,
    pub negatives: Vec<FrameIndex>,
    pub member_frames: Vec<FrameIndex>,
    /// Mean member position, meters.
    pub centroid: Vec3,
    /// The walk left the cluster's neighbourhood between its first and
    /// last member, i.e. the spot was revisited.
    pub revisit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateParams {
    pub negatives_per_cluster: usize,
    /// A negative must deviate from the positive view by more than this.
    pub min_negative_deviation_deg: f64,
    /// Radius used for the revisit flag.
    pub eps_m: f64,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self {
            negatives_per_cluster: 1,
            min_negative_deviation_deg: 0.0,
            eps_m: 1.0,
        }
    }
}

/// One positive and up to `k` negatives per multi-member cluster.
pub fn make_action_candidates(
    trajectory: &Trajectory,
    decision_points: &[DecisionPoint],
    params: &CandidateParams,
) -> Vec<ActionCandidateSet> {
    let mut clusters: BTreeMap<usize, Vec<FrameIndex>> = BTreeMap::new();
    for dp in decision_points {
        clusters.entry(dp.cluster_id).or_default().push(dp.frame_index);
    }
    let mut out = Vec::new();
    for (cluster_id, mut members) in clusters {
        members.sort_unstable();
        members.dedup();
        if members.len() < 2 {
            continue;
        }
        let views: Vec<&TrajectoryFrame> = members
            .iter()
            .filter_map(|&f| trajectory.frame(f))
            .collect();
        if views.len() != members.len() {
            continue;
        }
        let positive = *members.last().expect("nonempty");
        let positive_dir = views.last().expect("nonempty").view.direction;
        let mut ranked: Vec<(f64, FrameIndex)> = views[..views.len() - 1]
            .iter()
            .map(|f| (angular_change(&positive_dir, &f.view.direction), f.frame_index))
            .filter(|&(dev, _)| dev > params.min_negative_deviation_deg)
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let negatives: Vec<FrameIndex> = ranked
            .into_iter()
            .take(params.negatives_per_cluster.max(1))
            .map(|(_, f)| f)
            .collect();
        if negatives.is_empty() {
            continue;
        }
        let centroid =
            views.iter().fold(Vec3::zeros(), |acc, f| acc + f.view.position) / views.len() as f64;
        let first = members[0];
        let revisit = trajectory
            .frames
            .iter()
            .filter(|f| f.frame_index > first && f.frame_index < positive)
            .any(|f| (f.view.position - centroid).norm() > params.eps_m);
        out.push(ActionCandidateSet {
            cluster_id,
            positive,
            negatives,
            member_frames: members,
            centroid,
            revisit,
        });
    }
    out
}

/// Greedy arc-length resampling: the first frame, then each frame at least
/// `interval_m` of walked path past the previous pick, then the last frame.
pub fn resample_steps(trajectory: &Trajectory, interval_m: f64) -> Vec<FrameIndex> {
    let Some(first) = trajectory.frames.first() else {
        return Vec::new();
    };
    let mut steps = vec![first.frame_index];
    let mut walked = 0.0;
    for pair in trajectory.frames.windows(2) {
        walked += (pair[1].view.position - pair[0].view.position).norm();
        if walked >= interval_m - 1e-9 {
            steps.push(pair[1].frame_index);
            walked = 0.0;
        }
    }
    let last = trajectory.frames.last().expect("nonempty").frame_index;
    if *steps.last().expect("nonempty") != last {
        steps.push(last);
    }
    steps
}

/// Frame positions taken every `ceil(period_s * fps)` registered frames.
pub fn description_stride(period_s: f64, fps: f64) -> usize {
    ((period_s * fps) - 1e-9).ceil().max(1.0) as usize
}

pub fn sample_description_frames(trajectory: &Trajectory, period_s: f64) -> Vec<FrameIndex> {
    let stride = description_stride(period_s, trajectory.fps);
    trajectory
        .frames
        .iter()
        .step_by(stride)
        .map(|f| f.frame_index)
        .collect()
}
