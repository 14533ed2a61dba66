//! Path-level navigation metrics: success rate, SPL and goal progress.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::schema;

pub const DEFAULT_SUCCESS_THRESHOLD_M: f64 = 3.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("episode {0}: reference path has zero length")]
    InvalidReference(String),
    #[error("episode {episode_id}: {message}")]
    InvalidRecord { episode_id: String, message: String },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub episode_id: String,
    pub predicted_path: Vec<[f64; 3]>,
    pub reference_path: Vec<[f64; 3]>,
    pub goal: [f64; 3],
    #[serde(default = "default_threshold")]
    pub success_threshold_m: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_SUCCESS_THRESHOLD_M
}

impl PathRecord {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let fail = |m: &str| MetricsError::InvalidRecord {
            episode_id: self.episode_id.clone(),
            message: m.to_string(),
        };
        if self.predicted_path.is_empty() || self.reference_path.is_empty() {
            return Err(fail("paths must be nonempty"));
        }
        if !(self.success_threshold_m > 0.0) {
            return Err(fail("success threshold must be positive"));
        }
        Ok(())
    }
}

fn v(p: &[f64; 3]) -> Vec3 {
    Vec3::from(*p)
}

/// Polyline arc length.
pub fn path_length(path: &[[f64; 3]]) -> f64 {
    path.windows(2).map(|w| (v(&w[1]) - v(&w[0])).norm()).sum()
}

fn end_distance(r: &PathRecord) -> f64 {
    (v(r.predicted_path.last().expect("validated nonempty")) - v(&r.goal)).norm()
}

/// 1 when the final predicted position is within the threshold of the goal (inclusive).
pub fn success(r: &PathRecord) -> u8 {
    u8::from(end_distance(r) <= r.success_threshold_m)
}

pub fn success_rate(records: &[PathRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| success(r) as f64).sum::<f64>() / records.len() as f64
}

pub fn spl(records: &[PathRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for r in records {
        let l = path_length(&r.reference_path);
        if !(l > 0.0) {
            return Err(MetricsError::InvalidReference(r.episode_id.clone()));
        }
        let p = path_length(&r.predicted_path);
        total += success(r) as f64 * l / p.max(l);
    }
    Ok(total / records.len() as f64)
}

/// Mean reduction in distance to the goal from the first to the last predicted position.
pub fn goal_progress(records: &[PathRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records
        .iter()
        .map(|r| (v(&r.predicted_path[0]) - v(&r.goal)).norm() - end_distance(r))
        .sum::<f64>()
        / records.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub spl: f64,
    pub goal_progress_m: f64,
}

pub fn summarize(records: &[PathRecord]) -> Result<MetricsSummary, MetricsError> {
    for r in records {
        r.validate()?;
    }
    Ok(MetricsSummary {
        episodes: records.len(),
        success_rate: success_rate(records),
        spl: spl(records)?,
        goal_progress_m: goal_progress(records),
    })
}

/// Reads and schema-checks one [`PathRecord`] per line.
pub fn read_path_records(path: &Path) -> Result<Vec<PathRecord>, MetricsError> {
    let fail = |message: String| MetricsError::Input {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| fail(format!("line {}: {e}", n + 1)))?;
        schema::check(schema::EPISODE, &value).map_err(|e| fail(format!("line {}: {e}", n + 1)))?;
        let record: PathRecord = serde_json::from_value(value).map_err(|e| fail(format!("line {}: {e}", n + 1)))?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pred: &[[f64; 3]], reference: &[[f64; 3]], goal: [f64; 3]) -> PathRecord {
        PathRecord {
            episode_id: "e".into(),
            predicted_path: pred.to_vec(),
            reference_path: reference.to_vec(),
            goal,
            success_threshold_m: 3.0,
        }
    }

    #[test]
    fn success_boundary_inclusive() {
        assert_eq!(success(&rec(&[[0.0; 3], [5.0, 0.0, 0.0]], &[[0.0; 3], [5.0, 0.0, 0.0]], [5.0, 0.0, 0.0])), 1);
        assert_eq!(success(&rec(&[[0.0; 3], [2.0, 0.0, 0.0]], &[[0.0; 3], [5.0, 0.0, 0.0]], [5.0, 0.0, 0.0])), 1);
        assert_eq!(success(&rec(&[[0.0; 3]], &[[0.0; 3], [5.0, 0.0, 0.0]], [5.0, 0.0, 0.0])), 0);
    }

    #[test]
    fn spl_half_for_double_length() {
        // Two 5 m legs of an equilateral triangle against a 5 m reference.
        let r = rec(
            &[[0.0; 3], [2.5, 2.5 * 3f64.sqrt(), 0.0], [5.0, 0.0, 0.0]],
            &[[0.0; 3], [5.0, 0.0, 0.0]],
            [5.0, 0.0, 0.0],
        );
        assert!((spl(&[r]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn failure_has_zero_spl_and_zero_length_reference_rejected() {
        let r = rec(&[[0.0; 3]], &[[0.0; 3], [10.0, 0.0, 0.0]], [10.0, 0.0, 0.0]);
        assert_eq!(spl(&[r]).unwrap(), 0.0);
        let r = rec(&[[0.0; 3]], &[[1.0; 3]], [1.0; 3]);
        assert!(matches!(spl(&[r]), Err(MetricsError::InvalidReference(_))));
    }

    #[test]
    fn goal_progress_signs() {
        let towards = rec(&[[8.0, 0.0, 0.0], [3.0, 0.0, 0.0]], &[[0.0; 3], [1.0, 0.0, 0.0]], [0.0; 3]);
        assert_eq!(goal_progress(&[towards]), 5.0);
        let away = rec(&[[3.0, 0.0, 0.0], [8.0, 0.0, 0.0]], &[[0.0; 3], [1.0, 0.0, 0.0]], [0.0; 3]);
        assert_eq!(goal_progress(&[away]), -5.0);
        let still = rec(&[[3.0, 0.0, 0.0]], &[[0.0; 3], [1.0, 0.0, 0.0]], [0.0; 3]);
        assert_eq!(goal_progress(&[still]), 0.0);
    }
}
