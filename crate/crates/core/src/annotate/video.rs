//! Whole-video filtering on duration and shot structure.

use serde::{Deserialize, Serialize};

use super::AnnotateError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetadata {
    pub video_id: String,
    pub duration_s: f64,
    /// `[start_s, end_s]` per continuous shot.
    pub shots: Vec<[f64; 2]>,
}

impl VideoMetadata {
    pub fn validate(&self) -> Result<(), AnnotateError> {
        let bad = |m: String| Err(AnnotateError::InvalidMetadata(format!("{}: {m}", self.video_id)));
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return bad(format!("duration {}", self.duration_s));
        }
        let mut sorted = self.shots.clone();
        sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut prev_end = 0.0;
        for [s, e] in sorted {
            if !(s.is_finite() && e.is_finite()) || s > e || s < 0.0 || e > self.duration_s {
                return bad(format!("shot [{s}, {e}] outside [0, {}]", self.duration_s));
            }
            if s < prev_end {
                return bad(format!("shot starting at {s} overlaps the previous one"));
            }
            prev_end = e;
        }
        Ok(())
    }

    pub fn shot_coverage(&self) -> f64 {
        if self.duration_s <= 0.0 {
            return 0.0;
        }
        self.shots.iter().map(|[s, e]| e - s).sum::<f64>() / self.duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRules {
    pub min_duration_s: f64,
    pub min_shots: usize,
    pub min_coverage: f64,
}

impl Default for AcceptanceRules {
    fn default() -> Self {
        Self {
            min_duration_s: 180.0,
            min_shots: 9,
            min_coverage: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    TooShort { duration_s: f64 },
    TooFewShots { shots: usize },
    LowCoverage { coverage: f64 },
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::TooShort { duration_s } => write!(f, "too short ({duration_s} s)"),
            Rejection::TooFewShots { shots } => write!(f, "too few shots ({shots})"),
            Rejection::LowCoverage { coverage } => write!(f, "shot coverage {coverage:.3} too low"),
        }
    }
}

/// `Ok(())` when the video passes every rule, otherwise the first failing one
/// in the order duration, shot count, coverage.
pub fn accept_video(meta: &VideoMetadata, rules: &AcceptanceRules) -> Result<(), Rejection> {
    if meta.duration_s < rules.min_duration_s {
        return Err(Rejection::TooShort {
            duration_s: meta.duration_s,
        });
    }
    if meta.shots.len() < rules.min_shots {
        return Err(Rejection::TooFewShots {
            shots: meta.shots.len(),
        });
    }
    let coverage = meta.shot_coverage();
    if coverage <= rules.min_coverage {
        return Err(Rejection::LowCoverage { coverage });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `n` equal shots of `len` seconds laid end to end from t = 0.
    fn meta(duration_s: f64, n: usize, len: f64) -> VideoMetadata {
        VideoMetadata {
            video_id: "v".into(),
            duration_s,
            shots: (0..n).map(|i| [i as f64 * len, (i + 1) as f64 * len]).collect(),
        }
    }

    #[test]
    fn short_video_rejected() {
        assert!(matches!(
            accept_video(&meta(120.0, 10, 11.0), &AcceptanceRules::default()),
            Err(Rejection::TooShort { .. })
        ));
    }

    #[test]
    fn ten_shots_85_percent_accepted() {
        let m = meta(600.0, 10, 51.0);
        m.validate().unwrap();
        assert!(accept_video(&m, &AcceptanceRules::default()).is_ok());
    }

    #[test]
    fn nine_shots_70_percent_rejected() {
        let m = meta(600.0, 9, 420.0 / 9.0);
        assert!(matches!(
            accept_video(&m, &AcceptanceRules::default()),
            Err(Rejection::LowCoverage { .. })
        ));
    }

    #[test]
    fn exact_boundaries() {
        let rules = AcceptanceRules::default();
        // Exactly 180 s and 9 shots pass; exactly 80% coverage does not.
        assert!(accept_video(&meta(180.0, 9, 17.0), &rules).is_ok());
        assert!(matches!(
            accept_video(&meta(180.0, 8, 20.0), &rules),
            Err(Rejection::TooFewShots { shots: 8 })
        ));
        assert!(matches!(
            accept_video(&meta(180.0, 9, 16.0), &rules),
            Err(Rejection::LowCoverage { .. })
        ));
    }

    #[test]
    fn overlapping_shots_invalid() {
        let m = VideoMetadata {
            video_id: "v".into(),
            duration_s: 10.0,
            shots: vec![[0.0, 5.0], [4.0, 8.0]],
        };
        assert!(m.validate().is_err());
        let m = VideoMetadata {
            video_id: "v".into(),
            duration_s: 10.0,
            shots: vec![[0.0, 11.0]],
        };
        assert!(m.validate().is_err());
    }
}
