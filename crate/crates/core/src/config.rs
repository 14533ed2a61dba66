//! Pipeline configuration file (TOML).
//!
//! Every tunable constant has a named key with a default, so an empty file is
//! a valid configuration. Relative paths resolve against the directory that
//! holds the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::RoomType;
use crate::colmap::ModelFormat;
use crate::instructgen::ClientConfig;
use crate::mining::{CandidateParams, DecisionParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// One subdirectory per video holding `meta.json`, `annotations.json` and `models/`.
    pub videos_dir: PathBuf,
    /// Per-video intermediate artifacts.
    pub work_dir: PathBuf,
    /// Record files, manifest and metrics.
    pub output_dir: PathBuf,
    /// Prompt skeleton; the shipped template when absent.
    pub prompt_template: Option<PathBuf>,
    /// Path records to score in `eval`; mined trajectories are scored when absent.
    pub episodes: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            videos_dir: "videos".into(),
            work_dir: "work".into(),
            output_dir: "output".into(),
            prompt_template: None,
            episodes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub fps: f64,
    pub min_duration_s: f64,
    pub min_shots: usize,
    pub min_coverage: f64,
    /// Expected clip length of each sub-model; longer spans are reported.
    pub clip_length_s: f64,
    pub clip_overlap_s: f64,
    pub model_format: FormatName,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            fps: 3.0,
            min_duration_s: 180.0,
            min_shots: 9,
            min_coverage: 0.8,
            clip_length_s: 100.0,
            clip_overlap_s: 10.0,
            model_format: FormatName::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatName {
    Binary,
    Text,
    Auto,
}

impl From<FormatName> for ModelFormat {
    fn from(f: FormatName) -> Self {
        match f {
            FormatName::Binary => ModelFormat::Binary,
            FormatName::Text => ModelFormat::Text,
            FormatName::Auto => ModelFormat::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    pub min_shared_frames: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { min_shared_frames: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub walking_speed_mps: f64,
    /// Meters per reconstruction unit; skips the walking-speed estimate.
    pub scale_override: Option<f64>,
    pub threshold_deg: f64,
    pub look_ahead_frames: usize,
    pub nms_window: usize,
    pub eps_m: f64,
    pub min_pts: usize,
    pub negatives_per_cluster: usize,
    pub min_negative_deviation_deg: f64,
    pub step_interval_m: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            walking_speed_mps: 1.42,
            scale_override: None,
            threshold_deg: 45.0,
            look_ahead_frames: 3,
            nms_window: 4,
            eps_m: 1.0,
            min_pts: 2,
            negatives_per_cluster: 1,
            min_negative_deviation_deg: 0.0,
            step_interval_m: 1.5,
        }
    }
}

impl MiningConfig {
    pub fn decision_params(&self) -> DecisionParams {
        DecisionParams {
            threshold_deg: self.threshold_deg,
            look_ahead: self.look_ahead_frames,
            nms_window: self.nms_window,
            eps_m: self.eps_m,
            min_pts: self.min_pts,
        }
    }

    pub fn candidate_params(&self) -> CandidateParams {
        CandidateParams {
            negatives_per_cluster: self.negatives_per_cluster,
            min_negative_deviation_deg: self.min_negative_deviation_deg,
            eps_m: self.eps_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    /// Overlap share an object needs to count in a zone or depth band.
    pub label_threshold: f64,
    pub smoothing_window: usize,
    pub room_types: Vec<RoomType>,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            label_threshold: 0.3,
            smoothing_window: 5,
            room_types: RoomType::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptionConfig {
    pub period_s: f64,
    /// Sampled frames per description record.
    pub window_frames: usize,
    /// Trailing windows shorter than this are not emitted.
    pub min_window_frames: usize,
}

impl Default for DescriptionConfig {
    fn default() -> Self {
        Self {
            period_s: 2.0,
            window_frames: 8,
            min_window_frames: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Videos processed in parallel.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub success_threshold_m: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { success_threshold_m: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: String,
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub merge: MergeConfig,
    pub mining: MiningConfig,
    pub annotate: AnnotateConfig,
    pub description: DescriptionConfig,
    pub generation: ClientConfig,
    pub run: RunConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            profile: "default".into(),
            paths: PathsConfig::default(),
            ingest: IngestConfig::default(),
            merge: MergeConfig::default(),
            mining: MiningConfig::default(),
            annotate: AnnotateConfig::default(),
            description: DescriptionConfig::default(),
            generation: ClientConfig::default(),
            run: RunConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn check(errors: &mut Vec<String>, ok: bool, field: &str, msg: impl std::fmt::Display) {
    if !ok {
        errors.push(format!("{field}: {msg}"));
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut config =
            Self::from_toml(&text).map_err(|ConfigError(m)| ConfigError(format!("{}: {m}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.videos_dir);
        fix(&mut self.paths.work_dir);
        fix(&mut self.paths.output_dir);
        if let Some(p) = self.paths.prompt_template.as_mut() {
            fix(p);
        }
        if let Some(p) = self.paths.episodes.as_mut() {
            fix(p);
        }
    }

    /// All out-of-range fields, one `section.key: reason` per line.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut e = Vec::new();
        let i = &self.ingest;
        check(&mut e, i.fps > 0.0, "ingest.fps", "must be > 0");
        check(&mut e, i.min_duration_s >= 0.0, "ingest.min_duration_s", "must be >= 0");
        check(&mut e, (0.0..=1.0).contains(&i.min_coverage), "ingest.min_coverage", "must be in [0, 1]");
        check(&mut e, i.clip_length_s > 0.0, "ingest.clip_length_s", "must be > 0");
        check(
            &mut e,
            i.clip_overlap_s >= 0.0 && i.clip_overlap_s < i.clip_length_s,
            "ingest.clip_overlap_s",
            "must be in [0, clip_length_s)",
        );
        check(&mut e, self.merge.min_shared_frames >= 3, "merge.min_shared_frames", "must be >= 3");
        let m = &self.mining;
        check(&mut e, m.walking_speed_mps > 0.0, "mining.walking_speed_mps", "must be > 0");
        if let Some(s) = m.scale_override {
            check(&mut e, s > 0.0 && s.is_finite(), "mining.scale_override", "must be > 0");
        }
        check(
            &mut e,
            m.threshold_deg > 0.0 && m.threshold_deg < 180.0,
            "mining.threshold_deg",
            "must be in (0, 180)",
        );
        check(&mut e, m.look_ahead_frames >= 1, "mining.look_ahead_frames", "must be >= 1");
        check(&mut e, m.nms_window >= 1, "mining.nms_window", "must be >= 1");
        check(&mut e, m.eps_m > 0.0, "mining.eps_m", "must be > 0");
        check(&mut e, m.min_pts >= 1, "mining.min_pts", "must be >= 1");
        check(&mut e, m.negatives_per_cluster >= 1, "mining.negatives_per_cluster", "must be >= 1");
        check(
            &mut e,
            (0.0..180.0).contains(&m.min_negative_deviation_deg),
            "mining.min_negative_deviation_deg",
            "must be in [0, 180)",
        );
        check(&mut e, m.step_interval_m > 0.0, "mining.step_interval_m", "must be > 0");
        let a = &self.annotate;
        check(&mut e, (0.0..1.0).contains(&a.label_threshold), "annotate.label_threshold", "must be in [0, 1)");
        check(
            &mut e,
            a.smoothing_window % 2 == 1,
            "annotate.smoothing_window",
            "must be odd and >= 1",
        );
        check(&mut e, !a.room_types.is_empty(), "annotate.room_types", "must not be empty");
        let d = &self.description;
        check(&mut e, d.period_s > 0.0, "description.period_s", "must be > 0");
        check(&mut e, d.window_frames >= 1, "description.window_frames", "must be >= 1");
        check(
            &mut e,
            d.min_window_frames >= 1 && d.min_window_frames <= d.window_frames,
            "description.min_window_frames",
            "must be in [1, window_frames]",
        );
        if let Err(msg) = self.generation.validate() {
            e.push(msg);
        }
        check(&mut e, self.run.workers >= 1, "run.workers", "must be >= 1");
        check(
            &mut e,
            self.metrics.success_threshold_m > 0.0,
            "metrics.success_threshold_m",
            "must be > 0",
        );
        if e.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(e.join("\n")))
        }
    }

    /// The settings that shape emitted records, as canonical JSON. Paths,
    /// worker counts, the service endpoint and the credential variable are
    /// left out so relocating a run does not change record ids.
    pub fn content_snapshot(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("object");
        obj.remove("paths");
        obj.remove("run");
        if let Some(g) = obj.get_mut("generation").and_then(|g| g.as_object_mut()) {
            for k in ["endpoint", "api_key_env", "concurrency", "timeout_s", "max_attempts", "backoff_base_s"] {
                g.remove(k);
            }
        }
        v
    }

    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.content_snapshot()).expect("snapshot serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
