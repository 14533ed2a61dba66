//! Description- and action-enriched trajectory records and the corpus manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::RoomType;
use crate::colmap::FrameIndex;
use crate::geometry::{angular_change, ViewState};
use crate::mining::{ActionCandidateSet, Trajectory};
use crate::schema;

/// Candidates closer than this to the current position get distance 0, heading 0.
pub const COINCIDENT_M: f64 = 1e-3;
pub const DESCRIPTIONS_FILE: &str = "descriptions.jsonl";
pub const ACTIONS_FILE: &str = "actions.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{kind} record {record_id} violates its schema: {message}")]
    Schema {
        kind: &'static str,
        record_id: String,
        message: String,
    },
    #[error("manifest inconsistent with emitted files: {0}")]
    Inconsistent(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Distance in meters and heading in degrees from `current` to `candidate`.
///
/// Heading is the angle between the current viewing direction and the ray
/// towards the candidate position.
pub fn explicit_geometry(current: &ViewState, candidate: &ViewState) -> (f64, f64) {
    let offset = candidate.position - current.position;
    let distance = offset.norm();
    if distance < COINCIDENT_M {
        return (0.0, 0.0);
    }
    (distance, angular_change(&current.direction, &(offset / distance)))
}

/// Hex SHA-256 of `parts` joined by `|`, cut to 32 characters.
pub fn record_id(parts: &[&str]) -> String {
    let digest = Sha256::digest(parts.join("|").as_bytes());
    hex::encode(digest)[..32].to_string()
}

pub fn description_record_id(video_id: &str, first: FrameIndex, last: FrameIndex, config_hash: &str) -> String {
    record_id(&["description", video_id, &first.to_string(), &last.to_string(), config_hash])
}

pub fn action_record_id(video_id: &str, step_frame: FrameIndex, config_hash: &str) -> String {
    record_id(&["action", video_id, &step_frame.to_string(), config_hash])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionFrame {
    pub frame_index: FrameIndex,
    pub room: Option<RoomType>,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub record_id: String,
    pub video_id: String,
    pub frame_indices: Vec<FrameIndex>,
    pub frames: Vec<DescriptionFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    /// Human relevance rating on a 1-4 scale, filled in after review.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance_score: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateRole {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub frame_index: FrameIndex,
    pub role: CandidateRole,
    pub distance_m: f64,
    pub heading_deg: f64,
}

/// Index of the positive candidate, or STOP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruth {
    Candidate(usize),
    Stop,
}

impl Serialize for GroundTruth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GroundTruth::Candidate(i) => s.serialize_u64(*i as u64),
            GroundTruth::Stop => s.serialize_str("STOP"),
        }
    }
}

impl<'de> Deserialize<'de> for GroundTruth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "STOP" => Ok(GroundTruth::Stop),
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(|i| GroundTruth::Candidate(i as usize))
                .ok_or_else(|| de::Error::custom("ground_truth index must be a non-negative integer")),
            other => Err(de::Error::custom(format!("invalid ground_truth {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub record_id: String,
    pub video_id: String,
    pub step: usize,
    pub current_frame: FrameIndex,
    /// Step frames before the current one.
    pub history: Vec<FrameIndex>,
    /// Sorted by frame index.
    pub candidates: Vec<Candidate>,
    pub ground_truth: GroundTruth,
}

impl ActionRecord {
    pub fn positive_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.role == CandidateRole::Positive).count()
    }
}

/// One record per step frame. Candidates are the next step (positive) plus
/// the negatives of every candidate cluster whose centroid lies within
/// `eps_m` of the current position; the last step's ground truth is STOP.
pub fn emit_action_records(
    trajectory: &Trajectory,
    candidate_sets: &[ActionCandidateSet],
    step_frames: &[FrameIndex],
    eps_m: f64,
    config_hash: &str,
) -> Vec<ActionRecord> {
    let steps: BTreeSet<FrameIndex> = step_frames.iter().copied().collect();
    let mut records = Vec::with_capacity(step_frames.len());
    for (s, &current_frame) in step_frames.iter().enumerate() {
        let Some(current) = trajectory.frame(current_frame) else {
            continue;
        };
        let next = step_frames.get(s + 1).copied();
        let mut roles: BTreeMap<FrameIndex, CandidateRole> = BTreeMap::new();
        for set in candidate_sets {
            if (set.centroid - current.view.position).norm() > eps_m {
                continue;
            }
            for &n in &set.negatives {
                if n != current_frame && !steps.contains(&n) {
                    roles.insert(n, CandidateRole::Negative);
                }
            }
        }
        if let Some(n) = next {
            roles.insert(n, CandidateRole::Positive);
        }
        let candidates: Vec<Candidate> = roles
            .into_iter()
            .filter_map(|(frame_index, role)| {
                let target = trajectory.frame(frame_index)?;
                let (distance_m, heading_deg) = explicit_geometry(&current.view, &target.view);
                Some(Candidate {
                    frame_index,
                    role,
                    distance_m,
                    heading_deg,
                })
            })
            .collect();
        let ground_truth = match next {
            Some(n) => GroundTruth::Candidate(
                candidates
                    .iter()
                    .position(|c| c.frame_index == n)
                    .expect("next step is in the trajectory"),
            ),
            None => GroundTruth::Stop,
        };
        records.push(ActionRecord {
            record_id: action_record_id(&trajectory.video_id, current_frame, config_hash),
            video_id: trajectory.video_id.clone(),
            step: s,
            current_frame,
            history: step_frames[..s].to_vec(),
            candidates,
            ground_truth,
        });
    }
    records
}

/// Checks a description record against its schema and the invariants JSON
/// Schema cannot express.
pub fn validate_description(record: &DescriptionRecord) -> Result<(), DatasetError> {
    let fail = |message: String| DatasetError::Schema {
        kind: "description",
        record_id: record.record_id.clone(),
        message,
    };
    let value = serde_json::to_value(record).map_err(|e| fail(e.to_string()))?;
    schema::check(schema::DESCRIPTION_RECORD, &value).map_err(fail)?;
    if !record.frame_indices.windows(2).all(|w| w[0] < w[1]) {
        return Err(fail("frame_indices not strictly increasing".into()));
    }
    let listed: Vec<FrameIndex> = record.frames.iter().map(|f| f.frame_index).collect();
    if listed != record.frame_indices {
        return Err(fail("frames do not match frame_indices".into()));
    }
    Ok(())
}

pub fn validate_action(record: &ActionRecord) -> Result<(), DatasetError> {
    let fail = |message: String| DatasetError::Schema {
        kind: "action",
        record_id: record.record_id.clone(),
        message,
    };
    let value = serde_json::to_value(record).map_err(|e| fail(e.to_string()))?;
    schema::check(schema::ACTION_RECORD, &value).map_err(fail)?;
    match record.ground_truth {
        GroundTruth::Stop => {
            if record.positive_count() != 0 {
                return Err(fail("STOP record carries a positive candidate".into()));
            }
        }
        GroundTruth::Candidate(i) => {
            if record.positive_count() != 1 {
                return Err(fail(format!("{} positive candidates", record.positive_count())));
            }
            if record.candidates.get(i).map(|c| c.role) != Some(CandidateRole::Positive) {
                return Err(fail(format!("ground_truth {i} does not point at the positive")));
            }
        }
    }
    Ok(())
}

/// Writes `records` as JSON lines through a temporary file, so a failed
/// write never leaves a partial file behind.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| io_err(path, e))?;
        buf.push(b'\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(&buf).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

pub fn write_description_records(path: &Path, records: &[DescriptionRecord]) -> Result<(), DatasetError> {
    records.iter().try_for_each(validate_description)?;
    write_jsonl(path, records)
}

pub fn write_action_records(path: &Path, records: &[ActionRecord]) -> Result<(), DatasetError> {
    records.iter().try_for_each(validate_action)?;
    write_jsonl(path, records)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoCounts {
    pub frames_registered: usize,
    pub frames_dropped: usize,
    pub decision_points: usize,
    pub candidate_sets: usize,
    pub description_records: usize,
    pub action_records: usize,
    pub generation_failures: usize,
    #[serde(default)]
    pub dropped_objects: usize,
    #[serde(default)]
    pub uniform_depth_frames: usize,
}

impl VideoCounts {
    fn add(&mut self, o: &VideoCounts) {
        self.frames_registered += o.frames_registered;
        self.frames_dropped += o.frames_dropped;
        self.decision_points += o.decision_points;
        self.candidate_sets += o.candidate_sets;
        self.description_records += o.description_records;
        self.action_records += o.action_records;
        self.generation_failures += o.generation_failures;
        self.dropped_objects += o.dropped_objects;
        self.uniform_depth_frames += o.uniform_depth_frames;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub counts: VideoCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub toolkit_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub videos: Vec<VideoEntry>,
    pub totals: VideoCounts,
}

impl CorpusManifest {
    /// Sorts videos by id and fills in the totals.
    pub fn new(config: serde_json::Value, config_hash: String, mut videos: Vec<VideoEntry>) -> Self {
        videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let mut totals = VideoCounts::default();
        for v in &videos {
            totals.add(&v.counts);
        }
        Self {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config_hash,
            config,
            videos,
            totals,
        }
    }
}

/// Per-video record counts found in the record files of `out_dir`:
/// `(descriptions, actions, descriptions without an instruction)`.
pub fn recount(out_dir: &Path) -> Result<BTreeMap<String, (usize, usize, usize)>, DatasetError> {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let desc_path = out_dir.join(DESCRIPTIONS_FILE);
    if desc_path.exists() {
        for r in read_jsonl::<DescriptionRecord>(&desc_path)? {
            let e = counts.entry(r.video_id).or_default();
            e.0 += 1;
            if r.instruction.is_none() {
                e.2 += 1;
            }
        }
    }
    let act_path = out_dir.join(ACTIONS_FILE);
    if act_path.exists() {
        for r in read_jsonl::<ActionRecord>(&act_path)? {
            counts.entry(r.video_id).or_default().1 += 1;
        }
    }
    Ok(counts)
}

/// Writes the manifest after checking its record counts against the files
/// already in `out_dir`.
pub fn write_manifest(out_dir: &Path, manifest: &CorpusManifest) -> Result<PathBuf, DatasetError> {
    let found = recount(out_dir)?;
    let claimed: BTreeMap<String, (usize, usize, usize)> = manifest
        .videos
        .iter()
        .filter(|v| v.counts.description_records + v.counts.action_records > 0)
        .map(|v| {
            (
                v.video_id.clone(),
                (
                    v.counts.description_records,
                    v.counts.action_records,
                    v.counts.generation_failures,
                ),
            )
        })
        .collect();
    if found != claimed {
        return Err(DatasetError::Inconsistent(format!(
            "files hold {found:?}, manifest claims {claimed:?}"
        )));
    }
    let value = serde_json::to_value(manifest).map_err(|e| DatasetError::Inconsistent(e.to_string()))?;
    schema::check(schema::MANIFEST, &value).map_err(|message| DatasetError::Schema {
        kind: "manifest",
        record_id: manifest.config_hash.clone(),
        message,
    })?;
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| io_err(&path, e))?;
    text.push('\n');
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}
