//! Command-line front end: one subcommand per pipeline stage.
//!
//! Stages talk only through files under `work_dir/<video_id>/`, so any stage
//! can be rerun on its own once its inputs exist:
//!
//! | stage    | reads                                   | writes                                   |
//! |----------|-----------------------------------------|------------------------------------------|
//! | ingest   | `videos/<id>/meta.json`, `models/*`     | `ingest.json`, `submodels/*`             |
//! | merge    | `ingest.json`, `submodels/*`            | `merge.json`, `merged/`                  |
//! | mine     | `merged/`                               | `mining.json`                            |
//! | caption  | `mining.json`, `annotations.json`       | `captions.json`                          |
//! | instruct | `mining.json`, `captions.json`          | `instructions.jsonl`, `instruct.json`    |
//! | emit     | all of the above                        | output `descriptions.jsonl`, `actions.jsonl`, `manifest.json` |
//! | eval     | `mining.json` or configured episodes    | output `metrics.json`                    |

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotate::{self, RoomSequence, RoomType};
use crate::colmap::{self, FrameIndex, ModelFormat, SubModel};
use crate::config::PipelineConfig;
use crate::dataset::{
    self, ActionRecord, CorpusManifest, DescriptionFrame, DescriptionRecord, Provenance, VideoCounts, VideoEntry,
};
use crate::instructgen::{
    self, BatchItem, CompletionClient, HttpTransport, PromptFrame, PromptTemplate, Transport,
};
use crate::merge::{self, DroppedEdge, EdgeResidual};
use crate::metrics::{self, MetricsSummary, PathRecord};
use crate::mining::{self, ActionCandidateSet, DecisionPoint, ScaleSource, Trajectory, TrajectoryFrame};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

const META_FILE: &str = "meta.json";
const ANNOTATIONS_FILE: &str = "annotations.json";
const MODELS_DIR: &str = "models";
const INGEST_FILE: &str = "ingest.json";
const SUBMODELS_DIR: &str = "submodels";
const MERGE_FILE: &str = "merge.json";
const MERGED_DIR: &str = "merged";
const MINING_FILE: &str = "mining.json";
const CAPTIONS_FILE: &str = "captions.json";
const INSTRUCTIONS_FILE: &str = "instructions.jsonl";
const INSTRUCT_REPORT_FILE: &str = "instruct.json";
const METRICS_FILE: &str = "metrics.json";
const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Parser)]
#[command(name = "vlnmine", version, about = "Mine navigation training records from room-tour reconstructions")]
pub struct Cli {
    #[command(subcommand)]
    pub stage: Stage,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "vlnmine.toml")]
    pub config: PathBuf,
    /// Restrict the run to these video ids.
    #[arg(long, global = true, value_delimiter = ',')]
    pub videos: Vec<String>,
    /// Videos processed in parallel (overrides `run.workers`).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Report the planned work without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Format of the COLMAP models written to the work directory.
    #[arg(long, global = true, value_enum, default_value_t = WriteFormat::Binary)]
    pub format: WriteFormat,
    /// Structured event log (default `<work_dir>/events.jsonl`).
    #[arg(long, global = true)]
    pub log_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Stage {
    /// Parse sub-models and apply the video acceptance rules.
    Ingest,
    /// Fuse each video's sub-models into one coordinate frame.
    Merge,
    /// Scale, decision points, steps and action candidates.
    Mine,
    /// Spatial captions and smoothed room labels.
    Caption,
    /// Request instructions from the completion service (resumable).
    Instruct,
    /// Write record files and the corpus manifest.
    Emit,
    /// Path-level navigation metrics.
    Eval,
    /// Every stage in order.
    All,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::Ingest,
        Stage::Merge,
        Stage::Mine,
        Stage::Caption,
        Stage::Instruct,
        Stage::Emit,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Merge => "merge",
            Stage::Mine => "mine",
            Stage::Caption => "caption",
            Stage::Instruct => "instruct",
            Stage::Emit => "emit",
            Stage::Eval => "eval",
            Stage::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WriteFormat {
    Binary,
    Text,
}

impl From<WriteFormat> for ModelFormat {
    fn from(f: WriteFormat) -> Self {
        match f {
            WriteFormat::Binary => ModelFormat::Binary,
            WriteFormat::Text => ModelFormat::Text,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error:\n{0}")]
    Config(String),
    #[error("{video}: missing {artifact} ({path}); run `{stage}` first")]
    MissingArtifact {
        video: String,
        artifact: &'static str,
        stage: &'static str,
        path: PathBuf,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

fn fail(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Failed(format!("{context}: {e}"))
}

/// Everything a stage needs besides the config.
#[derive(Clone)]
pub struct RunOptions {
    pub videos: Vec<String>,
    pub dry_run: bool,
    pub format: ModelFormat,
    /// Replaces the HTTP transport, e.g. with a mock.
    pub transport: Option<Arc<dyn Transport>>,
    /// Credential to use instead of the configured environment variable.
    pub api_key: Option<String>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            videos: Vec::new(),
            dry_run: false,
            format: ModelFormat::Binary,
            transport: None,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub processed: Vec<String>,
    pub skipped: Vec<String>,
    pub failures: Vec<VideoFailure>,
    /// Paths written (or, in a dry run, that would be written).
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFailure {
    pub video_id: String,
    pub error: String,
}

// ---------------------------------------------------------------------------
// On-disk artifacts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModelSummary {
    pub model_id: u32,
    pub frames: usize,
    pub clip_span: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestArtifact {
    pub video_id: String,
    pub accepted: bool,
    pub rejection: Option<String>,
    pub duration_s: f64,
    pub shots: usize,
    pub shot_coverage: f64,
    pub submodels: Vec<SubModelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub component_id: usize,
    pub root_model_id: u32,
    pub model_ids: Vec<u32>,
    pub frames: usize,
    pub alignment_residuals: Vec<EdgeResidual>,
    pub dropped_edges: Vec<DroppedEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeArtifact {
    pub video_id: String,
    pub components: Vec<ComponentSummary>,
    /// Component kept as the video's trajectory: the one with the most frames.
    pub chosen_component: usize,
    pub frames_registered: usize,
    /// Frames inside the overall frame span missing from the chosen component.
    pub frames_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningArtifact {
    pub video_id: String,
    pub fps: f64,
    pub scale: f64,
    pub scale_source: ScaleSource,
    pub trajectory: Vec<TrajectoryFrame>,
    pub decision_points: Vec<DecisionPoint>,
    pub candidate_sets: Vec<ActionCandidateSet>,
    pub step_frames: Vec<FrameIndex>,
    pub description_frames: Vec<FrameIndex>,
}

impl MiningArtifact {
    pub fn trajectory(&self) -> Result<Trajectory, CliError> {
        let mut t = Trajectory::new(self.video_id.clone(), self.trajectory.clone(), self.fps)
            .map_err(|e| fail(&self.video_id, e))?;
        t.scale = self.scale;
        t.scale_source = Some(self.scale_source);
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionedFrame {
    pub frame_index: FrameIndex,
    pub room: Option<RoomType>,
    pub captions: Vec<String>,
    pub dropped_objects: usize,
    pub unplaced_objects: usize,
    pub uniform_depth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionArtifact {
    pub video_id: String,
    pub frames: Vec<CaptionedFrame>,
    pub rooms: RoomSequence,
    pub dropped_objects: usize,
    pub uniform_depth_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructArtifact {
    pub video_id: String,
    pub records: usize,
    pub requested: usize,
    pub skipped: usize,
    pub failures: Vec<instructgen::BatchFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsArtifact {
    /// `configured` when scoring the configured episodes file, `mined` for
    /// the step-path QA episodes built from mined trajectories.
    pub source: String,
    pub summary: MetricsSummary,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| fail(dir.display(), e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| fail(path.display(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| fail(path.display(), e))
}

fn read_artifact<T: DeserializeOwned>(
    video: &str,
    path: &Path,
    artifact: &'static str,
    stage: &'static str,
) -> Result<T, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            video: video.to_string(),
            artifact,
            stage,
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| fail(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| fail(path.display(), e))
}

// ---------------------------------------------------------------------------
// Logging

static EVENT_SINK: OnceLock<Mutex<Option<fs::File>>> = OnceLock::new();

fn event_sink() -> &'static Mutex<Option<fs::File>> {
    EVENT_SINK.get_or_init(|| Mutex::new(None))
}

struct SinkWriter;

impl Write for SinkWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        match event_sink().lock().expect("event sink poisoned").as_mut() {
            Some(f) => f.write(buf),
            None => Ok(buf.len()),
        }
    }

    fn flush(&mut self) -> std::io::Result<()> {
        match event_sink().lock().expect("event sink poisoned").as_mut() {
            Some(f) => f.flush(),
            None => Ok(()),
        }
    }
}

/// Console rendering on stderr plus one JSON event per line in the event
/// log. The subscriber is installed once per process; later runs only
/// redirect the event log.
fn init_logging(events: Option<&Path>) {
    use tracing_subscriber::layer::SubscriberExt;
    use tracing_subscriber::util::SubscriberInitExt;
    use tracing_subscriber::{fmt, EnvFilter, Layer};

    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        let console = fmt::layer()
            .with_writer(std::io::stderr)
            .with_target(false)
            .with_filter(EnvFilter::try_from_env("VLNMINE_LOG").unwrap_or_else(|_| EnvFilter::new("info")));
        let json = fmt::layer()
            .json()
            .with_writer(|| SinkWriter)
            .with_filter(tracing_subscriber::filter::LevelFilter::DEBUG);
        let _ = tracing_subscriber::registry().with(console).with(json).try_init();
    });
    let file = events.and_then(|p| {
        p.parent().map(fs::create_dir_all);
        fs::OpenOptions::new().create(true).append(true).open(p).ok()
    });
    *event_sink().lock().expect("event sink poisoned") = file;
}

// ---------------------------------------------------------------------------
// Entry points

/// Parses `args` (including the program name), runs the stage and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let mut config = match PipelineConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error:\n{e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("configuration error:\n--workers: must be >= 1");
            return EXIT_CONFIG;
        }
        config.run.workers = w;
    }
    let events = if cli.dry_run {
        None
    } else {
        Some(cli.log_json.clone().unwrap_or_else(|| config.paths.work_dir.join(EVENTS_FILE)))
    };
    init_logging(events.as_deref());
    let opts = RunOptions {
        videos: cli.videos.clone(),
        dry_run: cli.dry_run,
        format: cli.format.into(),
        transport: None,
        api_key: None,
    };
    let code = match run(cli.stage, &config, &opts) {
        Ok(reports) => {
            let failed: Vec<&VideoFailure> = reports.iter().flat_map(|r| &r.failures).collect();
            if failed.is_empty() {
                EXIT_OK
            } else {
                eprintln!("{} video failure(s):", failed.len());
                for f in failed {
                    eprintln!("  {}: {}", f.video_id, f.error);
                }
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    init_logging(None);
    code
}

/// Runs `stage` (or every stage for [`Stage::All`]), stopping after the
/// first stage that reports failures.
pub fn run(stage: Stage, config: &PipelineConfig, opts: &RunOptions) -> Result<Vec<StageReport>, CliError> {
    config.validate().map_err(|e| CliError::Config(e.0))?;
    let stages: Vec<Stage> = if stage == Stage::All {
        Stage::PIPELINE.to_vec()
    } else {
        vec![stage]
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.workers)
        .build()
        .map_err(|e| fail("worker pool", e))?;
    let ctx = Context {
        config,
        opts,
        videos: discover_videos(config, opts)?,
        content_hash: config.content_hash(),
    };
    let mut reports = Vec::new();
    for s in stages {
        tracing::info!(stage = s.name(), videos = ctx.videos.len(), dry_run = opts.dry_run, "stage start");
        let report = pool.install(|| ctx.run_stage(s))?;
        tracing::info!(
            stage = s.name(),
            processed = report.processed.len(),
            skipped = report.skipped.len(),
            failed = report.failures.len(),
            "stage done"
        );
        if opts.dry_run {
            for p in &report.outputs {
                println!("[dry-run] {}: would write {}", s.name(), p.display());
            }
        } else if !report.failures.is_empty() {
            write_json(&config.paths.work_dir.join(format!("failures_{}.json", s.name())), &report)?;
        }
        let stop = !report.failures.is_empty();
        reports.push(report);
        if stop {
            break;
        }
    }
    Ok(reports)
}

fn discover_videos(config: &PipelineConfig, opts: &RunOptions) -> Result<Vec<String>, CliError> {
    let dir = &config.paths.videos_dir;
    let entries = fs::read_dir(dir).map_err(|e| fail(format!("videos_dir {}", dir.display()), e))?;
    let mut found: Vec<String> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .collect();
    found.sort();
    if opts.videos.is_empty() {
        return Ok(found);
    }
    for v in &opts.videos {
        if !found.contains(v) {
            return Err(fail(format!("--videos {v}"), format!("no such video under {}", dir.display())));
        }
    }
    Ok(found.into_iter().filter(|v| opts.videos.contains(v)).collect())
}

struct Context<'a> {
    config: &'a PipelineConfig,
    opts: &'a RunOptions,
    videos: Vec<String>,
    content_hash: String,
}

enum Outcome {
    Done(Vec<PathBuf>),
    Skipped(String),
}

impl Context<'_> {
    fn input_dir(&self, video: &str) -> PathBuf {
        self.config.paths.videos_dir.join(video)
    }

    fn work(&self, video: &str) -> PathBuf {
        self.config.paths.work_dir.join(video)
    }

    fn run_stage(&self, stage: Stage) -> Result<StageReport, CliError> {
        match stage {
            Stage::Emit => return self.emit(),
            Stage::Eval => return self.eval(),
            _ => {}
        }
        let results: Vec<(String, Result<Outcome, CliError>)> = self
            .videos
            .par_iter()
            .map(|v| {
                let _span = tracing::info_span!("video", video_id = %v, stage = stage.name()).entered();
                let r = match stage {
                    Stage::Ingest => self.ingest(v),
                    Stage::Merge => self.merge(v),
                    Stage::Mine => self.mine(v),
                    Stage::Caption => self.caption(v),
                    Stage::Instruct => self.instruct(v),
                    _ => unreachable!("corpus-level stages handled above"),
                };
                match &r {
                    Ok(Outcome::Done(_)) => tracing::info!(video_id = %v, stage = stage.name(), "video done"),
                    Ok(Outcome::Skipped(why)) => {
                        tracing::info!(video_id = %v, stage = stage.name(), reason = %why, "video skipped")
                    }
                    Err(e) => tracing::error!(video_id = %v, stage = stage.name(), error = %e, "video failed"),
                }
                (v.clone(), r)
            })
            .collect();
        let mut report = StageReport {
            stage: stage.name().to_string(),
            ..Default::default()
        };
        for (video, r) in results {
            match r {
                Ok(Outcome::Done(outputs)) => {
                    report.processed.push(video);
                    report.outputs.extend(outputs);
                }
                Ok(Outcome::Skipped(_)) => report.skipped.push(video),
                Err(e) => report.failures.push(VideoFailure {
                    video_id: video,
                    error: e.to_string(),
                }),
            }
        }
        Ok(report)
    }

    /// Whether `video` passed ingest. Videos rejected there are skipped by
    /// every later stage. A dry run plans for acceptance when ingest has not
    /// run yet.
    fn accepted(&self, video: &str) -> Result<bool, CliError> {
        let path = self.work(video).join(INGEST_FILE);
        if self.opts.dry_run && !path.exists() {
            return Ok(true);
        }
        let ingest: IngestArtifact = read_artifact(video, &path, "ingest.json", "ingest")?;
        Ok(ingest.accepted)
    }

    fn ingest(&self, video: &str) -> Result<Outcome, CliError> {
        let input = self.input_dir(video);
        let work = self.work(video);
        let models_dir = input.join(MODELS_DIR);
        let meta_path = input.join(META_FILE);
        if self.opts.dry_run {
            return Ok(Outcome::Done(vec![work.join(INGEST_FILE), work.join(SUBMODELS_DIR)]));
        }
        let meta = annotate::load_video_metadata(&meta_path).map_err(|e| fail(video, e))?;
        if meta.video_id != video {
            return Err(fail(
                meta_path.display(),
                format!("video_id {:?} does not match directory {video:?}", meta.video_id),
            ));
        }
        let rules = annotate::AcceptanceRules {
            min_duration_s: self.config.ingest.min_duration_s,
            min_shots: self.config.ingest.min_shots,
            min_coverage: self.config.ingest.min_coverage,
        };
        let verdict = annotate::accept_video(&meta, &rules);
        let mut dirs: Vec<PathBuf> = fs::read_dir(&models_dir)
            .map_err(|e| fail(models_dir.display(), e))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut submodels: Vec<SubModel> = Vec::new();
        if verdict.is_ok() {
            for d in &dirs {
                let m = colmap::parse_model(d, self.config.ingest.model_format.into()).map_err(|e| fail(video, e))?;
                let span = m.clip_span.1 - m.clip_span.0;
                if span > self.config.ingest.clip_length_s + 1.0 / self.config.ingest.fps {
                    tracing::warn!(video_id = video, model_id = m.model_id, span, "clip longer than configured clip length");
                }
                submodels.push(m);
            }
        }
        let artifact = IngestArtifact {
            video_id: video.to_string(),
            accepted: verdict.is_ok(),
            rejection: verdict.as_ref().err().map(|r| r.to_string()),
            duration_s: meta.duration_s,
            shots: meta.shots.len(),
            shot_coverage: meta.shot_coverage(),
            submodels: submodels
                .iter()
                .map(|m| SubModelSummary {
                    model_id: m.model_id,
                    frames: m.poses.len(),
                    clip_span: m.clip_span,
                })
                .collect(),
        };
        let sub_dir = work.join(SUBMODELS_DIR);
        if sub_dir.exists() {
            fs::remove_dir_all(&sub_dir).map_err(|e| fail(sub_dir.display(), e))?;
        }
        let mut outputs = vec![work.join(INGEST_FILE)];
        for m in &submodels {
            let d = sub_dir.join(format!("{:04}", m.model_id));
            colmap::write_model(m, &d, self.opts.format).map_err(|e| fail(video, e))?;
            outputs.push(d);
        }
        write_json(&work.join(INGEST_FILE), &artifact)?;
        if let Err(r) = verdict {
            tracing::info!(video_id = video, reason = %r, "video rejected");
        }
        Ok(Outcome::Done(outputs))
    }

    fn merge(&self, video: &str) -> Result<Outcome, CliError> {
        let work = self.work(video);
        if !self.accepted(video)? {
            return Ok(Outcome::Skipped("rejected at ingest".into()));
        }
        if self.opts.dry_run {
            return Ok(Outcome::Done(vec![work.join(MERGE_FILE), work.join(MERGED_DIR)]));
        }
        let ingest: IngestArtifact = read_artifact(video, &work.join(INGEST_FILE), "ingest.json", "ingest")?;
        let mut submodels = Vec::new();
        for s in &ingest.submodels {
            let d = work.join(SUBMODELS_DIR).join(format!("{:04}", s.model_id));
            if !d.exists() {
                return Err(CliError::MissingArtifact {
                    video: video.into(),
                    artifact: "sub-model",
                    stage: "ingest",
                    path: d,
                });
            }
            submodels.push(colmap::parse_model(&d, ModelFormat::Auto).map_err(|e| fail(video, e))?);
        }
        let merged =
            merge::merge_submodels(&submodels, self.config.merge.min_shared_frames).map_err(|e| fail(video, e))?;
        let Some(chosen) = merged
            .iter()
            .max_by(|a, b| a.poses.len().cmp(&b.poses.len()).then(b.root_model_id.cmp(&a.root_model_id)))
        else {
            return Err(fail(video, "no registered frames"));
        };
        let all_frames: Vec<FrameIndex> = submodels.iter().flat_map(|m| m.poses.keys().copied()).collect();
        let span = match (all_frames.iter().min(), all_frames.iter().max()) {
            (Some(a), Some(b)) => (b - a) as usize + 1,
            _ => 0,
        };
        let artifact = MergeArtifact {
            video_id: video.to_string(),
            components: merged
                .iter()
                .map(|c| ComponentSummary {
                    component_id: c.component_id,
                    root_model_id: c.root_model_id,
                    model_ids: c.model_ids.clone(),
                    frames: c.poses.len(),
                    alignment_residuals: c.alignment_residuals.clone(),
                    dropped_edges: c.dropped_edges.clone(),
                })
                .collect(),
            chosen_component: chosen.component_id,
            frames_registered: chosen.poses.len(),
            frames_dropped: span - chosen.poses.len(),
        };
        let merged_dir = work.join(MERGED_DIR);
        if merged_dir.exists() {
            fs::remove_dir_all(&merged_dir).map_err(|e| fail(merged_dir.display(), e))?;
        }
        colmap::write_model(&chosen.to_submodel(), &merged_dir, self.opts.format).map_err(|e| fail(video, e))?;
        write_json(&work.join(MERGE_FILE), &artifact)?;
        Ok(Outcome::Done(vec![work.join(MERGE_FILE), merged_dir]))
    }

    fn mine(&self, video: &str) -> Result<Outcome, CliError> {
        let work = self.work(video);
        if !self.accepted(video)? {
            return Ok(Outcome::Skipped("rejected at ingest".into()));
        }
        if self.opts.dry_run {
            return Ok(Outcome::Done(vec![work.join(MINING_FILE)]));
        }
        let merged_dir = work.join(MERGED_DIR);
        if !merged_dir.exists() {
            return Err(CliError::MissingArtifact {
                video: video.into(),
                artifact: "merged model",
                stage: "merge",
                path: merged_dir,
            });
        }
        let model = colmap::parse_model(&merged_dir, ModelFormat::Auto).map_err(|e| fail(video, e))?;
        let cfg = &self.config.mining;
        let fps = self.config.ingest.fps;
        let raw = Trajectory::from_poses(video, &model.poses, fps).map_err(|e| fail(video, e))?;
        let (scale, source) = match cfg.scale_override {
            Some(s) => (s, ScaleSource::UserOverride),
            None => (
                mining::estimate_scale(&raw, cfg.walking_speed_mps).map_err(|e| fail(video, e))?,
                ScaleSource::WalkingSpeedEstimate,
            ),
        };
        let trajectory = raw.scaled(scale, source);
        let decision_points = mining::detect_decision_points(&trajectory, &cfg.decision_params());
        let candidate_sets = mining::make_action_candidates(&trajectory, &decision_points, &cfg.candidate_params());
        let artifact = MiningArtifact {
            video_id: video.to_string(),
            fps,
            scale,
            scale_source: source,
            step_frames: mining::resample_steps(&trajectory, cfg.step_interval_m),
            description_frames: mining::sample_description_frames(&trajectory, self.config.description.period_s),
            trajectory: trajectory.frames,
            decision_points,
            candidate_sets,
        };
        write_json(&work.join(MINING_FILE), &artifact)?;
        Ok(Outcome::Done(vec![work.join(MINING_FILE)]))
    }

    fn caption(&self, video: &str) -> Result<Outcome, CliError> {
        let work = self.work(video);
        if !self.accepted(video)? {
            return Ok(Outcome::Skipped("rejected at ingest".into()));
        }
        if self.opts.dry_run {
            return Ok(Outcome::Done(vec![work.join(CAPTIONS_FILE)]));
        }
        let mining: MiningArtifact = read_artifact(video, &work.join(MINING_FILE), "mining.json", "mine")?;
        let ann = annotate::load_annotations(&self.input_dir(video).join(ANNOTATIONS_FILE))
            .map_err(|e| fail(video, e))?;
        let raw = ann.raw_rooms();
        for (frame, label) in &raw {
            let room: RoomType = label.parse().map_err(|e| fail(format!("{video} frame {frame}"), e))?;
            if !self.config.annotate.room_types.contains(&room) {
                return Err(fail(
                    format!("{video} frame {frame}"),
                    annotate::AnnotateError::Vocabulary(label.to_string()),
                ));
            }
        }
        let rooms = annotate::smooth_room_labels(&raw, self.config.annotate.smoothing_window)
            .map_err(|e| fail(video, e))?;
        let threshold = self.config.annotate.label_threshold;
        let frames: Vec<CaptionedFrame> = mining
            .description_frames
            .iter()
            .map(|&f| {
                let mut out = CaptionedFrame {
                    frame_index: f,
                    room: rooms.room_at(f),
                    captions: Vec::new(),
                    dropped_objects: 0,
                    unplaced_objects: 0,
                    uniform_depth: false,
                };
                if let Some(a) = ann.frame(f) {
                    let depth = ann.load_depth(a).map_err(|e| fail(format!("{video} frame {f}"), e))?;
                    let c = annotate::caption_frame(a, depth.as_ref(), threshold)
                        .map_err(|e| fail(format!("{video} frame {f}"), e))?;
                    out.captions = c.captions;
                    out.dropped_objects = c.dropped_objects;
                    out.unplaced_objects = c.unplaced_objects;
                    out.uniform_depth = c.uniform_depth;
                }
                Ok(out)
            })
            .collect::<Result<_, CliError>>()?;
        let artifact = CaptionArtifact {
            video_id: video.to_string(),
            dropped_objects: frames.iter().map(|f| f.dropped_objects).sum(),
            uniform_depth_frames: frames.iter().filter(|f| f.uniform_depth).count(),
            frames,
            rooms,
        };
        write_json(&work.join(CAPTIONS_FILE), &artifact)?;
        Ok(Outcome::Done(vec![work.join(CAPTIONS_FILE)]))
    }

    /// Description windows with their record ids and prompts.
    fn description_windows(
        &self,
        video: &str,
        mining: &MiningArtifact,
        captions: &CaptionArtifact,
    ) -> Result<Vec<(String, Vec<CaptionedFrame>)>, CliError> {
        let by_frame: BTreeMap<FrameIndex, &CaptionedFrame> =
            captions.frames.iter().map(|f| (f.frame_index, f)).collect();
        let cfg = &self.config.description;
        let mut out = Vec::new();
        for window in mining.description_frames.chunks(cfg.window_frames) {
            if window.len() < cfg.min_window_frames {
                continue;
            }
            let frames: Vec<CaptionedFrame> = window
                .iter()
                .map(|f| {
                    by_frame.get(f).map(|c| (*c).clone()).ok_or_else(|| {
                        fail(video, format!("captions.json has no frame {f}; rerun `caption`"))
                    })
                })
                .collect::<Result<_, _>>()?;
            let id = dataset::description_record_id(
                video,
                window[0],
                *window.last().expect("nonempty"),
                &self.content_hash,
            );
            out.push((id, frames));
        }
        Ok(out)
    }

    fn template(&self) -> Result<PromptTemplate, CliError> {
        match &self.config.paths.prompt_template {
            Some(p) => PromptTemplate::load(p).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(PromptTemplate::shipped()),
        }
    }

    fn instruct(&self, video: &str) -> Result<Outcome, CliError> {
        let work = self.work(video);
        if !self.accepted(video)? {
            return Ok(Outcome::Skipped("rejected at ingest".into()));
        }
        let results_path = work.join(INSTRUCTIONS_FILE);
        if self.opts.dry_run {
            return Ok(Outcome::Done(vec![results_path, work.join(INSTRUCT_REPORT_FILE)]));
        }
        let mining: MiningArtifact = read_artifact(video, &work.join(MINING_FILE), "mining.json", "mine")?;
        let captions: CaptionArtifact =
            read_artifact(video, &work.join(CAPTIONS_FILE), "captions.json", "caption")?;
        let template = self.template()?;
        let items: Vec<BatchItem> = self
            .description_windows(video, &mining, &captions)?
            .into_iter()
            .map(|(record_id, frames)| {
                let prompt_frames: Vec<PromptFrame> = frames
                    .iter()
                    .map(|f| PromptFrame {
                        frame_index: f.frame_index,
                        room: f.room.map(|r| r.as_str().to_string()),
                        captions: f.captions.clone(),
                    })
                    .collect();
                instructgen::build_prompt(&prompt_frames, &template)
                    .map(|prompt| BatchItem { record_id, prompt })
                    .map_err(|e| fail(video, e))
            })
            .collect::<Result<_, _>>()?;
        let done = instructgen::load_completed(&results_path).map_err(|e| fail(video, e))?;
        let pending = items.iter().filter(|i| !done.contains_key(&i.record_id)).count();
        let report = if pending == 0 {
            instructgen::BatchReport {
                skipped: items.len(),
                ..Default::default()
            }
        } else {
            let transport: Arc<dyn Transport> = match &self.opts.transport {
                Some(t) => t.clone(),
                None => Arc::new(HttpTransport::new().map_err(|e| CliError::Config(e.to_string()))?),
            };
            let cfg = self.config.generation.clone();
            let client = match &self.opts.api_key {
                Some(k) => CompletionClient::new(cfg, k.clone(), transport),
                None => CompletionClient::from_env(cfg, transport),
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            instructgen::generate_batch(&items, &client, self.config.generation.concurrency, &results_path)
                .map_err(|e| fail(video, e))?
        };
        let artifact = InstructArtifact {
            video_id: video.to_string(),
            records: items.len(),
            requested: report.completed.len() + report.failures.len(),
            skipped: report.skipped,
            failures: report.failures,
        };
        for f in &artifact.failures {
            tracing::warn!(video_id = video, record_id = %f.record_id, error = %f.error, "instruction not generated");
        }
        write_json(&work.join(INSTRUCT_REPORT_FILE), &artifact)?;
        Ok(Outcome::Done(vec![results_path, work.join(INSTRUCT_REPORT_FILE)]))
    }

    fn emit(&self) -> Result<StageReport, CliError> {
        let out_dir = &self.config.paths.output_dir;
        let mut report = StageReport {
            stage: "emit".into(),
            outputs: vec![
                out_dir.join(dataset::DESCRIPTIONS_FILE),
                out_dir.join(dataset::ACTIONS_FILE),
                out_dir.join(dataset::MANIFEST_FILE),
            ],
            ..Default::default()
        };
        if self.opts.dry_run {
            report.processed = self.videos.clone();
            return Ok(report);
        }
        let template = self.template()?;
        let per_video: Vec<(String, Result<Option<VideoEmission>, CliError>)> = self
            .videos
            .par_iter()
            .map(|v| (v.clone(), self.emit_video(v, &template)))
            .collect();
        let mut descriptions = Vec::new();
        let mut actions = Vec::new();
        let mut entries = Vec::new();
        for (video, r) in per_video {
            match r {
                Ok(Some(e)) => {
                    descriptions.extend(e.descriptions);
                    actions.extend(e.actions);
                    entries.push(VideoEntry {
                        video_id: video.clone(),
                        counts: e.counts,
                    });
                    report.processed.push(video);
                }
                Ok(None) => report.skipped.push(video),
                Err(e) => {
                    tracing::error!(video_id = %video, stage = "emit", error = %e, "video failed");
                    report.failures.push(VideoFailure {
                        video_id: video,
                        error: e.to_string(),
                    })
                }
            }
        }
        if !report.failures.is_empty() {
            return Ok(report);
        }
        dataset::write_description_records(&out_dir.join(dataset::DESCRIPTIONS_FILE), &descriptions)
            .map_err(|e| fail("emit", e))?;
        dataset::write_action_records(&out_dir.join(dataset::ACTIONS_FILE), &actions).map_err(|e| fail("emit", e))?;
        let manifest = CorpusManifest::new(self.config_snapshot(), self.content_hash.clone(), entries);
        dataset::write_manifest(out_dir, &manifest).map_err(|e| fail("emit", e))?;
        tracing::info!(
            descriptions = descriptions.len(),
            actions = actions.len(),
            "records written"
        );
        Ok(report)
    }

    /// Full resolved configuration for the manifest, minus machine-specific paths.
    fn config_snapshot(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self.config).expect("config serializes");
        v.as_object_mut().expect("object").remove("paths");
        v
    }

    fn emit_video(&self, video: &str, template: &PromptTemplate) -> Result<Option<VideoEmission>, CliError> {
        if !self.accepted(video)? {
            return Ok(None);
        }
        let work = self.work(video);
        let merge: MergeArtifact = read_artifact(video, &work.join(MERGE_FILE), "merge.json", "merge")?;
        let mining: MiningArtifact = read_artifact(video, &work.join(MINING_FILE), "mining.json", "mine")?;
        let captions: CaptionArtifact =
            read_artifact(video, &work.join(CAPTIONS_FILE), "captions.json", "caption")?;
        let _: InstructArtifact =
            read_artifact(video, &work.join(INSTRUCT_REPORT_FILE), "instruct.json", "instruct")?;
        let generated =
            instructgen::load_completed(&work.join(INSTRUCTIONS_FILE)).map_err(|e| fail(video, e))?;
        let mut descriptions = Vec::new();
        for (record_id, frames) in self.description_windows(video, &mining, &captions)? {
            let prompt_frames: Vec<PromptFrame> = frames
                .iter()
                .map(|f| PromptFrame {
                    frame_index: f.frame_index,
                    room: f.room.map(|r| r.as_str().to_string()),
                    captions: f.captions.clone(),
                })
                .collect();
            let prompt = instructgen::build_prompt(&prompt_frames, template).map_err(|e| fail(video, e))?;
            // An outcome generated from a different prompt (edited template or
            // captions) does not belong to this record.
            let outcome = generated
                .get(&record_id)
                .filter(|o| o.prompt_hash == instructgen::prompt_hash(&prompt));
            descriptions.push(DescriptionRecord {
                record_id,
                video_id: video.to_string(),
                frame_indices: frames.iter().map(|f| f.frame_index).collect(),
                frames: frames
                    .into_iter()
                    .map(|f| DescriptionFrame {
                        frame_index: f.frame_index,
                        room: f.room,
                        captions: f.captions,
                    })
                    .collect(),
                instruction: outcome.map(|o| o.text.clone()),
                provenance: outcome.map(|o| Provenance {
                    model: o.model.clone(),
                    temperature: o.temperature,
                    max_tokens: o.max_tokens,
                    prompt_hash: o.prompt_hash.clone(),
                }),
                relevance_score: None,
            });
        }
        let trajectory = mining.trajectory()?;
        let actions: Vec<ActionRecord> = dataset::emit_action_records(
            &trajectory,
            &mining.candidate_sets,
            &mining.step_frames,
            self.config.mining.eps_m,
            &self.content_hash,
        );
        let counts = VideoCounts {
            frames_registered: merge.frames_registered,
            frames_dropped: merge.frames_dropped,
            decision_points: mining.decision_points.len(),
            candidate_sets: mining.candidate_sets.len(),
            description_records: descriptions.len(),
            action_records: actions.len(),
            generation_failures: descriptions.iter().filter(|d| d.instruction.is_none()).count(),
            dropped_objects: captions.dropped_objects,
            uniform_depth_frames: captions.uniform_depth_frames,
        };
        Ok(Some(VideoEmission {
            descriptions,
            actions,
            counts,
        }))
    }

    fn eval(&self) -> Result<StageReport, CliError> {
        let out = self.config.paths.output_dir.join(METRICS_FILE);
        let mut report = StageReport {
            stage: "eval".into(),
            outputs: vec![out.clone()],
            ..Default::default()
        };
        if self.opts.dry_run {
            return Ok(report);
        }
        let threshold = self.config.metrics.success_threshold_m;
        let (source, records) = match &self.config.paths.episodes {
            Some(p) => ("configured", metrics::read_path_records(p).map_err(|e| fail("eval", e))?),
            None => {
                let mut records = Vec::new();
                for v in &self.videos {
                    if !self.accepted(v)? {
                        report.skipped.push(v.clone());
                        continue;
                    }
                    let mining: MiningArtifact =
                        read_artifact(v, &self.work(v).join(MINING_FILE), "mining.json", "mine")?;
                    records.push(step_path_episode(&mining, threshold));
                    report.processed.push(v.clone());
                }
                ("mined", records)
            }
        };
        let summary = metrics::summarize(&records).map_err(|e| fail("eval", e))?;
        tracing::info!(
            episodes = summary.episodes,
            sr = summary.success_rate,
            spl = summary.spl,
            gp = summary.goal_progress_m,
            "metrics"
        );
        write_json(
            &out,
            &MetricsArtifact {
                source: source.to_string(),
                summary,
            },
        )?;
        Ok(report)
    }
}

struct VideoEmission {
    descriptions: Vec<DescriptionRecord>,
    actions: Vec<ActionRecord>,
    counts: VideoCounts,
}

/// QA episode for a mined video: the step path against the full camera path,
/// with the last camera position as goal.
pub fn step_path_episode(mining: &MiningArtifact, success_threshold_m: f64) -> PathRecord {
    let pos: BTreeMap<FrameIndex, [f64; 3]> = mining
        .trajectory
        .iter()
        .map(|f| (f.frame_index, [f.view.position.x, f.view.position.y, f.view.position.z]))
        .collect();
    let reference: Vec<[f64; 3]> = pos.values().copied().collect();
    PathRecord {
        episode_id: mining.video_id.clone(),
        predicted_path: mining.step_frames.iter().filter_map(|f| pos.get(f).copied()).collect(),
        goal: *reference.last().unwrap_or(&[0.0; 3]),
        reference_path: reference,
        success_threshold_m,
    }
}
