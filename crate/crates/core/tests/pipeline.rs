mod common;

use std::fs;
use std::sync::Arc;

use common::{mini_scene, snapshot, MockTransport};
use vlnmine::cli::{self, RunOptions, Stage, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK};
use vlnmine::config::PipelineConfig;
use vlnmine::dataset::{self, ActionRecord, DescriptionRecord};

fn opts(transport: &Arc<MockTransport>) -> RunOptions {
    RunOptions {
        transport: Some(transport.clone()),
        api_key: Some("test-key".into()),
        ..Default::default()
    }
}

fn run_ok(stage: Stage, config: &PipelineConfig, o: &RunOptions) {
    let reports = cli::run(stage, config, o).unwrap();
    for r in &reports {
        assert!(r.failures.is_empty(), "{}: {:?}", r.stage, r.failures);
    }
}

#[test]
fn mine_without_merge_names_missing_artifact() {
    let (tmp, _) = mini_scene();
    let config = tmp.path().join("config.toml");
    let args = |stage: &str| vec!["vlnmine".into(), "--config".into(), config.display().to_string(), stage.to_string()];
    assert_eq!(cli::main_with_args(args("ingest")), EXIT_OK);
    assert_eq!(cli::main_with_args(args("mine")), EXIT_FAILURE);
    let cfg = PipelineConfig::load(&config).unwrap();
    let reports = cli::run(Stage::Mine, &cfg, &RunOptions::default()).unwrap();
    let msg = &reports[0].failures[0].error;
    assert!(msg.contains("merged model") && msg.contains("merge"), "{msg}");
    let failure_report = cfg.paths.work_dir.join("failures_mine.json");
    assert!(failure_report.exists());
}

#[test]
fn invalid_config_exits_2_with_field_message() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[mining]\nthreshold_deg = 200.0\n").unwrap();
    let code = cli::main_with_args(["vlnmine", "--config", path.to_str().unwrap(), "mine"]);
    assert_eq!(code, EXIT_CONFIG);
    let err = PipelineConfig::load(&path).unwrap_err().to_string();
    assert!(err.contains("mining.threshold_deg"), "{err}");
    assert_eq!(cli::main_with_args(["vlnmine", "--bogus-flag", "mine"]), EXIT_CONFIG);
}

#[test]
fn instruct_rerun_makes_no_requests() {
    let (_tmp, config) = mini_scene();
    let mock = Arc::new(MockTransport::deterministic());
    let o = opts(&mock);
    for s in [Stage::Ingest, Stage::Merge, Stage::Mine, Stage::Caption, Stage::Instruct] {
        run_ok(s, &config, &o);
    }
    let first = mock.calls();
    assert!(first > 0);
    run_ok(Stage::Instruct, &config, &o);
    assert_eq!(mock.calls(), first);
}

#[test]
fn dry_run_writes_nothing() {
    let (tmp, config) = mini_scene();
    let before = snapshot(tmp.path());
    let mock = Arc::new(MockTransport::deterministic());
    let o = RunOptions {
        dry_run: true,
        ..opts(&mock)
    };
    for s in Stage::PIPELINE.into_iter().chain([Stage::All]) {
        let reports = cli::run(s, &config, &o).unwrap();
        assert!(reports.iter().all(|r| !r.outputs.is_empty()), "{s:?} planned nothing");
    }
    let code = cli::main_with_args([
        "vlnmine",
        "--config",
        tmp.path().join("config.toml").to_str().unwrap(),
        "--dry-run",
        "all",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(snapshot(tmp.path()), before);
    assert_eq!(mock.calls(), 0);
}

#[test]
fn stage_by_stage_matches_all_and_records_validate() {
    let (a, config_a) = mini_scene();
    let mock = Arc::new(MockTransport::deterministic());
    run_ok(Stage::All, &config_a, &opts(&mock));

    // Stage by stage, with merge repeated after mine and eval ahead of emit.
    let (b, config_b) = mini_scene();
    for s in [
        Stage::Ingest,
        Stage::Merge,
        Stage::Mine,
        Stage::Merge,
        Stage::Caption,
        Stage::Instruct,
        Stage::Eval,
        Stage::Emit,
    ] {
        run_ok(s, &config_b, &opts(&mock));
    }
    let out_a = snapshot(&config_a.paths.output_dir);
    let out_b = snapshot(&config_b.paths.output_dir);
    assert_eq!(out_a.len(), 4);
    assert_eq!(out_a, out_b);

    let descriptions: Vec<DescriptionRecord> =
        dataset::read_jsonl(&config_a.paths.output_dir.join(dataset::DESCRIPTIONS_FILE)).unwrap();
    let actions: Vec<ActionRecord> =
        dataset::read_jsonl(&config_a.paths.output_dir.join(dataset::ACTIONS_FILE)).unwrap();
    for d in &descriptions {
        dataset::validate_description(d).unwrap();
        assert!(d.instruction.is_some());
    }
    for r in &actions {
        dataset::validate_action(r).unwrap();
    }
    drop((a, b));
}

#[test]
fn rejected_video_is_skipped_downstream() {
    let (_tmp, config) = mini_scene();
    let meta = config.paths.videos_dir.join("mini/meta.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&meta).unwrap()).unwrap();
    v["shots"].as_array_mut().unwrap().truncate(8);
    fs::write(&meta, v.to_string()).unwrap();
    let mock = Arc::new(MockTransport::deterministic());
    let reports = cli::run(Stage::All, &config, &opts(&mock)).unwrap();
    assert!(reports.iter().all(|r| r.failures.is_empty()));
    assert_eq!(reports[1].skipped, vec!["mini".to_string()]);
    assert_eq!(mock.calls(), 0);
    let descriptions: Vec<DescriptionRecord> =
        dataset::read_jsonl(&config.paths.output_dir.join(dataset::DESCRIPTIONS_FILE)).unwrap();
    assert!(descriptions.is_empty());
}

#[test]
fn failed_generation_leaves_record_without_instruction() {
    let (_tmp, mut config) = mini_scene();
    config.generation.max_attempts = 1;
    let mock = Arc::new(MockTransport::deterministic().with_script(vec![common::status(400)]));
    let reports = cli::run(Stage::All, &config, &opts(&mock)).unwrap();
    assert!(reports.iter().all(|r| r.failures.is_empty()));
    let descriptions: Vec<DescriptionRecord> =
        dataset::read_jsonl(&config.paths.output_dir.join(dataset::DESCRIPTIONS_FILE)).unwrap();
    let missing = descriptions.iter().filter(|d| d.instruction.is_none()).count();
    assert_eq!(missing, 1);
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(config.paths.output_dir.join(dataset::MANIFEST_FILE)).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["videos"][0]["counts"]["generation_failures"], 1);

    // The retry run fills the gap with exactly one request.
    let calls = mock.calls();
    run_ok(Stage::Instruct, &config, &opts(&mock));
    run_ok(Stage::Emit, &config, &opts(&mock));
    assert_eq!(mock.calls(), calls + 1);
    let descriptions: Vec<DescriptionRecord> =
        dataset::read_jsonl(&config.paths.output_dir.join(dataset::DESCRIPTIONS_FILE)).unwrap();
    assert!(descriptions.iter().all(|d| d.instruction.is_some()));
}
