#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;
use vlnmine::config::PipelineConfig;
use vlnmine::instructgen::client::{completion_body, HttpResponse, TransportError};
use vlnmine::instructgen::{prompt_hash, Transport};

pub type Reply = Result<HttpResponse, TransportError>;

/// Completion endpoint stand-in.
///
/// Replies come from the script while it lasts, then from `fallback`.
/// Counts calls and the peak number of concurrent calls.
pub struct MockTransport {
    script: Mutex<VecDeque<Reply>>,
    fallback: Box<dyn Fn(&str) -> Reply + Send + Sync>,
    delay: Duration,
    pub calls: AtomicUsize,
    in_flight: AtomicUsize,
    pub peak_in_flight: AtomicUsize,
    pub prompts: Mutex<Vec<String>>,
}

impl MockTransport {
    pub fn new(fallback: impl Fn(&str) -> Reply + Send + Sync + 'static) -> Self {
        Self {
            script: Mutex::new(VecDeque::new()),
            fallback: Box::new(fallback),
            delay: Duration::ZERO,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Answers every prompt with a fixed sentence derived from its hash.
    pub fn deterministic() -> Self {
        Self::new(|prompt| ok(&canned_instruction(prompt)))
    }

    pub fn with_script(self, replies: Vec<Reply>) -> Self {
        *self.script.lock().unwrap() = replies.into();
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl Transport for MockTransport {
    fn post_json(&self, _url: &str, _bearer: &str, body: &Value, _timeout: Duration) -> Reply {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        let prompt = body["messages"]
            .as_array()
            .and_then(|m| m.last())
            .and_then(|m| m["content"].as_str())
            .unwrap_or_default()
            .to_string();
        self.prompts.lock().unwrap().push(prompt.clone());
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let scripted = self.script.lock().unwrap().pop_front();
        let reply = scripted.unwrap_or_else(|| (self.fallback)(&prompt));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        reply
    }
}

pub fn ok(text: &str) -> Reply {
    Ok(HttpResponse {
        status: 200,
        body: completion_body(text),
    })
}

pub fn status(code: u16) -> Reply {
    Ok(HttpResponse {
        status: code,
        body: format!("{{\"error\": \"status {code}\"}}"),
    })
}

pub fn canned_instruction(prompt: &str) -> String {
    format!(
        "Walk past the objects described and stop at the last spot (ref {}).",
        &prompt_hash(prompt)[..12]
    )
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).unwrap().join("fixtures/mini_scene")
}

/// Copies the mini-scene fixture (inputs and config only) into a fresh
/// directory and loads its config.
pub fn mini_scene() -> (tempfile::TempDir, PipelineConfig) {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixture_dir();
    copy_dir(&src.join("videos"), &tmp.path().join("videos"));
    std::fs::copy(src.join("config.toml"), tmp.path().join("config.toml")).unwrap();
    let config = PipelineConfig::load(&tmp.path().join("config.toml")).unwrap();
    (tmp, config)
}

pub fn copy_dir(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let target = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

/// Every file under `dir` with its contents, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let Ok(entries) = std::fs::read_dir(dir) else {
            return;
        };
        for entry in entries {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
