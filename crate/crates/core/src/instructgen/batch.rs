//! Bounded-concurrency batch generation with an append-only, resumable sink.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::client::{CompletionClient, TokenUsage};
use super::prompt::prompt_hash;
use super::InstructError;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub record_id: String,
    pub prompt: String,
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub record_id: String,
    pub text: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt_hash: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub attempts: u32,
    pub generated_at_unix_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub record_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub completed: Vec<GenerationOutcome>,
    pub skipped: usize,
    pub failures: Vec<BatchFailure>,
}

/// Outcomes already in `path`, keyed by record id. A missing file is empty;
/// lines that do not parse (a write torn by a crash) are ignored.
pub fn load_completed(path: &Path) -> Result<BTreeMap<String, GenerationOutcome>, InstructError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(InstructError::io(path, e)),
    };
    let mut done = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| InstructError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<GenerationOutcome>(&line) {
            Ok(o) => {
                done.insert(o.record_id.clone(), o);
            }
            Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable results line"),
        }
    }
    Ok(done)
}

/// Opens `path` for appending, first terminating a torn final line.
fn open_sink(path: &Path) -> Result<File, InstructError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| InstructError::io(dir, e))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(|e| InstructError::io(path, e))?;
    let len = file.metadata().map_err(|e| InstructError::io(path, e))?.len();
    if len > 0 {
        let mut last = [0u8; 1];
        file.seek(SeekFrom::Start(len - 1)).map_err(|e| InstructError::io(path, e))?;
        file.read_exact(&mut last).map_err(|e| InstructError::io(path, e))?;
        if last[0] != b'\n' {
            file.write_all(b"\n").map_err(|e| InstructError::io(path, e))?;
        }
    }
    Ok(file)
}

/// Generates every item not yet present in `results_path`, with at most
/// `limit` requests in flight. Each success is appended and flushed as soon as
/// it arrives; failures are collected without stopping the batch.
pub fn generate_batch(
    items: &[BatchItem],
    client: &CompletionClient,
    limit: usize,
    results_path: &Path,
) -> Result<BatchReport, InstructError> {
    let limit = limit.max(1);
    let done = load_completed(results_path)?;
    let pending: Vec<&BatchItem> = items.iter().filter(|i| !done.contains_key(&i.record_id)).collect();
    let mut report = BatchReport {
        skipped: items.len() - pending.len(),
        ..Default::default()
    };
    if pending.is_empty() {
        return Ok(report);
    }
    let sink = Mutex::new(open_sink(results_path)?);
    let next = AtomicUsize::new(0);
    let collected = Mutex::new((Vec::new(), Vec::new(), None::<InstructError>));
    std::thread::scope(|scope| {
        for _ in 0..limit.min(pending.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = pending.get(i) else { break };
                match client.generate(&item.prompt) {
                    Ok(result) => {
                        let outcome = GenerationOutcome {
                            record_id: item.record_id.clone(),
                            text: result.text,
                            model: client.config.model.clone(),
                            temperature: client.config.temperature,
                            max_tokens: client.config.max_tokens,
                            prompt_hash: prompt_hash(&item.prompt),
                            usage: result.usage,
                            latency_ms: result.latency_ms,
                            attempts: result.attempts,
                            generated_at_unix_s: SystemTime::now()
                                .duration_since(UNIX_EPOCH)
                                .map(|d| d.as_secs())
                                .unwrap_or(0),
                        };
                        let mut line = serde_json::to_string(&outcome).expect("outcome serializes");
                        line.push('\n');
                        let written = {
                            let mut f = sink.lock().expect("sink poisoned");
                            f.write_all(line.as_bytes()).and_then(|_| f.flush())
                        };
                        let mut c = collected.lock().expect("collector poisoned");
                        match written {
                            Ok(()) => c.0.push(outcome),
                            Err(e) => {
                                c.2.get_or_insert(InstructError::io(results_path, e));
                                next.store(pending.len(), Ordering::SeqCst);
                            }
                        }
                    }
                    Err(e) => {
                        tracing::warn!(record_id = %item.record_id, error = %e, "generation failed");
                        collected.lock().expect("collector poisoned").1.push(BatchFailure {
                            record_id: item.record_id.clone(),
                            error: e.to_string(),
                        });
                    }
                }
            });
        }
    });
    let (mut completed, mut failures, sink_error) = collected.into_inner().expect("collector poisoned");
    if let Some(e) = sink_error {
        return Err(e);
    }
    completed.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    failures.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    report.completed = completed;
    report.failures = failures;
    Ok(report)
}
