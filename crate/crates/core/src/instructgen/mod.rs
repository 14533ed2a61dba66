//! Free-form instruction generation through an external chat-completion service.

pub mod batch;
pub mod client;
pub mod prompt;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use batch::{generate_batch, load_completed, BatchFailure, BatchItem, BatchReport, GenerationOutcome};
pub use client::{ClientConfig, CompletionClient, CompletionResult, HttpTransport, Transport};
pub use prompt::{build_prompt, prompt_hash, PromptFrame, PromptTemplate};

#[derive(Debug, Error)]
pub enum InstructError {
    #[error("trajectory has no frames to describe")]
    EmptyTrajectory,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("service unavailable after {attempts} attempts (last error: {last_error})")]
    ServiceUnavailable { attempts: u32, last_error: String },
    #[error("request rejected with HTTP {status}: {body}")]
    RequestRejected { status: u16, body: String },
    #[error("unusable service response: {0}")]
    InvalidResponse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl InstructError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
