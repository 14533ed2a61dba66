//! Prompt assembly: task instruction, in-context examples, prediction block.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::InstructError;
use crate::colmap::FrameIndex;

/// Shipped default, also written out by `vlnmine` when no template is configured.
pub const DEFAULT_TEMPLATE: &str = include_str!("../../../../assets/prompt_template.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InContextExample {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task_instruction: String,
    #[serde(default)]
    pub examples: Vec<InContextExample>,
}

impl PromptTemplate {
    pub fn from_toml(text: &str) -> Result<Self, InstructError> {
        toml::from_str(text).map_err(|e| InstructError::Config(format!("prompt template: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, InstructError> {
        let text = fs::read_to_string(path)
            .map_err(|e| InstructError::Config(format!("prompt template {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn shipped() -> Self {
        Self::from_toml(DEFAULT_TEMPLATE).expect("shipped template parses")
    }
}

/// One sampled frame as it appears in the prediction block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptFrame {
    pub frame_index: FrameIndex,
    pub room: Option<String>,
    pub captions: Vec<String>,
}

/// `Frame k (room): caption; caption` lines, one per frame, `k` counting from 1.
pub fn prediction_input(frames: &[PromptFrame]) -> String {
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let room = f.room.as_deref().unwrap_or("unknown room");
            let body = if f.captions.is_empty() {
                "no objects recognized.".to_string()
            } else {
                f.captions.join("; ")
            };
            format!("Frame {} ({room}): {body}", k + 1)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_prompt(frames: &[PromptFrame], template: &PromptTemplate) -> Result<String, InstructError> {
    if frames.is_empty() {
        return Err(InstructError::EmptyTrajectory);
    }
    let mut out = String::new();
    out.push_str(template.task_instruction.trim_end());
    out.push_str("\n\n");
    for (i, ex) in template.examples.iter().enumerate() {
        out.push_str(&format!(
            "### Example {}\nInput:\n{}\nOutput:\n{}\n\n",
            i + 1,
            ex.input.trim_end(),
            ex.output.trim_end()
        ));
    }
    out.push_str("### Prediction\nInput:\n");
    out.push_str(&prediction_input(frames));
    out.push_str("\nOutput:\n");
    Ok(out)
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(i: FrameIndex, room: &str, caps: &[&str]) -> PromptFrame {
        PromptFrame {
            frame_index: i,
            room: Some(room.into()),
            captions: caps.iter().map(|c| c.to_string()).collect(),
        }
    }

    #[test]
    fn empty_trajectory_rejected() {
        assert!(matches!(
            build_prompt(&[], &PromptTemplate::shipped()),
            Err(InstructError::EmptyTrajectory)
        ));
    }

    #[test]
    fn deterministic() {
        let t = PromptTemplate::shipped();
        let frames = vec![frame(0, "kitchen", &["There is a sink to the left of the current spot in near distance."])];
        assert_eq!(build_prompt(&frames, &t).unwrap(), build_prompt(&frames, &t).unwrap());
    }

    #[test]
    fn shipped_template_has_examples() {
        let t = PromptTemplate::shipped();
        assert!(!t.task_instruction.is_empty());
        assert!(!t.examples.is_empty());
    }

    #[test]
    fn layout_without_examples() {
        let t = PromptTemplate {
            task_instruction: "Describe the walk.".into(),
            examples: vec![],
        };
        let p = build_prompt(&[frame(6, "hallway", &["a", "b"]), frame(12, "office", &[])], &t).unwrap();
        assert_eq!(
            p,
            "Describe the walk.\n\n### Prediction\nInput:\nFrame 1 (hallway): a; b\nFrame 2 (office): no objects recognized.\nOutput:\n"
        );
    }
}
