//! Mining navigation training data from room-tour camera trajectories.
//!
//! The pipeline parses per-clip COLMAP reconstructions, fuses them into one
//! trajectory per video, mines decision points, navigable steps and action
//! candidates from the camera geometry, turns perception outputs into spatial
//! captions and room sequences, requests free-form instructions from a
//! chat-completion service, and emits description- and action-enriched
//! trajectory records. Path-level navigation metrics are included for QA.

pub mod annotate;
pub mod cli;
pub mod colmap;
pub mod config;
pub mod dataset;
pub mod geometry;
pub mod instructgen;
pub mod merge;
pub mod metrics;
pub mod mining;
pub mod schema;
