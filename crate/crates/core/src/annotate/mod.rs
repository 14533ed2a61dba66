//! Per-frame perception outputs turned into spatial captions and room labels.

pub mod depth;
pub mod rooms;
pub mod spatial;
pub mod video;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colmap::FrameIndex;
use crate::schema;

pub use depth::DepthMap;
pub use rooms::{smooth_room_labels, RoomSequence, RoomType};
pub use spatial::{
    captions_from_labels, depth_band_overlap, label_object, zone_overlap, Band, BoundingBox, SpatialLabel, Zone,
    DEFAULT_LABEL_THRESHOLD,
};
pub use video::{accept_video, AcceptanceRules, Rejection, VideoMetadata};

pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("box {0:?} is not a valid normalized box")]
    InvalidBox([f64; 4]),
    #[error("box {0:?} covers no pixels")]
    DegenerateBox([f64; 4]),
    #[error("invalid depth map: {0}")]
    InvalidDepth(String),
    #[error("room label {0:?} is not in the room vocabulary")]
    Vocabulary(String),
    #[error("smoothing window must be odd and at least 1, got {0}")]
    InvalidWindow(usize),
    #[error("invalid video metadata: {0}")]
    InvalidMetadata(String),
    #[error("{path}: schema violation: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub tag: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_confidence() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_index: FrameIndex,
    pub objects: Vec<DetectedObject>,
    /// PGM raster, relative to the annotation file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_label: Option<String>,
}

/// All frame annotations of one video plus the directory depth files resolve against.
#[derive(Debug, Clone)]
pub struct VideoAnnotations {
    pub base_dir: PathBuf,
    pub frames: Vec<FrameAnnotation>,
}

impl VideoAnnotations {
    pub fn frame(&self, frame_index: FrameIndex) -> Option<&FrameAnnotation> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn load_depth(&self, frame: &FrameAnnotation) -> Result<Option<DepthMap>, AnnotateError> {
        let Some(file) = &frame.depth_file else {
            return Ok(None);
        };
        let path = self.base_dir.join(file);
        let min = frame.depth_min.unwrap_or(0.0);
        let max = frame.depth_max.unwrap_or(1.0);
        depth::read_pgm(&path, min, max).map(Some)
    }

    /// Raw room labels in frame order, skipping unlabeled frames.
    pub fn raw_rooms(&self) -> Vec<(FrameIndex, &str)> {
        self.frames
            .iter()
            .filter_map(|f| f.room_label.as_deref().map(|r| (f.frame_index, r)))
            .collect()
    }
}

fn read_json(path: &Path, schema_doc: &'static str) -> Result<serde_json::Value, AnnotateError> {
    let text = fs::read_to_string(path).map_err(|source| AnnotateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| AnnotateError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    schema::check(schema_doc, &value).map_err(|message| AnnotateError::Schema {
        path: path.to_path_buf(),
        message,
    })?;
    Ok(value)
}

/// Loads and schema-checks an annotation document; frames come back sorted.
pub fn load_annotations(path: &Path) -> Result<VideoAnnotations, AnnotateError> {
    let value = read_json(path, schema::ANNOTATIONS)?;
    let mut frames: Vec<FrameAnnotation> = serde_json::from_value(value).map_err(|source| AnnotateError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    frames.sort_by_key(|f| f.frame_index);
    if let Some(w) = frames.windows(2).find(|w| w[0].frame_index == w[1].frame_index) {
        return Err(AnnotateError::Schema {
            path: path.to_path_buf(),
            message: format!("frame {} annotated twice", w[0].frame_index),
        });
    }
    for f in &frames {
        for o in &f.objects {
            BoundingBox::from_array(o.bbox)?;
        }
    }
    Ok(VideoAnnotations {
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        frames,
    })
}

pub fn load_video_metadata(path: &Path) -> Result<VideoMetadata, AnnotateError> {
    let value = read_json(path, schema::VIDEO_META)?;
    let meta: VideoMetadata = serde_json::from_value(value).map_err(|source| AnnotateError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    meta.validate()?;
    Ok(meta)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameCaptions {
    pub frame_index: FrameIndex,
    pub labels: Vec<SpatialLabel>,
    pub captions: Vec<String>,
    /// Objects below threshold in every zone or every band.
    pub dropped_objects: usize,
    /// Objects present but not placeable because the frame has no depth map.
    pub unplaced_objects: usize,
    pub uniform_depth: bool,
}

/// Labels and captions for one frame. Without a depth map no object can be
/// assigned a band, so every object is reported as unplaced.
pub fn caption_frame(
    annotation: &FrameAnnotation,
    depth: Option<&DepthMap>,
    threshold: f64,
) -> Result<FrameCaptions, AnnotateError> {
    let mut out = FrameCaptions {
        frame_index: annotation.frame_index,
        ..Default::default()
    };
    let Some(depth) = depth else {
        out.unplaced_objects = annotation.objects.len();
        return Ok(out);
    };
    out.uniform_depth = depth.values.iter().all(|v| *v == depth.values[0]);
    for object in &annotation.objects {
        let b = BoundingBox::from_array(object.bbox)?;
        match label_object(&object.tag, &b, depth, threshold)? {
            Some(label) => out.labels.push(label),
            None => out.dropped_objects += 1,
        }
    }
    out.captions = captions_from_labels(&out.labels);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_without_objects_has_no_captions() {
        let ann = FrameAnnotation {
            frame_index: 3,
            objects: vec![],
            depth_file: None,
            depth_min: None,
            depth_max: None,
            room_label: None,
        };
        let d = DepthMap::new(4, 4, vec![1.0; 16]).unwrap();
        let c = caption_frame(&ann, Some(&d), 0.3).unwrap();
        assert!(c.captions.is_empty());
        assert!(c.uniform_depth);
    }

    #[test]
    fn loads_annotations_with_depth() {
        let dir = tempfile::tempdir().unwrap();
        let d = DepthMap::new(10, 1, (0..10).map(|i| i as f64).collect()).unwrap();
        let (bytes, min, max) = depth::encode_pgm(&d);
        fs::write(dir.path().join("f0.pgm"), bytes).unwrap();
        let doc = serde_json::json!([
            {"frame_index": 0, "objects": [{"tag": "chair", "box": [0.0, 0.0, 0.2, 1.0], "confidence": 0.9}],
             "depth_file": "f0.pgm", "depth_min": min, "depth_max": max, "room_label": "Kitchen"}
        ]);
        let path = dir.path().join("ann.json");
        fs::write(&path, doc.to_string()).unwrap();
        let ann = load_annotations(&path).unwrap();
        let depth = ann.load_depth(&ann.frames[0]).unwrap().unwrap();
        let c = caption_frame(&ann.frames[0], Some(&depth), 0.3).unwrap();
        assert_eq!(
            c.captions,
            vec!["There is a chair to the left of the current spot in near distance."]
        );
        assert_eq!(ann.raw_rooms(), vec![(0, "Kitchen")]);
    }

    #[test]
    fn schema_rejects_out_of_range_box() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.json");
        fs::write(&path, r#"[{"frame_index": 0, "objects": [{"tag": "x", "box": [0, 0, 1.5, 1]}]}]"#).unwrap();
        assert!(matches!(load_annotations(&path), Err(AnnotateError::Schema { .. })));
        fs::write(&path, r#"[{"frame_index": 0, "objects": [{"tag": "x", "box": [0.5, 0, 0.2, 1]}]}]"#).unwrap();
        assert!(matches!(load_annotations(&path), Err(AnnotateError::InvalidBox(_))));
    }
}
