//! Writes the synthetic mini-scene fixture used by the end-to-end tests.
//!
//! One video, `mini`: the walker goes 16 frames north, stops at a corner,
//! glances west, south and north-west (eight frames each), turns east and
//! walks on. Two overlapping clips reconstruct the walk, each in its own
//! arbitrary similarity frame.
//!
//! Usage: `cargo run --example make_mini_scene [OUT_DIR]`
//! (default `fixtures/mini_scene` under the workspace root).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use serde_json::json;
use vlnmine::annotate::depth::encode_pgm;
use vlnmine::annotate::DepthMap;
use vlnmine::colmap::{
    default_image_name, write_model, CameraIntrinsics, CameraModel, CameraPose, FrameIndex, ModelFormat, SubModel,
};
use vlnmine::geometry::{yaw_camera_rotation, yaw_direction, SimilarityTransform, Vec3};

const FPS: f64 = 3.0;
const STRIDE_M: f64 = 1.42 / FPS;
/// Camera center sits this far ahead of the body's turning axis.
const CAMERA_OFFSET_M: f64 = 0.1;
const CORNER: FrameIndex = 16;
const HOLD: FrameIndex = 8;
const LAST: FrameIndex = 72;

const NORTH: f64 = 0.0;
const EAST: f64 = 90.0;
const SOUTH: f64 = 180.0;
const WEST: f64 = 270.0;
const NORTH_WEST: f64 = 315.0;

struct Frame {
    pivot: Vec3,
    yaw: f64,
}

impl Frame {
    fn camera(&self) -> Vec3 {
        self.pivot + CAMERA_OFFSET_M * yaw_direction(self.yaw)
    }
}

fn walk() -> Vec<Frame> {
    let corner = Vec3::new(0.0, 0.0, CORNER as f64 * STRIDE_M);
    let glances = [(CORNER + HOLD, WEST), (CORNER + 2 * HOLD, SOUTH), (CORNER + 3 * HOLD, NORTH_WEST)];
    let turn = CORNER + 4 * HOLD;
    (0..=LAST)
        .map(|f| {
            if f <= CORNER {
                Frame {
                    pivot: Vec3::new(0.0, 0.0, f as f64 * STRIDE_M),
                    yaw: NORTH,
                }
            } else if f < turn {
                let yaw = glances.iter().rev().find(|(start, _)| f >= *start).map_or(NORTH, |g| g.1);
                Frame { pivot: corner, yaw }
            } else {
                Frame {
                    pivot: corner + Vec3::new((f - turn) as f64 * STRIDE_M, 0.0, 0.0),
                    yaw: EAST,
                }
            }
        })
        .collect()
}

fn world_pose(f: FrameIndex, frame: &Frame) -> CameraPose {
    let rotation = yaw_camera_rotation(frame.yaw);
    CameraPose {
        image_id: f + 1,
        frame_index: f,
        rotation,
        translation: -(rotation * frame.camera()),
        camera_id: 1,
        name: default_image_name(f),
    }
}

fn clip(model_id: u32, frames: &[Frame], range: std::ops::RangeInclusive<FrameIndex>, to_clip: &SimilarityTransform) -> SubModel {
    let poses: BTreeMap<FrameIndex, CameraPose> = range
        .clone()
        .map(|f| (f, to_clip.apply_pose(&world_pose(f, &frames[f as usize]))))
        .collect();
    let mut intrinsics = BTreeMap::new();
    intrinsics.insert(
        1,
        CameraIntrinsics {
            camera_id: 1,
            model: CameraModel::SIMPLE_PINHOLE,
            width: 640,
            height: 480,
            params: vec![500.0, 320.0, 240.0],
        },
    );
    SubModel {
        model_id,
        poses,
        intrinsics,
        clip_span: (*range.start() as f64 / FPS, *range.end() as f64 / FPS),
    }
}

/// Depth grows from 1 m at the bottom row to `far` at the top.
fn depth_ramp(far: f64) -> DepthMap {
    let (w, h) = (32, 24);
    let values = (0..h)
        .flat_map(|r| (0..w).map(move |_| far - (far - 1.0) * r as f64 / (h - 1) as f64))
        .collect();
    DepthMap::new(w, h, values).expect("valid ramp")
}

fn annotations(video_dir: &Path) -> serde_json::Value {
    let depth_dir = video_dir.join("depth");
    fs::create_dir_all(&depth_dir).expect("depth dir");
    let rooms: BTreeMap<FrameIndex, &str> = [
        (0, "hallway"),
        (6, "hallway"),
        (12, "hallway"),
        (18, "hallway"),
        (24, "Living_Room"),
        (30, "hallway"),
        (36, "living room"),
        (42, "living room"),
        (48, "living room"),
        (54, "kitchen"),
        (60, "living room"),
        (66, "kitchen"),
        (72, "kitchen"),
    ]
    .into_iter()
    .collect();
    let objects = |f: FrameIndex| -> Vec<serde_json::Value> {
        match f {
            0 | 6 | 12 => vec![
                json!({"tag": "door", "box": [0.05, 0.1, 0.25, 0.9], "confidence": 0.91}),
                json!({"tag": "painting", "box": [0.7, 0.2, 0.95, 0.45], "confidence": 0.77}),
            ],
            18 => vec![json!({"tag": "carpet", "box": [0.05, 0.6, 0.95, 1.0], "confidence": 0.83})],
            24 | 30 => vec![
                json!({"tag": "sofa", "box": [0.1, 0.5, 0.6, 0.95], "confidence": 0.88}),
                json!({"tag": "lamp", "box": [0.75, 0.05, 0.9, 0.4], "confidence": 0.64}),
            ],
            36 | 42 => vec![json!({"tag": "window", "box": [0.35, 0.0, 0.65, 0.35], "confidence": 0.9})],
            48 | 54 | 60 => vec![
                json!({"tag": "table", "box": [0.3, 0.55, 0.7, 0.9], "confidence": 0.86}),
                json!({"tag": "chair", "box": [0.0, 0.5, 0.2, 1.0], "confidence": 0.72}),
            ],
            _ => vec![json!({"tag": "refrigerator", "box": [0.72, 0.1, 1.0, 0.95], "confidence": 0.95})],
        }
    };
    let mut out = Vec::new();
    for (&f, room) in &rooms {
        let mut entry = json!({"frame_index": f, "objects": objects(f), "room_label": room});
        // Frame 42 has no depth raster, so its objects stay unplaced.
        if f != 42 {
            let (bytes, min, max) = encode_pgm(&depth_ramp(4.0 + (f % 12) as f64 / 4.0));
            let name = format!("depth/{f:06}.pgm");
            fs::write(video_dir.join(&name), bytes).expect("depth file");
            entry["depth_file"] = json!(name);
            entry["depth_min"] = json!(min);
            entry["depth_max"] = json!(max);
        }
        out.push(entry);
    }
    serde_json::Value::Array(out)
}

const CONFIG: &str = r#"# Mini-scene pipeline configuration. Unlisted keys keep their defaults.
profile = "mini_scene"

[paths]
videos_dir = "videos"
work_dir = "work"
output_dir = "output"

[mining]
negatives_per_cluster = 3

[generation]
model = "mock-model"
temperature = 0.0
max_tokens = 128
"#;

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json");
    s.push('\n');
    s
}

fn main() {
    let out: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let root = Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).expect("workspace root");
            root.join("fixtures/mini_scene")
        });
    let video_dir = out.join("videos/mini");
    if video_dir.exists() {
        fs::remove_dir_all(&video_dir).expect("clear old fixture");
    }
    fs::create_dir_all(&video_dir).expect("video dir");
    fs::write(out.join("config.toml"), CONFIG).expect("config");

    let frames = walk();
    let to_clip0 = SimilarityTransform::new(
        0.37,
        UnitQuaternion::from_euler_angles(0.1, -0.4, 0.25),
        Vector3::new(2.0, -1.0, 0.5),
    );
    let to_clip1 = SimilarityTransform::new(
        2.6,
        UnitQuaternion::from_euler_angles(-0.3, 1.1, 0.05),
        Vector3::new(-4.0, 3.0, 7.5),
    );
    let models = video_dir.join("models");
    write_model(&clip(0, &frames, 0..=54, &to_clip0), &models.join("clip_0"), ModelFormat::Binary).expect("clip 0");
    write_model(&clip(1, &frames, 36..=LAST, &to_clip1), &models.join("clip_1"), ModelFormat::Text).expect("clip 1");

    let shots: Vec<[f64; 2]> = (0..10).map(|i| [i as f64 * 19.0, (i + 1) as f64 * 19.0]).collect();
    let meta = json!({"video_id": "mini", "duration_s": 200.0, "shots": shots});
    fs::write(video_dir.join("meta.json"), pretty(&meta)).expect("meta");
    let ann = annotations(&video_dir);
    fs::write(video_dir.join("annotations.json"), pretty(&ann)).expect("annotations");

    let scene = json!({
        "fps": FPS,
        "corner_frame": CORNER,
        "glance_frames": [CORNER + HOLD, CORNER + 2 * HOLD, CORNER + 3 * HOLD],
        "turn_frame": CORNER + 4 * HOLD,
        "frames": frames.iter().enumerate().map(|(f, fr)| {
            let c = fr.camera();
            json!({"frame_index": f, "camera": [c.x, c.y, c.z], "yaw_deg": fr.yaw})
        }).collect::<Vec<_>>(),
    });
    fs::write(out.join("scene.json"), pretty(&scene)).expect("scene");
    println!("wrote {}", out.display());
}
