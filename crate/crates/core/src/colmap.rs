//! Reader and writer for COLMAP sparse-model directories.
//!
//! Both the binary (`cameras.bin`, `images.bin`, `points3D.bin`) and the text
//! (`*.txt`) variants are supported. Binary files are little-endian with u64
//! record counts and f64 reals, as COLMAP writes them. Sparse points are never
//! read; 2-D observations in image records are skipped. Each directory may
//! also carry a `model.json` sidecar holding the sub-model id and the clip
//! span in seconds, which COLMAP itself has no place for.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position of a frame in the 3 fps sample sequence.
pub type FrameIndex = u32;

pub const DEFAULT_FPS: f64 = 3.0;
pub const SIDECAR_FILE: &str = "model.json";

const QUAT_RENORMALIZE: f64 = 1e-9;
const QUAT_WARN: f64 = 1e-6;
const QUAT_REJECT: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum ColmapError {
    #[error("missing model file {0}")]
    MissingModelFile(PathBuf),
    #[error("{file}: parse error at {locator}: {message}")]
    Parse {
        file: PathBuf,
        locator: Locator,
        message: String,
    },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Where in a file a parse error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Locator {
    Byte(u64),
    Line(usize),
}

impl std::fmt::Display for Locator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Locator::Byte(b) => write!(f, "byte {b}"),
            Locator::Line(l) => write!(f, "line {l}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFormat {
    Binary,
    Text,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum CameraModel {
    SIMPLE_PINHOLE,
    PINHOLE,
    SIMPLE_RADIAL,
    RADIAL,
    OPENCV,
}

impl CameraModel {
    pub fn id(self) -> i32 {
        match self {
            CameraModel::SIMPLE_PINHOLE => 0,
            CameraModel::PINHOLE => 1,
            CameraModel::SIMPLE_RADIAL => 2,
            CameraModel::RADIAL => 3,
            CameraModel::OPENCV => 4,
        }
    }

    pub fn from_id(id: i32) -> Option<Self> {
        Some(match id {
            0 => CameraModel::SIMPLE_PINHOLE,
            1 => CameraModel::PINHOLE,
            2 => CameraModel::SIMPLE_RADIAL,
            3 => CameraModel::RADIAL,
            4 => CameraModel::OPENCV,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CameraModel::SIMPLE_PINHOLE => "SIMPLE_PINHOLE",
            CameraModel::PINHOLE => "PINHOLE",
            CameraModel::SIMPLE_RADIAL => "SIMPLE_RADIAL",
            CameraModel::RADIAL => "RADIAL",
            CameraModel::OPENCV => "OPENCV",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "SIMPLE_PINHOLE" => CameraModel::SIMPLE_PINHOLE,
            "PINHOLE" => CameraModel::PINHOLE,
            "SIMPLE_RADIAL" => CameraModel::SIMPLE_RADIAL,
            "RADIAL" => CameraModel::RADIAL,
            "OPENCV" => CameraModel::OPENCV,
            _ => return None,
        })
    }

    pub fn num_params(self) -> usize {
        match self {
            CameraModel::SIMPLE_PINHOLE => 3,
            CameraModel::PINHOLE => 4,
            CameraModel::SIMPLE_RADIAL => 4,
            CameraModel::RADIAL => 5,
            CameraModel::OPENCV => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub camera_id: u32,
    pub model: CameraModel,
    pub width: u64,
    pub height: u64,
    pub params: Vec<f64>,
}

impl CameraIntrinsics {
    fn check(&self) -> Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err(format!("camera {} has zero size", self.camera_id));
        }
        if self.params.len() != self.model.num_params() {
            return Err(format!(
                "camera {} model {} expects {} params, got {}",
                self.camera_id,
                self.model.name(),
                self.model.num_params(),
                self.params.len()
            ));
        }
        Ok(())
    }
}

/// One registered frame: world-to-camera rotation and translation.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub image_id: u32,
    pub frame_index: FrameIndex,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub camera_id: u32,
    pub name: String,
}

impl CameraPose {
    /// Quaternion as COLMAP orders it: `(w, x, y, z)`.
    pub fn qvec(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn timestamp(&self, fps: f64) -> f64 {
        frame_timestamp(self.frame_index, fps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubModel {
    pub model_id: u32,
    pub poses: BTreeMap<FrameIndex, CameraPose>,
    pub intrinsics: BTreeMap<u32, CameraIntrinsics>,
    /// `(start_s, end_s)` of the source clip.
    pub clip_span: (f64, f64),
}

impl SubModel {
    pub fn empty(model_id: u32) -> Self {
        Self {
            model_id,
            poses: BTreeMap::new(),
            intrinsics: BTreeMap::new(),
            clip_span: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<(), ColmapError> {
        for cam in self.intrinsics.values() {
            cam.check().map_err(ColmapError::InvalidModel)?;
        }
        for (key, pose) in &self.poses {
            if *key != pose.frame_index {
                return Err(ColmapError::InvalidModel(format!(
                    "pose keyed {key} carries frame_index {}",
                    pose.frame_index
                )));
            }
            if (pose.rotation.quaternion().norm() - 1.0).abs() > QUAT_RENORMALIZE {
                return Err(ColmapError::InvalidModel(format!(
                    "frame {key} has a non-unit quaternion"
                )));
            }
            if !self.intrinsics.contains_key(&pose.camera_id) {
                return Err(ColmapError::InvalidModel(format!(
                    "frame {key} references unknown camera {}",
                    pose.camera_id
                )));
            }
        }
        if self.clip_span.1 < self.clip_span.0 {
            return Err(ColmapError::InvalidModel("clip span ends before it starts".into()));
        }
        Ok(())
    }

    /// Clip span implied by the registered frames at `fps`.
    pub fn frame_span(&self, fps: f64) -> (f64, f64) {
        match (self.poses.keys().next(), self.poses.keys().next_back()) {
            (Some(&a), Some(&b)) => (frame_timestamp(a, fps), frame_timestamp(b, fps)),
            _ => (0.0, 0.0),
        }
    }
}

pub fn frame_timestamp(frame_index: FrameIndex, fps: f64) -> f64 {
    frame_index as f64 / fps
}

/// Longest trailing run of ASCII digits in the file stem of `name`.
pub fn frame_index_from_name(name: &str) -> Option<FrameIndex> {
    let file = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let stem = match file.rfind('.') {
        Some(dot) if dot > 0 => &file[..dot],
        _ => file,
    };
    let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    stem[stem.len() - digits..].parse().ok()
}

pub fn default_image_name(frame_index: FrameIndex) -> String {
    format!("{frame_index:06}.jpg")
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    model_id: u32,
    clip_span: (f64, f64),
}

fn model_id_from_dir(path: &Path) -> u32 {
    path.file_name()
        .and_then(|n| n.to_str())
        .and_then(frame_index_from_name)
        .unwrap_or(0)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ColmapError + '_ {
    move |source| ColmapError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_required(path: &Path) -> Result<Vec<u8>, ColmapError> {
    if !path.is_file() {
        return Err(ColmapError::MissingModelFile(path.to_path_buf()));
    }
    fs::read(path).map_err(io_err(path))
}

fn detect_format(dir: &Path) -> Result<ModelFormat, ColmapError> {
    if dir.join("cameras.bin").is_file() || dir.join("images.bin").is_file() {
        Ok(ModelFormat::Binary)
    } else if dir.join("cameras.txt").is_file() || dir.join("images.txt").is_file() {
        Ok(ModelFormat::Text)
    } else {
        Err(ColmapError::MissingModelFile(dir.join("cameras.bin")))
    }
}

/// Parses the sparse model in `dir`. `points3D` is never touched.
pub fn parse_model(dir: &Path, format: ModelFormat) -> Result<SubModel, ColmapError> {
    let format = match format {
        ModelFormat::Auto => detect_format(dir)?,
        f => f,
    };
    let (intrinsics, raw_images) = match format {
        ModelFormat::Binary => {
            let cam_path = dir.join("cameras.bin");
            let img_path = dir.join("images.bin");
            let cams = read_cameras_bin(&cam_path, &read_required(&cam_path)?)?;
            let imgs = read_images_bin(&img_path, &read_required(&img_path)?)?;
            (cams, imgs)
        }
        ModelFormat::Text | ModelFormat::Auto => {
            let cam_path = dir.join("cameras.txt");
            let img_path = dir.join("images.txt");
            let cams = read_cameras_txt(&cam_path, &read_text(&cam_path)?)?;
            let imgs = read_images_txt(&img_path, &read_text(&img_path)?)?;
            (cams, imgs)
        }
    };

    let mut poses = BTreeMap::new();
    for raw in raw_images {
        let err = |message: String| ColmapError::Parse {
            file: raw.file.clone(),
            locator: raw.locator,
            message,
        };
        let frame_index = frame_index_from_name(&raw.name)
            .ok_or_else(|| err(format!("image name {:?} has no trailing frame number", raw.name)))?;
        if !intrinsics.contains_key(&raw.camera_id) {
            return Err(err(format!("image references unknown camera {}", raw.camera_id)));
        }
        let rotation = unit_quaternion(raw.qvec).map_err(err)?;
        let pose = CameraPose {
            image_id: raw.image_id,
            frame_index,
            rotation,
            translation: Vector3::from(raw.tvec),
            camera_id: raw.camera_id,
            name: raw.name,
        };
        if poses.insert(frame_index, pose).is_some() {
            return Err(err(format!("duplicate frame index {frame_index}")));
        }
    }

    let sidecar_path = dir.join(SIDECAR_FILE);
    let mut model = SubModel {
        model_id: model_id_from_dir(dir),
        poses,
        intrinsics,
        clip_span: (0.0, 0.0),
    };
    if sidecar_path.is_file() {
        let text = fs::read_to_string(&sidecar_path).map_err(io_err(&sidecar_path))?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| ColmapError::Parse {
            file: sidecar_path.clone(),
            locator: Locator::Line(e.line()),
            message: e.to_string(),
        })?;
        model.model_id = sidecar.model_id;
        model.clip_span = sidecar.clip_span;
    } else {
        model.clip_span = model.frame_span(DEFAULT_FPS);
    }
    Ok(model)
}

fn unit_quaternion(q: [f64; 4]) -> Result<UnitQuaternion<f64>, String> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = quat.norm();
    let deviation = (norm - 1.0).abs();
    if !norm.is_finite() || deviation > QUAT_REJECT {
        return Err(format!("quaternion norm {norm} is not unit"));
    }
    if deviation > QUAT_WARN {
        tracing::warn!(norm, "normalizing non-unit quaternion");
    }
    if deviation > QUAT_RENORMALIZE {
        Ok(UnitQuaternion::from_quaternion(quat))
    } else {
        Ok(UnitQuaternion::new_unchecked(quat))
    }
}

struct RawImage {
    image_id: u32,
    qvec: [f64; 4],
    tvec: [f64; 3],
    camera_id: u32,
    name: String,
    file: PathBuf,
    locator: Locator,
}

/// Little-endian cursor that reports the byte offset of any failure.
struct BinReader<'a> {
    file: &'a Path,
    cursor: Cursor<&'a [u8]>,
}

impl<'a> BinReader<'a> {
    fn new(file: &'a Path, bytes: &'a [u8]) -> Self {
        Self {
            file,
            cursor: Cursor::new(bytes),
        }
    }

    fn offset(&self) -> u64 {
        self.cursor.position()
    }

    fn fail(&self, at: u64, message: impl Into<String>) -> ColmapError {
        ColmapError::Parse {
            file: self.file.to_path_buf(),
            locator: Locator::Byte(at),
            message: message.into(),
        }
    }

    fn truncated(&self, at: u64, what: &str) -> ColmapError {
        self.fail(at, format!("truncated stream reading {what}"))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ColmapError> {
        let at = self.offset();
        self.cursor
            .read_u64::<LittleEndian>()
            .map_err(|_| self.truncated(at, what))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ColmapError> {
        let at = self.offset();
        self.cursor
            .read_u32::<LittleEndian>()
            .map_err(|_| self.truncated(at, what))
    }

    fn i32(&mut self, what: &str) -> Result<i32, ColmapError> {
        let at = self.offset();
        self.cursor
            .read_i32::<LittleEndian>()
            .map_err(|_| self.truncated(at, what))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ColmapError> {
        let at = self.offset();
        self.cursor
            .read_f64::<LittleEndian>()
            .map_err(|_| self.truncated(at, what))
    }

    fn cstring(&mut self) -> Result<String, ColmapError> {
        let at = self.offset();
        let mut bytes = Vec::new();
        loop {
            let mut b = [0u8; 1];
            self.cursor
                .read_exact(&mut b)
                .map_err(|_| self.truncated(at, "image name"))?;
            if b[0] == 0 {
                break;
            }
            bytes.push(b[0]);
        }
        String::from_utf8(bytes).map_err(|_| self.fail(at, "image name is not valid UTF-8"))
    }

    fn skip(&mut self, n: u64, what: &str) -> Result<(), ColmapError> {
        let at = self.offset();
        let len = self.cursor.get_ref().len() as u64;
        match at.checked_add(n) {
            Some(end) if end <= len => {
                self.cursor.set_position(end);
                Ok(())
            }
            _ => Err(self.truncated(at, what)),
        }
    }

    fn remaining(&self) -> u64 {
        self.cursor.get_ref().len() as u64 - self.offset()
    }
}

fn read_cameras_bin(path: &Path, bytes: &[u8]) -> Result<BTreeMap<u32, CameraIntrinsics>, ColmapError> {
    let mut r = BinReader::new(path, bytes);
    let count = r.u64("camera count")?;
    let mut cameras = BTreeMap::new();
    for _ in 0..count {
        let at = r.offset();
        let camera_id = r.u32("camera id")?;
        let model_id = r.i32("camera model")?;
        let model = CameraModel::from_id(model_id)
            .ok_or_else(|| r.fail(at, format!("unsupported camera model id {model_id}")))?;
        let width = r.u64("camera width")?;
        let height = r.u64("camera height")?;
        let params = (0..model.num_params())
            .map(|_| r.f64("camera params"))
            .collect::<Result<Vec<_>, _>>()?;
        let cam = CameraIntrinsics {
            camera_id,
            model,
            width,
            height,
            params,
        };
        cam.check().map_err(|m| r.fail(at, m))?;
        if cameras.insert(camera_id, cam).is_some() {
            return Err(r.fail(at, format!("duplicate camera id {camera_id}")));
        }
    }
    if r.remaining() != 0 {
        return Err(r.fail(r.offset(), "trailing bytes after last camera"));
    }
    Ok(cameras)
}

fn read_images_bin(path: &Path, bytes: &[u8]) -> Result<Vec<RawImage>, ColmapError> {
    let mut r = BinReader::new(path, bytes);
    let count = r.u64("image count")?;
    let mut images = Vec::new();
    for _ in 0..count {
        let at = r.offset();
        let image_id = r.u32("image id")?;
        let mut qvec = [0.0; 4];
        for q in &mut qvec {
            *q = r.f64("qvec")?;
        }
        let mut tvec = [0.0; 3];
        for t in &mut tvec {
            *t = r.f64("tvec")?;
        }
        let camera_id = r.u32("camera id")?;
        let name = r.cstring()?;
        let num_points = r.u64("point count")?;
        // Each observation is x: f64, y: f64, point3D_id: u64.
        let skip = num_points
            .checked_mul(24)
            .ok_or_else(|| r.fail(at, "observation count overflows"))?;
        r.skip(skip, "2-D observations")?;
        images.push(RawImage {
            image_id,
            qvec,
            tvec,
            camera_id,
            name,
            file: path.to_path_buf(),
            locator: Locator::Byte(at),
        });
    }
    if r.remaining() != 0 {
        return Err(r.fail(r.offset(), "trailing bytes after last image"));
    }
    Ok(images)
}

fn read_text(path: &Path) -> Result<String, ColmapError> {
    let bytes = read_required(path)?;
    String::from_utf8(bytes).map_err(|e| ColmapError::Parse {
        file: path.to_path_buf(),
        locator: Locator::Byte(e.utf8_error().valid_up_to() as u64),
        message: "file is not valid UTF-8".into(),
    })
}

fn text_fail(path: &Path, line: usize, message: impl Into<String>) -> ColmapError {
    ColmapError::Parse {
        file: path.to_path_buf(),
        locator: Locator::Line(line),
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    tok: Option<&str>,
    what: &str,
) -> Result<T, ColmapError> {
    let tok = tok.ok_or_else(|| text_fail(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| text_fail(path, line, format!("invalid {what} {tok:?}")))
}

fn is_data_line(line: &str) -> bool {
    let t = line.trim();
    !t.is_empty() && !t.starts_with('#')
}

fn read_cameras_txt(path: &Path, text: &str) -> Result<BTreeMap<u32, CameraIntrinsics>, ColmapError> {
    let mut cameras = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if !is_data_line(line) {
            continue;
        }
        let mut toks = line.split_whitespace();
        let camera_id: u32 = parse_field(path, lineno, toks.next(), "camera id")?;
        let model_name = toks
            .next()
            .ok_or_else(|| text_fail(path, lineno, "missing camera model"))?;
        let model = CameraModel::from_name(model_name)
            .ok_or_else(|| text_fail(path, lineno, format!("unsupported camera model {model_name}")))?;
        let width: u64 = parse_field(path, lineno, toks.next(), "width")?;
        let height: u64 = parse_field(path, lineno, toks.next(), "height")?;
        let params = toks
            .map(|t| parse_field::<f64>(path, lineno, Some(t), "param"))
            .collect::<Result<Vec<_>, _>>()?;
        let cam = CameraIntrinsics {
            camera_id,
            model,
            width,
            height,
            params,
        };
        cam.check().map_err(|m| text_fail(path, lineno, m))?;
        if cameras.insert(camera_id, cam).is_some() {
            return Err(text_fail(path, lineno, format!("duplicate camera id {camera_id}")));
        }
    }
    Ok(cameras)
}

fn read_images_txt(path: &Path, text: &str) -> Result<Vec<RawImage>, ColmapError> {
    let mut images = Vec::new();
    let mut lines = text.lines().enumerate();
    while let Some((i, line)) = lines.next() {
        let lineno = i + 1;
        if !is_data_line(line) {
            continue;
        }
        let mut toks = line.split_whitespace();
        let image_id: u32 = parse_field(path, lineno, toks.next(), "image id")?;
        let mut qvec = [0.0; 4];
        for q in &mut qvec {
            *q = parse_field(path, lineno, toks.next(), "qvec")?;
        }
        let mut tvec = [0.0; 3];
        for t in &mut tvec {
            *t = parse_field(path, lineno, toks.next(), "tvec")?;
        }
        let camera_id: u32 = parse_field(path, lineno, toks.next(), "camera id")?;
        let name: String = toks.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(text_fail(path, lineno, "missing image name"));
        }
        // The observations line follows unconditionally and may be empty.
        let _ = lines.next();
        images.push(RawImage {
            image_id,
            qvec,
            tvec,
            camera_id,
            name,
            file: path.to_path_buf(),
            locator: Locator::Line(lineno),
        });
    }
    Ok(images)
}

/// Writes `model` to `dir` (created if missing) plus the `model.json` sidecar.
pub fn write_model(model: &SubModel, dir: &Path, format: ModelFormat) -> Result<(), ColmapError> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    match format {
        ModelFormat::Binary | ModelFormat::Auto => write_binary(model, dir)?,
        ModelFormat::Text => write_text(model, dir)?,
    }
    let sidecar = Sidecar {
        model_id: model.model_id,
        clip_span: model.clip_span,
    };
    let path = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))
}

fn write_binary(model: &SubModel, dir: &Path) -> Result<(), ColmapError> {
    // Writes into Vec<u8> cannot fail.
    let mut cams = Vec::new();
    cams.write_u64::<LittleEndian>(model.intrinsics.len() as u64).unwrap();
    for cam in model.intrinsics.values() {
        cams.write_u32::<LittleEndian>(cam.camera_id).unwrap();
        cams.write_i32::<LittleEndian>(cam.model.id()).unwrap();
        cams.write_u64::<LittleEndian>(cam.width).unwrap();
        cams.write_u64::<LittleEndian>(cam.height).unwrap();
        for p in &cam.params {
            cams.write_f64::<LittleEndian>(*p).unwrap();
        }
    }

    let mut imgs = Vec::new();
    imgs.write_u64::<LittleEndian>(model.poses.len() as u64).unwrap();
    for pose in model.poses.values() {
        imgs.write_u32::<LittleEndian>(pose.image_id).unwrap();
        for q in pose.qvec() {
            imgs.write_f64::<LittleEndian>(q).unwrap();
        }
        for t in pose.translation.iter() {
            imgs.write_f64::<LittleEndian>(*t).unwrap();
        }
        imgs.write_u32::<LittleEndian>(pose.camera_id).unwrap();
        imgs.write_all(pose.name.as_bytes()).unwrap();
        imgs.write_u8(0).unwrap();
        imgs.write_u64::<LittleEndian>(0).unwrap();
    }

    let mut points = Vec::new();
    points.write_u64::<LittleEndian>(0).unwrap();

    for (name, bytes) in [
        ("cameras.bin", cams),
        ("images.bin", imgs),
        ("points3D.bin", points),
    ] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_text(model: &SubModel, dir: &Path) -> Result<(), ColmapError> {
    let mut cams = String::new();
    cams.push_str("# Camera list with one line of data per camera:\n");
    cams.push_str("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let _ = writeln!(cams, "# Number of cameras: {}", model.intrinsics.len());
    for cam in model.intrinsics.values() {
        let _ = write!(
            cams,
            "{} {} {} {}",
            cam.camera_id,
            cam.model.name(),
            cam.width,
            cam.height
        );
        for p in &cam.params {
            let _ = write!(cams, " {p:?}");
        }
        cams.push('\n');
    }

    let mut imgs = String::new();
    imgs.push_str("# Image list with two lines of data per image:\n");
    imgs.push_str("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n");
    imgs.push_str("#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    let _ = writeln!(
        imgs,
        "# Number of images: {}, mean observations per image: 0",
        model.poses.len()
    );
    for pose in model.poses.values() {
        let [qw, qx, qy, qz] = pose.qvec();
        let t = pose.translation;
        let _ = writeln!(
            imgs,
            "{} {qw:?} {qx:?} {qy:?} {qz:?} {:?} {:?} {:?} {} {}",
            pose.image_id, t.x, t.y, t.z, pose.camera_id, pose.name
        );
        imgs.push('\n');
    }

    let points = "# 3D point list with one line of data per point:\n\
                  #   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n\
                  # Number of points: 0, mean track length: 0\n";

    for (name, text) in [
        ("cameras.txt", cams.as_str()),
        ("images.txt", imgs.as_str()),
        ("points3D.txt", points),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}
