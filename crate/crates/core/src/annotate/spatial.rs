//! Lateral zones, depth bands and the caption template.
//!
//! The frame splits horizontally into left 30%, center 40% and right 30%;
//! depth splits per frame into the nearest 30%, the next 40% and the farthest
//! 30% of pixels. An object joins a zone or band when its overlap exceeds the
//! threshold relative to the smaller of the two regions involved (the box or
//! the zone/band), so a small box must sit mostly inside a zone while a wide
//! carpet registers in every zone it substantially covers.

use serde::{Deserialize, Serialize};

use super::depth::DepthMap;
use super::AnnotateError;

pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.3;

/// Zone edges in tenths of the frame width, so 30/40/30 is exact.
const ZONE_EDGES_TENTHS: [f64; 4] = [0.0, 3.0, 7.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Left,
    Center,
    Right,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Left, Zone::Center, Zone::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Left => "left",
            Zone::Center => "center",
            Zone::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Near,
    Medium,
    Far,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Near, Band::Medium, Band::Far];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Near => "near",
            Band::Medium => "medium",
            Band::Far => "far",
        }
    }
}

/// Normalized `(x_min, y_min, x_max, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, AnnotateError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        let ok = |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo < hi;
        if ok(x_min, x_max) && ok(y_min, y_max) {
            Ok(b)
        } else {
            Err(AnnotateError::InvalidBox([x_min, y_min, x_max, y_max]))
        }
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self, AnnotateError> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Per-region overlap ratios indexed by [`Zone`] or [`Band`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap3 {
    /// Share of the box inside each region.
    pub of_box: [f64; 3],
    /// Share of each region covered by the box.
    pub of_region: [f64; 3],
}

impl Overlap3 {
    /// Regions whose overlap, relative to the smaller of box and region,
    /// strictly exceeds `threshold`.
    pub fn above(&self, threshold: f64) -> [bool; 3] {
        std::array::from_fn(|i| self.of_box[i].max(self.of_region[i]) > threshold)
    }
}

/// Horizontal overlap of `b` with the left/center/right zones.
pub fn zone_overlap(b: &BoundingBox) -> Overlap3 {
    let x0 = b.x_min * 10.0;
    let x1 = b.x_max * 10.0;
    let width = x1 - x0;
    let mut of_box = [0.0; 3];
    let mut of_region = [0.0; 3];
    for z in 0..3 {
        let (lo, hi) = (ZONE_EDGES_TENTHS[z], ZONE_EDGES_TENTHS[z + 1]);
        let inter = (x1.min(hi) - x0.max(lo)).max(0.0);
        of_box[z] = snap(inter / width);
        of_region[z] = snap(inter / (hi - lo));
    }
    Overlap3 { of_box, of_region }
}

/// Rounds to 1e-12 so that decimal box edges hit exact ratios such as 0.3
/// instead of a neighbouring float, which matters for the strict threshold.
fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Depth band of every pixel: near up to the 30th percentile of the frame,
/// medium up to the 70th, far beyond. Percentiles are nearest-rank, so a
/// constant frame is entirely near.
pub fn band_of_pixels(depth: &DepthMap) -> Vec<Band> {
    let mut sorted = depth.values.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let q30 = sorted[(3 * n).div_ceil(10).max(1) - 1];
    let q70 = sorted[(7 * n).div_ceil(10).max(1) - 1];
    depth
        .values
        .iter()
        .map(|&d| {
            if d <= q30 {
                Band::Near
            } else if d <= q70 {
                Band::Medium
            } else {
                Band::Far
            }
        })
        .collect()
}

/// Pixel rectangle `[row0, row1) x [col0, col1)` covered by `b`.
pub fn pixel_rect(b: &BoundingBox, width: usize, height: usize) -> Result<(usize, usize, usize, usize), AnnotateError> {
    let col0 = (b.x_min * width as f64).round() as usize;
    let col1 = ((b.x_max * width as f64).round() as usize).min(width);
    let row0 = (b.y_min * height as f64).round() as usize;
    let row1 = ((b.y_max * height as f64).round() as usize).min(height);
    if col1 <= col0 || row1 <= row0 {
        return Err(AnnotateError::DegenerateBox([b.x_min, b.y_min, b.x_max, b.y_max]));
    }
    Ok((row0, row1, col0, col1))
}

/// Share of the box's pixels in each depth band, and share of each band's
/// frame pixels that fall inside the box.
pub fn depth_band_overlap(b: &BoundingBox, depth: &DepthMap) -> Result<Overlap3, AnnotateError> {
    let bands = band_of_pixels(depth);
    band_overlap_with(b, depth.width, depth.height, &bands)
}

fn band_overlap_with(
    b: &BoundingBox,
    width: usize,
    height: usize,
    bands: &[Band],
) -> Result<Overlap3, AnnotateError> {
    let (row0, row1, col0, col1) = pixel_rect(b, width, height)?;
    let mut in_box = [0usize; 3];
    let mut in_frame = [0usize; 3];
    for band in bands {
        in_frame[*band as usize] += 1;
    }
    for row in row0..row1 {
        for col in col0..col1 {
            in_box[bands[row * width + col] as usize] += 1;
        }
    }
    let box_pixels = ((row1 - row0) * (col1 - col0)) as f64;
    Ok(Overlap3 {
        of_box: std::array::from_fn(|i| in_box[i] as f64 / box_pixels),
        of_region: std::array::from_fn(|i| {
            if in_frame[i] == 0 {
                0.0
            } else {
                in_box[i] as f64 / in_frame[i] as f64
            }
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialLabel {
    pub tag: String,
    pub zones: Vec<Zone>,
    pub bands: Vec<Band>,
}

/// Zones and bands for one object, or `None` when either set comes out empty.
pub fn label_object(
    tag: &str,
    b: &BoundingBox,
    depth: &DepthMap,
    threshold: f64,
) -> Result<Option<SpatialLabel>, AnnotateError> {
    let bands = depth_band_overlap(b, depth)?;
    Ok(label_from_overlaps(tag, &zone_overlap(b), &bands, threshold))
}

pub fn label_from_overlaps(
    tag: &str,
    zones: &Overlap3,
    bands: &Overlap3,
    threshold: f64,
) -> Option<SpatialLabel> {
    let zone_hits = zones.above(threshold);
    let band_hits = bands.above(threshold);
    let zones: Vec<Zone> = Zone::ALL.into_iter().filter(|z| zone_hits[*z as usize]).collect();
    let bands: Vec<Band> = Band::ALL.into_iter().filter(|b| band_hits[*b as usize]).collect();
    if zones.is_empty() || bands.is_empty() {
        return None;
    }
    Some(SpatialLabel {
        tag: tag.to_string(),
        zones,
        bands,
    })
}

pub fn caption(tag: &str, zone: Zone, band: Band) -> String {
    format!(
        "There is a {tag} to the {} of the current spot in {} distance.",
        zone.as_str(),
        band.as_str()
    )
}

/// One caption per (tag, zone, band) combination, sorted by
/// `(tag, zone name, band name)`.
pub fn captions_from_labels(labels: &[SpatialLabel]) -> Vec<String> {
    let mut keyed: Vec<(&str, &str, &str, String)> = labels
        .iter()
        .flat_map(|l| {
            l.zones.iter().flat_map(move |&z| {
                l.bands
                    .iter()
                    .map(move |&b| (l.tag.as_str(), z.as_str(), b.as_str(), caption(&l.tag, z, b)))
            })
        })
        .collect();
    keyed.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    keyed.into_iter().map(|k| k.3).collect()
}
