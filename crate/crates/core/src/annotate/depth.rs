//! 16-bit binary PGM depth rasters.
//!
//! Values are relative depth, larger = farther. The raster stores quantized
//! samples; the annotation entry carries the min/max needed to map them back.

use std::fs;
use std::path::Path;

use super::AnnotateError;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, AnnotateError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(AnnotateError::InvalidDepth(format!(
                "{width}x{height} raster with {} values",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Parses a binary PGM (`P5`) and dequantizes to `[min, max]`.
pub fn decode_pgm(bytes: &[u8], min: f64, max: f64) -> Result<DepthMap, AnnotateError> {
    let bad = |m: &str| AnnotateError::InvalidDepth(m.to_string());
    let mut pos = 0;
    let mut header = Vec::new();
    while header.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        header.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
    }
    if header[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let width: usize = header[1].parse().map_err(|_| bad("bad PGM width"))?;
    let height: usize = header[2].parse().map_err(|_| bad("bad PGM height"))?;
    let maxval: u32 = header[3].parse().map_err(|_| bad("bad PGM maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("PGM maxval out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n * bytes_per)
        .ok_or_else(|| bad("truncated PGM raster"))?;
    let span = max - min;
    let values = (0..n)
        .map(|i| {
            let q = if bytes_per == 2 {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
            } else {
                raster[i] as f64
            };
            min + q / maxval as f64 * span
        })
        .collect();
    DepthMap::new(width, height, values)
}

pub fn read_pgm(path: &Path, min: f64, max: f64) -> Result<DepthMap, AnnotateError> {
    let bytes = fs::read(path).map_err(|e| AnnotateError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_pgm(&bytes, min, max)
}

/// Quantizes `depth` to 16 bits over its own range; returns the PGM bytes
/// together with the `(min, max)` sidecar values.
pub fn encode_pgm(depth: &DepthMap) -> (Vec<u8>, f64, f64) {
    let min = depth.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = depth.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    for v in &depth.values {
        let q = if span > 0.0 {
            ((v - min) / span * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    (out, min, max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_within_quantum() {
        let values: Vec<f64> = (0..12).map(|i| 0.5 + i as f64 * 0.25).collect();
        let depth = DepthMap::new(4, 3, values.clone()).unwrap();
        let (bytes, min, max) = encode_pgm(&depth);
        let back = decode_pgm(&bytes, min, max).unwrap();
        assert_eq!((back.width, back.height), (4, 3));
        for (a, b) in back.values.iter().zip(&values) {
            assert!((a - b).abs() <= (max - min) / 65535.0);
        }
    }

    #[test]
    fn header_comments_and_8bit() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let d = decode_pgm(&bytes, 0.0, 10.0).unwrap();
        assert_eq!(d.values, vec![0.0, 10.0]);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let bytes = b"P5 3 3 65535\n\x00\x01".to_vec();
        assert!(decode_pgm(&bytes, 0.0, 1.0).is_err());
        assert!(decode_pgm(b"P2 1 1 255\n0", 0.0, 1.0).is_err());
    }
}
