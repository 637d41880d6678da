//! Portable float map, single channel:
//!
//! ```text
//! Pf\n<width> <height>\n<scale>\n<payload>
//! ```
//!
//! A negative scale marks little-endian `f32` samples (always written as
//! `-1.0`); rows are stored bottom to top. Depth maps store 0 at invalid
//! pixels and keep their hypothesis range in a `key=value` sidecar with the
//! extension `.meta`.

use std::path::{Path, PathBuf};

use super::{keyvalue, parse_err, read_bytes, write_bytes, IoError};
use crate::depth::{DepthMap, HypothesisRange};

#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub data: Vec<f32>,
}

pub fn encode_pfm(img: &PfmImage) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    for r in (0..img.height).rev() {
        for v in &img.data[r * img.width..(r + 1) * img.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads one whitespace-terminated header token starting at `pos`.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<(usize, String), IoError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos || *pos >= bytes.len() {
        return Err(parse_err(start, "truncated header"));
    }
    let tok = String::from_utf8_lossy(&bytes[start..*pos]).into_owned();
    *pos += 1;
    Ok((start, tok))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage, IoError> {
    let mut pos = 0;
    let (at, magic) = header_token(bytes, &mut pos)?;
    if magic != "Pf" {
        return Err(parse_err(at, format!("expected magic \"Pf\", found {magic:?}")));
    }
    let mut dim = |what: &str| -> Result<usize, IoError> {
        let (at, tok) = header_token(bytes, &mut pos)?;
        tok.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| parse_err(at, format!("invalid {what} {tok:?}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let (at, tok) = header_token(bytes, &mut pos)?;
    let scale: f64 = tok.parse().ok().filter(|s: &f64| *s != 0.0 && s.is_finite()).ok_or_else(|| parse_err(at, format!("invalid scale {tok:?}")))?;
    let little = scale < 0.0;
    let expected = width * height * 4;
    let actual = bytes.len() - pos;
    if actual != expected {
        return Err(parse_err(pos, format!("payload size mismatch: expected {expected} bytes, found {actual}")));
    }
    let mut data = vec![0f32; width * height];
    for (i, chunk) in bytes[pos..].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (r, c) = (height - 1 - i / width, i % width);
        data[r * width + c] = v;
    }
    Ok(PfmImage { width, height, data })
}

pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<(), IoError> {
    write_bytes(path, &encode_pfm(img))
}

pub fn read_pfm(path: &Path) -> Result<PfmImage, IoError> {
    decode_pfm(&read_bytes(path)?).map_err(|e| e.at(path))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Writes the PFM file, its `.meta` sidecar and, when `preview` is given, an
/// 8-bit colour preview.
pub fn write_depth(path: &Path, depth: &DepthMap<f64>, preview: Option<&Path>) -> Result<(), IoError> {
    let data = depth.depths().iter().zip(depth.valid_mask()).map(|(&d, &v)| if v { d as f32 } else { 0.0 }).collect();
    write_pfm(path, &PfmImage { width: depth.width(), height: depth.height(), data })?;
    let mut meta = vec![
        ("width".to_string(), depth.width().to_string()),
        ("height".to_string(), depth.height().to_string()),
        ("valid_pixels".to_string(), depth.valid_count().to_string()),
    ];
    if let Some(r) = depth.range {
        meta.push(("d_min".into(), format!("{:e}", r.d_min)));
        meta.push(("d_max".into(), format!("{:e}", r.d_max)));
        meta.push(("num_planes".into(), r.num_planes.to_string()));
    }
    keyvalue::write_key_values(&sidecar(path), &meta)?;
    if let Some(p) = preview {
        let rgb = depth_preview(depth);
        super::save_preview_png(p, depth.width(), depth.height(), &rgb)?;
    }
    Ok(())
}

/// Reads a depth PFM; the hypothesis range comes from the sidecar when
/// present.
pub fn read_depth(path: &Path) -> Result<DepthMap<f64>, IoError> {
    let img = read_pfm(path)?;
    let map = DepthMap::from_depths(img.width, img.height, img.data.iter().map(|&v| v as f64).collect())
        .map_err(|e| IoError::invalid(path, e.to_string()))?;
    let side = sidecar(path);
    if !side.exists() {
        return Ok(map);
    }
    let kv = keyvalue::read_key_values(&side)?;
    let get = |k: &str| kv.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    match (get("d_min"), get("d_max"), get("num_planes")) {
        (Some(a), Some(b), Some(n)) => {
            let parse = |s: &str| s.parse::<f64>().map_err(|_| IoError::invalid(&side, format!("bad number {s:?}")));
            let range = HypothesisRange {
                d_min: parse(a)?,
                d_max: parse(b)?,
                num_planes: n.parse().map_err(|_| IoError::invalid(&side, format!("bad plane count {n:?}")))?,
            };
            // Stored depths are f32; values pushed just outside the range by
            // that rounding are clamped back.
            let mut map = map;
            let tol = |d: f64| d * f32::EPSILON as f64;
            for r in 0..map.height() {
                for c in 0..map.width() {
                    if let Some(d) = map.get(r, c) {
                        if d < range.d_min && range.d_min - d <= tol(range.d_min) {
                            map.set(r, c, Some(range.d_min));
                        } else if d > range.d_max && d - range.d_max <= tol(range.d_max) {
                            map.set(r, c, Some(range.d_max));
                        }
                    }
                }
            }
            map.with_range(range).map_err(|e| IoError::invalid(path, e.to_string()))
        }
        _ => Ok(map),
    }
}

/// Fixed colour ramp from near (yellow) to far (dark blue); invalid pixels
/// are black.
const RAMP: [[f64; 3]; 5] = [
    [253.0, 231.0, 37.0],
    [94.0, 201.0, 98.0],
    [33.0, 145.0, 140.0],
    [59.0, 82.0, 139.0],
    [68.0, 1.0, 84.0],
];

/// RGB8 preview coloured by inverse depth across the hypothesis range (or
/// the valid depth range when the map has none).
pub fn depth_preview(depth: &DepthMap<f64>) -> Vec<u8> {
    let valid: Vec<f64> = depth.depths().iter().zip(depth.valid_mask()).filter(|(_, &v)| v).map(|(&d, _)| d).collect();
    let (lo, hi) = match depth.range {
        Some(r) => (r.d_min, r.d_max),
        None => valid.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d), b.max(d))),
    };
    let (inv_near, inv_far) = (1.0 / lo, 1.0 / hi);
    let mut out = Vec::with_capacity(depth.width() * depth.height() * 3);
    for (&d, &v) in depth.depths().iter().zip(depth.valid_mask()) {
        if !v {
            out.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let t = if inv_near > inv_far { ((inv_near - 1.0 / d) / (inv_near - inv_far)).clamp(0.0, 1.0) } else { 0.0 };
        let x = t * (RAMP.len() - 1) as f64;
        let i = (x.floor() as usize).min(RAMP.len() - 2);
        let f = x - i as f64;
        for ch in 0..3 {
            out.push((RAMP[i][ch] * (1.0 - f) + RAMP[i + 1][ch] * f).round() as u8);
        }
    }
    out
}
