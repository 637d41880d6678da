//! Two-channel flow file:
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | `202021.25` as little-endian f32 ("PIEH") |
//! | 4..8   | width, little-endian i32                  |
//! | 8..12  | height, little-endian i32                 |
//! | 12..   | row-major `(u, v)` pairs, little-endian f32 |
//!
//! Invalid pixels store `FLO_UNKNOWN` in both channels; any component with
//! magnitude above 1e9 reads back as invalid.

use std::path::Path;

use nalgebra::Vector2;

use super::{parse_err, read_bytes, write_bytes, IoError};
use crate::matching::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;
pub const FLO_UNKNOWN: f32 = 1e10;

pub fn encode_flow(flow: &FlowField<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.vectors().len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (v, &ok) in flow.vectors().iter().zip(flow.valid_mask()) {
        let (u, w) = if ok { (v.x, v.y) } else { (FLO_UNKNOWN, FLO_UNKNOWN) };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField<f32>, IoError> {
    if bytes.len() < 12 {
        return Err(parse_err(bytes.len(), format!("header needs 12 bytes, found {}", bytes.len())));
    }
    if le_f32(&bytes[0..4]) != FLO_MAGIC {
        return Err(parse_err(0, "missing PIEH magic"));
    }
    let dim = |o: usize| i32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let (w, h) = (dim(4), dim(8));
    if w <= 0 || h <= 0 {
        return Err(parse_err(4, format!("invalid size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = w * h * 8;
    let actual = bytes.len() - 12;
    if actual != expected {
        return Err(parse_err(12, format!("payload size mismatch: expected {expected} bytes, found {actual}")));
    }
    let mut flow = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for c in bytes[12..].chunks_exact(8) {
        let (u, v) = (le_f32(&c[..4]), le_f32(&c[4..]));
        let ok = u.is_finite() && v.is_finite() && u.abs() <= 1e9 && v.abs() <= 1e9;
        valid.push(ok);
        flow.push(if ok { Vector2::new(u, v) } else { Vector2::zeros() });
    }
    FlowField::new(w, h, flow, valid).map_err(|e| parse_err(12, e.to_string()))
}

pub fn write_flow(path: &Path, flow: &FlowField<f32>) -> Result<(), IoError> {
    write_bytes(path, &encode_flow(flow))
}

pub fn read_flow(path: &Path) -> Result<FlowField<f32>, IoError> {
    decode_flow(&read_bytes(path)?).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let f = FlowField::new(2, 1, vec![Vector2::new(1.5, -2.0), Vector2::new(9.0, 9.0)], vec![true, false]).unwrap();
        let b = encode_flow(&f);
        assert_eq!(&b[..4], b"PIEH");
        assert_eq!(b.len(), 12 + 16);
        assert_eq!(&b[20..24], &FLO_UNKNOWN.to_le_bytes());
        let back = decode_flow(&b).unwrap();
        assert_eq!(back.vectors(), f.vectors());
        assert_eq!(back.valid_mask(), f.valid_mask());
        assert!(matches!(decode_flow(&b[..20]), Err(IoError::Parse { offset: 12, .. })));
        assert!(matches!(decode_flow(b"abcdabcdabcd"), Err(IoError::Parse { offset: 0, .. })));
    }
}
