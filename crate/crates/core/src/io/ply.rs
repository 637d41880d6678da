//! PLY point clouds. Written as
//!
//! ```text
//! ply
//! format binary_little_endian 1.0
//! comment frame <id>
//! element vertex <n>
//! property float x
//! property float y
//! property float z
//! property uchar support
//! property float reprojection_error
//! end_header
//! ```
//!
//! or the same header with `format ascii 1.0`. The reader accepts any
//! vertex property list with scalar types and picks out `x`, `y`, `z` and,
//! when present, `support` and `reprojection_error`.

use std::path::Path;

use nalgebra::Vector3;

use super::{parse_err, read_bytes, write_bytes, IoError};
use crate::fusion::{FusedPoint, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    BinaryLittleEndian,
    Ascii,
}

pub fn encode_ply(cloud: &PointCloud<f32>, format: PlyFormat) -> Vec<u8> {
    let fmt = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\ncomment frame {}\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar support\nproperty float reprojection_error\nend_header\n",
        cloud.frame,
        cloud.len()
    )
    .into_bytes();
    for p in &cloud.points {
        let support = p.support_count.min(255) as u8;
        match format {
            PlyFormat::BinaryLittleEndian => {
                for v in p.xyz.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.push(support);
                out.extend_from_slice(&p.mean_reprojection_error.to_le_bytes());
            }
            PlyFormat::Ascii => {
                out.extend_from_slice(
                    format!("{:e} {:e} {:e} {} {:e}\n", p.xyz.x, p.xyz.y, p.xyz.z, support, p.mean_reprojection_error).as_bytes(),
                );
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud<f32>, IoError> {
    let end_tag = b"end_header\n";
    let header_end = bytes
        .windows(end_tag.len())
        .position(|w| w == end_tag)
        .ok_or_else(|| parse_err(0, "missing end_header"))?
        + end_tag.len();
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| parse_err(e.valid_up_to(), "header is not UTF-8"))?;
    let mut format = None;
    let mut frame = 0usize;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    for (offset, line) in super::lines_with_offsets(header) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["ply"] | ["end_header"] | [] => {}
            ["format", f, "1.0"] => {
                format = Some(match *f {
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "ascii" => PlyFormat::Ascii,
                    other => return Err(parse_err(offset, format!("unsupported format {other}"))),
                })
            }
            ["comment", "frame", id] => frame = id.parse().map_err(|_| parse_err(offset, "bad frame id"))?,
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, n] => {
                if count.is_some() && in_vertex {
                    return Err(parse_err(offset, "only a single vertex element is supported"));
                }
                in_vertex = *name == "vertex";
                if !in_vertex {
                    return Err(parse_err(offset, format!("unsupported element {name}")));
                }
                count = Some(n.parse::<usize>().map_err(|_| parse_err(offset, "bad vertex count"))?);
            }
            ["property", "list", ..] => return Err(parse_err(offset, "list properties are not supported")),
            ["property", ty, name] => {
                let s = Scalar::parse(ty).ok_or_else(|| parse_err(offset, format!("unknown type {ty}")))?;
                props.push((name.to_string(), s));
            }
            _ => return Err(parse_err(offset, format!("unexpected header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(0, "missing format line"))?;
    let count = count.ok_or_else(|| parse_err(0, "missing vertex element"))?;
    let find = |n: &str| props.iter().position(|(name, _)| name == n);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(0, "vertex element lacks x/y/z")),
    };
    let (isup, ierr) = (find("support"), find("reprojection_error"));
    let body = &bytes[header_end..];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    match format {
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = props.iter().map(|p| p.1.size()).sum();
            if body.len() != stride * count {
                return Err(parse_err(
                    header_end,
                    format!("payload size mismatch: expected {} bytes, found {}", stride * count, body.len()),
                ));
            }
            for rec in body.chunks_exact(stride) {
                let mut o = 0;
                rows.push(
                    props
                        .iter()
                        .map(|(_, s)| {
                            let v = s.read_le(&rec[o..]);
                            o += s.size();
                            v
                        })
                        .collect(),
                );
            }
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|e| parse_err(header_end + e.valid_up_to(), "body is not UTF-8"))?;
            for (offset, line) in super::lines_with_offsets(text) {
                if line.trim().is_empty() {
                    continue;
                }
                let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
                let vals = vals.map_err(|_| parse_err(header_end + offset, "bad number"))?;
                if vals.len() != props.len() {
                    return Err(parse_err(header_end + offset, format!("expected {} values, found {}", props.len(), vals.len())));
                }
                rows.push(vals);
            }
            if rows.len() != count {
                return Err(parse_err(bytes.len(), format!("expected {count} vertices, found {}", rows.len())));
            }
        }
    }
    let points = rows
        .into_iter()
        .map(|r| FusedPoint {
            xyz: Vector3::new(r[ix] as f32, r[iy] as f32, r[iz] as f32),
            support_count: isup.map_or(1, |i| r[i] as usize),
            mean_reprojection_error: ierr.map_or(0.0, |i| r[i] as f32),
        })
        .collect();
    Ok(PointCloud { points, frame })
}

pub fn write_ply(path: &Path, cloud: &PointCloud<f32>, format: PlyFormat) -> Result<(), IoError> {
    write_bytes(path, &encode_ply(cloud, format))
}

pub fn read_ply(path: &Path) -> Result<PointCloud<f32>, IoError> {
    decode_ply(&read_bytes(path)?).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud<f32> {
        PointCloud {
            points: (0..50)
                .map(|i| FusedPoint {
                    xyz: Vector3::new(i as f32 * 0.1, -(i as f32) / 3.0, 1e-7 * i as f32),
                    support_count: 2 + i % 5,
                    mean_reprojection_error: 0.01 * i as f32,
                })
                .collect(),
            frame: 3,
        }
    }

    #[test]
    fn binary_and_ascii_round_trip() {
        for f in [PlyFormat::BinaryLittleEndian, PlyFormat::Ascii] {
            assert_eq!(decode_ply(&encode_ply(&cloud(), f)).unwrap(), cloud());
        }
    }

    #[test]
    fn binary_record_layout() {
        let b = encode_ply(&cloud(), PlyFormat::BinaryLittleEndian);
        let h = b.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        assert_eq!(b.len() - h, 50 * 17);
        assert_eq!(&b[h + 4..h + 8], &(-0.0f32).to_le_bytes()[..]);
    }

    #[test]
    fn foreign_property_layout() {
        let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty double z\nproperty uchar red\nproperty double x\nproperty double y\nend_header\n".to_vec();
        b.extend_from_slice(&3.0f64.to_le_bytes());
        b.push(200);
        b.extend_from_slice(&1.0f64.to_le_bytes());
        b.extend_from_slice(&2.0f64.to_le_bytes());
        let c = decode_ply(&b).unwrap();
        assert_eq!(c.points[0].xyz, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(c.points[0].support_count, 1);
    }

    #[test]
    fn truncated_binary() {
        let mut b = encode_ply(&cloud(), PlyFormat::BinaryLittleEndian);
        b.pop();
        assert!(matches!(decode_ply(&b), Err(IoError::Parse { message, .. }) if message.contains("expected 850 bytes, found 849")));
    }
}
