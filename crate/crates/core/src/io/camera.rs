//! Camera text file: three rows of `K`, three rows of `[R | T]`
//! (world-to-camera, `X_cam = R X + T`), then `width height`. Values are
//! whitespace separated; `#` starts a comment line. Numbers are written in
//! shortest round-trip form, so reading back is exact.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{lines_with_offsets, parse_err, read_bytes, write_bytes, IoError};
use crate::geom::{CameraIntrinsics, Pose};

pub fn format_camera(k: &CameraIntrinsics<f64>, pose: &Pose<f64>) -> String {
    let m = k.as_matrix();
    let mut s = String::from("# K\n");
    for r in 0..3 {
        s.push_str(&format!("{:e} {:e} {:e}\n", m[(r, 0)], m[(r, 1)], m[(r, 2)]));
    }
    s.push_str("# R | T\n");
    for r in 0..3 {
        let row = pose.rotation.row(r);
        s.push_str(&format!("{:e} {:e} {:e} {:e}\n", row[0], row[1], row[2], pose.translation[r]));
    }
    s.push_str(&format!("# width height\n{} {}\n", k.width, k.height));
    s
}

pub fn write_camera(path: &Path, k: &CameraIntrinsics<f64>, pose: &Pose<f64>) -> Result<(), IoError> {
    write_bytes(path, format_camera(k, pose).as_bytes())
}

pub fn parse_camera(text: &str) -> Result<(CameraIntrinsics<f64>, Pose<f64>), IoError> {
    let rows: Vec<(usize, &str)> =
        lines_with_offsets(text).filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#')).collect();
    let end = text.len();
    let expect = [3, 3, 3, 4, 4, 4, 2];
    if rows.len() != expect.len() {
        return Err(parse_err(end, format!("expected 7 data lines, found {}", rows.len())));
    }
    let mut vals: Vec<Vec<f64>> = Vec::with_capacity(7);
    for ((offset, line), n) in rows.iter().zip(expect) {
        let mut v = Vec::with_capacity(n);
        let mut pos = 0;
        for tok in line.split_whitespace() {
            let at = offset + pos + line[pos..].find(tok).unwrap_or(0);
            pos = at - offset + tok.len();
            v.push(tok.parse::<f64>().map_err(|_| parse_err(at, format!("not a number: {tok:?}")))?);
        }
        if v.len() != n {
            return Err(parse_err(*offset, format!("expected {n} values, found {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(*offset, "non-finite value"));
        }
        vals.push(v);
    }
    let kr = &vals[..3];
    if kr[0][1] != 0.0 || kr[1][0] != 0.0 || kr[2] != [0.0, 0.0, 1.0] {
        return Err(parse_err(rows[0].0, "K must be [fx 0 cx; 0 fy cy; 0 0 1]"));
    }
    let (w, h) = (vals[6][0], vals[6][1]);
    if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
        return Err(parse_err(rows[6].0, "width and height must be positive integers"));
    }
    let k = CameraIntrinsics::new(kr[0][0], kr[1][1], kr[0][2], kr[1][2], w as usize, h as usize)
        .map_err(|e| parse_err(rows[0].0, e.to_string()))?;
    let rt = &vals[3..6];
    let r = Matrix3::from_fn(|i, j| rt[i][j]);
    let t = Vector3::new(rt[0][3], rt[1][3], rt[2][3]);
    let pose = Pose::new(r, t).map_err(|e| parse_err(rows[3].0, e.to_string()))?;
    Ok((k, pose))
}

pub fn read_camera(path: &Path) -> Result<(CameraIntrinsics<f64>, Pose<f64>), IoError> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| parse_err(e.valid_up_to(), "invalid UTF-8").at(path))?;
    parse_camera(text).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let k = CameraIntrinsics::new(412.123456789012, 409.98765432101, 255.5000000001, 191.25, 512, 384).unwrap();
        let pose = Pose::from_axis_angle(&Vector3::new(0.1, -0.223, 0.0417), Vector3::new(0.3, 1e-17, -2.5));
        let (k2, p2) = parse_camera(&format_camera(&k, &pose)).unwrap();
        assert_eq!(k2, k);
        assert!((p2.rotation - pose.rotation).abs().max() <= 1e-15);
        assert!((p2.translation - pose.translation).abs().max() <= 1e-15);
    }

    #[test]
    fn errors_carry_offsets() {
        let text = "1 0 2\n0 1 2\n0 0 1\n1 0 0 0\n0 1 0 x\n0 0 1 0\n4 4\n";
        match parse_camera(text) {
            Err(IoError::Parse { offset, message, .. }) => {
                assert_eq!(offset, text.find('x').unwrap());
                assert!(message.contains("not a number"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_camera("1 0 2\n"), Err(IoError::Parse { .. })));
        let not_rot = "1 0 2\n0 1 2\n0 0 1\n2 0 0 0\n0 1 0 0\n0 0 1 0\n4 4\n";
        assert!(matches!(parse_camera(not_rot), Err(IoError::Parse { offset: 18, .. })));
    }
}
