use std::path::Path;

use super::{lines_with_offsets, parse_err, read_bytes, write_bytes, IoError};

/// Ordered `key=value` records.
pub type KeyValues = Vec<(String, String)>;

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<KeyValues, IoError> {
    let mut out = Vec::new();
    for (offset, line) in lines_with_offsets(text) {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(parse_err(offset, format!("expected key=value, got {t:?}")));
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(parse_err(offset, "empty key"));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<KeyValues, IoError> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| parse_err(e.valid_up_to(), "invalid UTF-8").at(path))?;
    parse_key_values(text).map_err(|e| e.at(path))
}

pub fn write_key_values(path: &Path, records: &[(String, String)]) -> Result<(), IoError> {
    let mut s = String::new();
    for (k, v) in records {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let recs = vec![("a".to_string(), "1".to_string()), ("b.c".to_string(), "x y".to_string())];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        write_key_values(&p, &recs).unwrap();
        assert_eq!(read_key_values(&p).unwrap(), recs);
        match parse_key_values("# c\na=1\nbroken\n") {
            Err(IoError::Parse { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }
}
