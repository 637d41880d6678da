//! File formats: camera text files, PFM depth maps, `.flo` flow fields,
//! PLY point clouds, raster images and key=value manifests.

mod camera;
mod flo;
mod image;
mod keyvalue;
mod pfm;
mod ply;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use camera::{parse_camera, read_camera, write_camera, format_camera};
pub use flo::{decode_flow, encode_flow, read_flow, write_flow, FLO_MAGIC, FLO_UNKNOWN};
pub use image::{load_image, save_image_png16, save_preview_png};
pub use keyvalue::{parse_key_values, read_key_values, write_key_values, KeyValues};
pub use pfm::{
    decode_pfm, depth_preview, encode_pfm, read_depth, read_pfm, write_depth, write_pfm, PfmImage,
};
pub use ply::{decode_ply, encode_ply, read_ply, write_ply, PlyFormat};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse { path: PathBuf, offset: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn invalid(path: &Path, message: impl Into<String>) -> Self {
        IoError::Invalid { path: path.to_path_buf(), message: message.into() }
    }

    /// Attaches a path to an error produced while decoding an in-memory buffer.
    pub(crate) fn at(self, path: &Path) -> Self {
        match self {
            IoError::Parse { offset, message, .. } => IoError::Parse { path: path.to_path_buf(), offset, message },
            IoError::Invalid { message, .. } => IoError::Invalid { path: path.to_path_buf(), message },
            other => other,
        }
    }
}

pub(crate) fn parse_err(offset: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { path: PathBuf::new(), offset, message: message.into() }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

/// Splits a text buffer into lines, yielding each line with the byte offset
/// of its first character.
pub(crate) fn lines_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |l| {
        let start = offset;
        offset += l.len();
        (start, l.trim_end_matches(['\n', '\r']))
    })
}
