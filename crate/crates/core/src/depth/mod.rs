//! Plane-sweep depth estimation.

mod map;
mod sweep;

use thiserror::Error;

pub use map::{DepthHypotheses, DepthMap, HypothesisRange};
pub use sweep::{extract_depth, homography_for_plane, plane_sweep, CostVolume, DepthParams, SourceView};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("plane depth must be positive and finite")]
    NonPositiveDepth,
    #[error("plane sweep needs at least one source view")]
    NoSourceViews,
    #[error("invalid depth range: {0}")]
    InvalidRange(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
