//! Dense matching: descriptors, all-pairs correlation pyramid and
//! iterative flow.

pub mod correlation;
mod features;
mod flow;
mod image;
mod refine;

use thiserror::Error;

pub use correlation::{build_correlation_volume, build_pyramid, lookup, CorrelationPyramid, CorrelationVolume};
pub use features::{extract_features, FeatureMap, FeatureParams, DESCRIPTOR_DIM};
pub use flow::{flow_to_matches, solve_flow, solve_flow_on_pyramid, FlowField, FlowParams, FlowSolution};
pub use image::{ImageBuffer, MIN_IMAGE_SIDE};
pub use refine::refine_matches;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("image {width}x{height} is too small (minimum side {min})")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pixel value {index} is not a finite intensity in [0, 1]")]
    InvalidPixel { index: usize },
    #[error("flow field has no valid pixels")]
    NoValidFlow,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
