//! Cameras, projection, two-view triangulation and similarity alignment.

mod align;
mod camera;
mod triangulate;

pub use align::{align_similarity, align_similarity_with, AlignConfig, SimilarityTransform};
pub use camera::{Camera, Intrinsics, ProjectionJacobian};
pub use triangulate::{triangulate_two_view, MIN_RAY_ANGLE};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("point has non-positive depth {depth} in the camera frame")]
    NonPositiveDepth { depth: f64 },
    #[error("degenerate two-view geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{0}")]
    InvalidCamera(String),
}
