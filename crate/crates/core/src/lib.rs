//! Trajectory reconstruction of a quadrotor seen by several fixed, synchronized
//! cameras.
//!
//! The pipeline triangulates an initial trajectory from ambiguous per-frame
//! candidate detections ([`association`]), then refines cameras and points with
//! a sparse Levenberg-Marquardt bundle adjustment ([`solver`]) regularized by
//! one of several motion priors ([`priors`]). The strongest prior is built on a
//! quadrotor flight model ([`dynamics`]), which also yields the roll, pitch,
//! throttle and torque commands that explain the recovered flight.
//!
//! [`simulator`] and [`evaluation`] reproduce the synthetic benchmark used to
//! compare the priors; [`io`] holds the on-disk formats used by the CLI.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod dynamics;
pub mod evaluation;
pub mod exec;
pub mod io;
pub mod loss;
pub mod plot;
pub mod priors;
pub mod rng;
pub mod scene;
pub mod simulator;
pub mod solver;

pub use association::{Assignment, CandidateSet, ObservationTable};
pub use dynamics::{ControlSequence, InitialState, LatentSequence, QuadParams, Trajectory};
pub use exec::Execution;
pub use loss::RobustLoss;
pub use scene::{Camera, Intrinsics, SimilarityTransform};

/// Three-component column vector in meters (world frame) unless noted otherwise.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Pixel coordinates.
pub type Vec2 = nalgebra::Vector2<f64>;
