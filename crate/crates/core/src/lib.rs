//! Active, weakly supervised semantic segmentation of point clouds.
//!
//! Annotation follows the one-class-one-click (OCOC) format: every queried
//! spherical sub-cloud receives exactly one labeled point per class present
//! in it. A compact neighborhood-pooling network is trained on those clicks
//! together with scene-level constraints and entropy-weighted pseudo labels,
//! and new sub-clouds are queried where the temporal output discrepancy
//! (TOD) between training cycles is largest.
//!
//! Numerical code in [`model`], [`losses`] and [`active`] is generic over a
//! [`Scalar`]; training normally runs in `f32`, gradient checks in `f64`.
//! Geometry (positions, radii, cells) is always `f64`.

pub mod active;
pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod pointcloud;
pub mod scalar;
pub mod synth;
pub mod weaklabel;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use pointcloud::{PointCloud, SpatialIndex, SubsampleMap};
pub use weaklabel::{LabeledPool, OcocLabel, SubCloud};

/// Single-precision network parameters (the training default).
pub type Params32 = model::Params<f32>;
/// Double-precision network parameters (gradient checking).
pub type Params64 = model::Params<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type ForwardTrace32 = model::ForwardTrace<f32>;
pub type ForwardTrace64 = model::ForwardTrace<f64>;
pub type AdamState32 = model::AdamState<f32>;
pub type AdamState64 = model::AdamState<f64>;
pub type LossBundle32 = losses::LossBundle<f32>;
pub type LossBundle64 = losses::LossBundle<f64>;
pub type TodMap32 = active::TodMap<f32>;
pub type TodMap64 = active::TodMap<f64>;
