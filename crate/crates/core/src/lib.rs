//! Reconstruction of curvature and Jacobi fields along a geodesic from the
//! shape operators of small geodesic spheres.
//!
//! The crate is organised bottom-up:
//!
//! * [`catalog`]: Finsler charts with fundamental tensor, spray and curvature;
//! * [`geodesic`]: geodesics with a parallel `g_γ̇`-orthonormal frame;
//! * [`forward`]: Jacobi matrices, shape operators and the sampled data grid;
//! * [`inverse`]: curvature and Jacobi reconstruction from the data grid;
//! * [`metric`]: surface normal coordinates and the recovered metric;
//! * [`experiment`]: configuration, end-to-end runs and comparison reports.
//!
//! All numerical code is generic over [`Real`]; the aliases at the crate root
//! fix the working precision to `f64`.

pub mod catalog;
pub mod experiment;
pub mod error;
pub mod forward;
pub mod geodesic;
pub mod inverse;
pub mod metric;
pub mod numerics;
pub mod scalar;

pub use error::{DixError, Result};
pub use scalar::Real;

pub type CurvatureCurve = forward::CurvatureCurve<f64>;
pub type SphereDataGrid = forward::SphereDataGrid<f64>;
pub type ForwardData = forward::ForwardData<f64>;
pub type GeodesicFrame = geodesic::GeodesicFrame<f64>;
pub type ReconstructionResult = inverse::ReconstructionResult<f64>;
pub type CurvatureEstimate = inverse::CurvatureEstimate<f64>;
pub type SurfacePatch = metric::SurfacePatch<f64>;
pub type NormalCoordinateMetric = metric::NormalCoordinateMetric<f64>;
pub type EuclideanChart = catalog::EuclideanChart<f64>;
pub type ConformalChart = catalog::ConformalChart<f64>;
pub type FlatRandersChart = catalog::FlatRandersChart<f64>;
pub type PerturbedRanders = catalog::PerturbedRanders<f64>;
