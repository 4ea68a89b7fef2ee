//! Circuit-theoretic joint parameter and state estimation for transmission
//! grids with utility-scale PV and battery storage.
//!
//! The grid, PV plants and batteries are modelled as equivalent circuits;
//! measured elements are swapped for measurement circuits carrying explicit
//! noise variables, and estimation minimizes the weighted noise subject to the
//! aggregated circuit's KCL/KVL constraints. The same machinery runs
//! stand-alone (grid, PV, battery) or combined, and a Monte-Carlo harness
//! scores both against simulated ground truth.
//!
//! Models and solvers are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix `f64`, which the harness and CLI use.

// `!(x > 0)` is used on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Sparse kernels index several arrays with one counter.
#![allow(clippy::needless_range_loop)]

pub mod der;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod io;
pub mod measurement;
pub mod metrics;
pub mod network;
pub mod residual;
pub mod scalar;
pub mod sim;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GridCase64 = network::GridCase<f64>;
pub type Bus64 = network::Bus<f64>;
pub type Branch64 = network::Branch<f64>;
pub type PvSystem64 = der::PvSystem<f64>;
pub type BatterySystem64 = der::BatterySystem<f64>;
pub type DerFleet64 = der::DerFleet<f64>;
pub type MeasurementSet64 = measurement::MeasurementSet<f64>;
pub type EstimationProblem64 = estimator::EstimationProblem<f64>;
pub type Estimates64 = estimator::Estimates<f64>;
pub type GroundTruth64 = sim::GroundTruth<f64>;
