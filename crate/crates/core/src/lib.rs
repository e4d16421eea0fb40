//! Conditional prediction of future (or past) surface meshes of a growing
//! tubular structure from a source mesh, patient covariates and a time
//! interval.
//!
//! The generator fuses a K-nearest-neighbour branch, a graph-convolution branch
//! and an encoded clinical condition into per-vertex displacements; a
//! conditional graph discriminator supplies an adversarial signal. Everything
//! runs on a small reverse-mode autodiff engine in [`autodiff`].

pub mod autodiff;
pub mod checkpoint;
pub mod condition;
pub mod dataset;
pub mod error;
pub mod gcn;
pub mod kcn;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Negative slope of every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;
