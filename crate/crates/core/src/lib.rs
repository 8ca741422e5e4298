//! Riemannian residual networks.
//!
//! A residual layer moves a point along the manifold, `x ← exp_x(ℓ(x))`, with
//! a learned vector field `ℓ`. The crate provides the geometries, feature
//! maps, vector fields, models, tasks and data generators needed to train
//! such networks on graphs and SPD matrices.

pub mod data;
pub mod error;
pub mod experiment;
pub mod featuremaps;
pub mod gyro;
pub mod manifolds;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod tasks;
pub mod vectorfields;

pub use error::{Error, Result};
pub use numerics::Matrix;
