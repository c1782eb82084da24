//! Frame-bundle geometry on coordinate-chart Riemannian manifolds:
//! development of Euclidean paths, sub-Riemannian normal geodesics on the
//! frame bundle, anisotropic Brownian motion by stochastic development,
//! most probable paths, small-time density diagnostics and the anisotropic
//! mean/precision estimator.

// `!(a > b)` is deliberate: it also rejects NaN. Index loops mirror the
// tensor formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod framebundle;
pub mod geometry;
pub mod optim;
pub mod path;
pub mod statistics;
pub mod stochastics;
pub mod subriemannian;

mod ode;

pub use error::{Error, Result};
pub use geometry::{ChartManifold, ShootingOptions};
pub use path::SampledPath;
