use thiserror::Error;

use crate::subriemannian::GeodesicResult;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the chart domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("path left the chart domain at t = {time}")]
    ChartExit { time: f64 },

    #[error("metric is singular or not positive definite at {point:?}")]
    SingularMetric { point: Vec<f64> },

    #[error("invalid frame: |det alpha| = {det:e}")]
    InvalidFrame { det: f64 },

    #[error("frame degenerated at t = {time} (|det alpha| = {det:e})")]
    FrameDegenerate { time: f64, det: f64 },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("group element is singular")]
    SingularAction,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{what} did not converge (best residual {residual:e})")]
    NonConvergence { what: &'static str, residual: f64 },

    #[error("fiber shooting did not converge (best residual {:e}, best length {})", .best.endpoint_residual, .best.length)]
    ShootingFailed { best: Box<GeodesicResult> },

    #[error("{discarded} of {requested} paths left the chart (limit {limit})")]
    ExcessiveDiscards {
        discarded: usize,
        requested: usize,
        limit: usize,
    },

    #[error("unknown manifold '{name}'; known: {known}")]
    UnknownManifold { name: String, known: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Numerical failures as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ChartExit { .. }
                | Error::SingularMetric { .. }
                | Error::FrameDegenerate { .. }
                | Error::NonConvergence { .. }
                | Error::ShootingFailed { .. }
                | Error::ExcessiveDiscards { .. }
        )
    }
}
