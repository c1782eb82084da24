//! Brownian motion driven by counter-keyed Gaussian increments, its
//! Stratonovich development into the frame bundle, endpoint ensembles,
//! Monte-Carlo transition densities and the small-time diagnostic.

pub mod density;
pub mod develop;
pub mod diagnostic;
pub mod rng;

pub use density::{default_bandwidth, estimate_density, transition_density, DensityEstimate};
pub use develop::{
    brownian_path, sample_bm, sample_moments, simulate_ensemble, simulate_ensemble_mapped,
    stochastic_develop, BrownianConfig, DiscardStats, Ensemble,
};
pub use diagnostic::{
    gaussian_ratio, small_time_diagnostic, write_diagnostic_csv, DensityMethod, DiagnosticConfig,
    DiagnosticRow,
};
