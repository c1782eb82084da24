//! Fréchet mean, the anisotropic mean and precision estimator, the
//! Onsager–Machlup functional and synthetic data.

pub mod dataset;
pub mod estimator;
pub mod frechet;
pub mod onsager;
pub mod synthetic;

pub use dataset::Dataset;
pub use estimator::{
    anisotropic_estimate, anisotropy, axis_angle, estimate_mpp_paths, objective_parts, Anisotropy,
    EstimateResult, EstimatorOptions,
};
pub use frechet::{det_g, frechet_mean, FrechetMean, FrechetOptions};
pub use onsager::{mpp_isotropic, onsager_machlup, MppOptions};
pub use synthetic::generate_synthetic;
