//! Coordinate-chart Riemannian manifolds: metric, Levi-Civita connection,
//! curvature, geodesics and parallel transport.

pub mod curvature;
pub mod geodesic;
pub mod manifold;
pub mod registry;

pub use curvature::{curvature, curvature_map_rank, scalar_curvature, Riemann};
pub use geodesic::{
    geodesic_distance, log_map, parallel_transport, riemannian_geodesic, LogMap, ShootingOptions,
};
pub use manifold::{ChartManifold, Christoffel, ChristoffelMode};
pub use registry::EmbeddedSurface;
