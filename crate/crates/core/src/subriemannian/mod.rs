//! Sub-Riemannian geometry of the frame bundle: the Hamiltonian flow of
//! normal geodesics, shooting to fibers, the distances `d_FM` and
//! `d_{Sym⁺M}`, most probable paths of the driving process and the
//! bracket-generating rank.

pub mod hamiltonian;
pub mod hormander;
pub mod shooting;

pub use hamiltonian::{exp, geodesic_flow, hamiltonian, hamiltonian_gradient, CotangentState};
pub use hormander::hormander_rank;
pub use shooting::{
    dist_sym, dist_sym_geodesic, mpp_driving, shoot_to_fiber, shoot_to_fiber_cached,
    shoot_to_fiber_warm, FiberShootingOptions, GeodesicResult, ShootingCache,
};
