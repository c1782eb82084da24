use nalgebra::DVector;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::framebundle::FramePoint;
use crate::geometry::ChartManifold;
use crate::stochastics::develop::{simulate_range, DISCARD_WARNING};
use crate::stochastics::BrownianConfig;

/// `n` endpoints of Brownian motion developed from `u0` up to time `t`.
/// Discarded paths are replaced by further paths of the same stream; the run
/// fails if more than [`DISCARD_WARNING`] of `n` had to be replaced.
pub fn generate_synthetic(
    m: &ChartManifold,
    u0: &FramePoint,
    t: f64,
    n: usize,
    seed: u64,
    steps: usize,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be positive".into(),
        ));
    }
    let cfg = BrownianConfig::new(m.dim(), t, steps, seed, n)?;
    let limit = (DISCARD_WARNING * n as f64).floor() as usize;
    let mut points: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut next = 0u64;
    let mut discarded = 0;
    while points.len() < n {
        let want = (n - points.len()) as u64;
        let batch = simulate_range(m, u0, &cfg, next..next + want)?;
        next += want;
        for s in batch {
            match s {
                Some(q) => points.push(q.rows(0, m.dim()).into_owned()),
                None => discarded += 1,
            }
        }
        if discarded > limit {
            return Err(Error::ExcessiveDiscards {
                discarded,
                requested: n,
                limit,
            });
        }
    }
    Ok(Dataset::new(m, points)?.with_ground_truth(u0.clone()))
}
