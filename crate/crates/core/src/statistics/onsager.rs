use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{
    log_map, riemannian_geodesic, scalar_curvature, ChartManifold, ShootingOptions,
};
use crate::path::SampledPath;

#[derive(Clone, Debug)]
pub struct MppOptions {
    pub max_iter: usize,
    /// Stop when the preconditioned gradient `gradᵀ A⁻¹ grad` falls below this.
    pub tol: f64,
    pub fd_step: f64,
    pub shooting: ShootingOptions,
}

impl Default for MppOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-14,
            fd_step: 1e-6,
            shooting: ShootingOptions::default(),
        }
    }
}

fn segment_energy(m: &ChartManifold, a: &[f64], b: &[f64], dt: f64) -> Result<f64> {
    let mid: Vec<f64> = a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect();
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| q - p).collect();
    Ok(0.5 * m.inner(&mid, &d, &d)? / dt)
}

/// Discrete `∫ (−½‖γ̇‖²_g + S(γ)/12) dt`: kinetic energy per segment with the
/// metric at the segment midpoint, curvature by the trapezoidal rule.
pub fn onsager_machlup(m: &ChartManifold, path: &SampledPath) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::InvalidArgument(
            "Onsager-Machlup functional needs at least 2 nodes".into(),
        ));
    }
    let n = m.dim();
    if path.value_dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: path.value_dim(),
        });
    }
    let mut total = 0.0;
    for k in 0..path.len() - 1 {
        let dt = path.times[k + 1] - path.times[k];
        let (a, b) = (path.values[k].as_slice(), path.values[k + 1].as_slice());
        let s = scalar_curvature(m, a)? + scalar_curvature(m, b)?;
        total += -segment_energy(m, a, b, dt)? + dt * s / 24.0;
    }
    Ok(total)
}

/// Terms of the discrete functional that involve interior node `k`.
fn local_terms(
    m: &ChartManifold,
    nodes: &[DVector<f64>],
    k: usize,
    x: &[f64],
    dt: f64,
) -> Result<f64> {
    Ok(-segment_energy(m, nodes[k - 1].as_slice(), x, dt)?
        - segment_energy(m, x, nodes[k + 1].as_slice(), dt)?
        + dt * scalar_curvature(m, x)? / 12.0)
}

fn total(m: &ChartManifold, nodes: &[DVector<f64>], dt: f64) -> Result<f64> {
    let path = SampledPath {
        times: (0..nodes.len()).map(|k| k as f64 * dt).collect(),
        values: nodes.to_vec(),
    };
    onsager_machlup(m, &path)
}

/// Most probable path of isotropic Brownian motion from `x0` to `y` on
/// `[0, 1]`: maximizes the discrete Onsager–Machlup functional over the
/// interior nodes, starting from the Riemannian geodesic. Ascent steps are
/// preconditioned by the frozen-metric Hessian of the kinetic energy.
pub fn mpp_isotropic(
    m: &ChartManifold,
    x0: &[f64],
    y: &[f64],
    nodes: usize,
    opts: &MppOptions,
) -> Result<SampledPath> {
    let n = m.dim();
    m.check_domain(x0)?;
    m.check_domain(y)?;
    if x0 == y {
        return Err(Error::InvalidArgument("endpoints coincide".into()));
    }
    if nodes < 3 {
        return Err(Error::InvalidArgument(format!(
            "most probable path needs at least 3 nodes, got {nodes}"
        )));
    }
    let steps = nodes - 1;
    let dt = 1.0 / steps as f64;
    let v = log_map(m, x0, y, &opts.shooting)?.velocity;
    let mut xs = riemannian_geodesic(m, x0, v.as_slice(), 1.0, steps)?.values;
    xs[steps] = DVector::from_column_slice(y);
    let interior = steps - 1;
    let mut value = total(m, &xs, dt)?;
    let h = opts.fd_step;

    for _ in 0..opts.max_iter {
        let mut grad = DVector::zeros(interior * n);
        for k in 1..steps {
            for i in 0..n {
                let mut p = xs[k].clone();
                let mut q = xs[k].clone();
                p[i] += h;
                q[i] -= h;
                let fp = local_terms(m, &xs, k, p.as_slice(), dt)?;
                let fq = local_terms(m, &xs, k, q.as_slice(), dt)?;
                grad[(k - 1) * n + i] = (fp - fq) / (2.0 * h);
            }
        }
        let mut a = DMatrix::zeros(interior * n, interior * n);
        for k in 0..steps {
            let mid: Vec<f64> = xs[k]
                .iter()
                .zip(xs[k + 1].iter())
                .map(|(p, q)| 0.5 * (p + q))
                .collect();
            let g = m.metric(&mid)? / dt;
            // Segment k couples interior nodes k and k+1 (1-based).
            let left = (k >= 1).then(|| k - 1);
            let right = (k < interior).then_some(k);
            if let Some(l) = left {
                let mut blk = a.view_mut((l * n, l * n), (n, n));
                blk += &g;
            }
            if let Some(r) = right {
                let mut blk = a.view_mut((r * n, r * n), (n, n));
                blk += &g;
            }
            if let (Some(l), Some(r)) = (left, right) {
                let mut blk = a.view_mut((l * n, r * n), (n, n));
                blk -= &g;
                let mut blk = a.view_mut((r * n, l * n), (n, n));
                blk -= &g;
            }
        }
        let chol = a.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let d = chol.solve(&grad);
        let decrement = grad.dot(&d);
        if decrement < opts.tol {
            return Ok(SampledPath {
                times: SampledPath::uniform_times(1.0, steps),
                values: xs,
            });
        }
        let mut tau = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand = xs.clone();
            for k in 1..steps {
                cand[k] += d.rows((k - 1) * n, n) * tau;
            }
            if cand.iter().all(|c| m.in_domain(c.as_slice())) {
                if let Ok(f) = total(m, &cand, dt) {
                    if f > value {
                        xs = cand;
                        value = f;
                        accepted = true;
                        break;
                    }
                }
            }
            tau *= 0.5;
        }
        if !accepted {
            // No ascent within rounding: the current path is stationary.
            if decrement < 1e3 * opts.tol {
                break;
            }
            return Err(Error::NonConvergence {
                what: "most probable path ascent",
                residual: decrement.sqrt(),
            });
        }
    }
    Ok(SampledPath {
        times: SampledPath::uniform_times(1.0, steps),
        values: xs,
    })
}
