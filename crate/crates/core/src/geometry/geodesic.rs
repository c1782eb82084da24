use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::manifold::ChartManifold;
use crate::error::{Error, Result};
use crate::ode::rk4_step;
use crate::optim::{levenberg_marquardt, LmOptions};
use crate::path::SampledPath;

/// Default RK4 resolution per unit time.
pub const DEFAULT_STEPS_PER_UNIT_TIME: usize = 1000;

fn geodesic_rhs(m: &ChartManifold, y: &[f64], out: &mut [f64]) -> Result<()> {
    let n = m.dim();
    let (x, v) = y.split_at(n);
    let gamma = m.christoffel(x)?;
    out[..n].copy_from_slice(v);
    gamma.contract(v, v, &mut out[n..]);
    for a in &mut out[n..] {
        *a = -*a;
    }
    Ok(())
}

/// Position–velocity trajectory of `ẍ^k + Γ^k_{ij} ẋ^i ẋ^j = 0`; node values
/// are `(x, ẋ)` of length `2n`.
pub fn geodesic_states(
    m: &ChartManifold,
    x0: &[f64],
    v0: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<SampledPath> {
    let n = m.dim();
    m.check_domain(x0)?;
    if v0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: v0.len(),
        });
    }
    let steps = steps.max(1);
    let h = horizon / steps as f64;
    let mut y: Vec<f64> = x0.iter().chain(v0).copied().collect();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(DVector::from_column_slice(&y));
    let mut rhs = |s: &[f64], out: &mut [f64]| geodesic_rhs(m, s, out);
    for k in 0..steps {
        y = rk4_step(&mut rhs, &y, h).map_err(|e| exit_at(e, h * k as f64))?;
        if !m.in_domain(&y[..n]) {
            return Err(Error::ChartExit {
                time: h * (k + 1) as f64,
            });
        }
        values.push(DVector::from_column_slice(&y));
    }
    Ok(SampledPath {
        times: SampledPath::uniform_times(horizon, steps),
        values,
    })
}

pub(crate) fn exit_at(e: Error, time: f64) -> Error {
    match e {
        Error::OutsideDomain { .. } => Error::ChartExit { time },
        other => other,
    }
}

/// Riemannian geodesic `t ↦ exp_{x0}(t v0)` on `[0, horizon]`.
pub fn riemannian_geodesic(
    m: &ChartManifold,
    x0: &[f64],
    v0: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<SampledPath> {
    Ok(geodesic_states(m, x0, v0, horizon, steps)?.head(m.dim()))
}

/// Endpoint of the unit-time geodesic, without storing the path.
pub fn exp_map(m: &ChartManifold, x0: &[f64], v0: &[f64], steps: usize) -> Result<DVector<f64>> {
    let n = m.dim();
    m.check_domain(x0)?;
    let h = 1.0 / steps.max(1) as f64;
    let mut y: Vec<f64> = x0.iter().chain(v0).copied().collect();
    let mut rhs = |s: &[f64], out: &mut [f64]| geodesic_rhs(m, s, out);
    for k in 0..steps.max(1) {
        y = rk4_step(&mut rhs, &y, h).map_err(|e| exit_at(e, h * k as f64))?;
        if !m.in_domain(&y[..n]) {
            return Err(Error::ChartExit {
                time: h * (k + 1) as f64,
            });
        }
    }
    Ok(DVector::from_column_slice(&y[..n]))
}

#[derive(Clone, Debug)]
pub struct ShootingOptions {
    /// RK4 steps over the unit time interval.
    pub steps: usize,
    /// Endpoint residual (chart coordinates) accepted as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of initial guesses, the chart difference first.
    pub starts: usize,
    pub seed: u64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            steps: 200,
            tol: 1e-8,
            max_iter: 50,
            starts: 8,
            seed: 0x5eed,
        }
    }
}

/// Initial velocity and length of the shortest converged geodesic `x → y`.
#[derive(Clone, Debug)]
pub struct LogMap {
    pub velocity: DVector<f64>,
    pub distance: f64,
    pub residual: f64,
}

/// Riemannian logarithm by shooting: damped Gauss–Newton on the endpoint
/// residual from several initial velocities, keeping the shortest solution.
pub fn log_map(m: &ChartManifold, x: &[f64], y: &[f64], opts: &ShootingOptions) -> Result<LogMap> {
    let n = m.dim();
    m.check_domain(x)?;
    m.check_domain(y)?;
    let delta = DVector::from_iterator(n, y.iter().zip(x).map(|(b, a)| b - a));
    if delta.norm() == 0.0 {
        return Ok(LogMap {
            velocity: DVector::zeros(n),
            distance: 0.0,
            residual: 0.0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scale = delta.norm().max(0.1);
    let starts: Vec<DVector<f64>> = (0..opts.starts.max(1))
        .map(|i| {
            if i == 0 {
                delta.clone()
            } else {
                let noise = DVector::from_fn(n, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                });
                &delta + noise * (0.25 * scale)
            }
        })
        .collect();

    let target = DVector::from_column_slice(y);
    let lm = LmOptions {
        max_iter: opts.max_iter,
        tol: opts.tol,
        ..LmOptions::default()
    };
    let results: Vec<Option<(DVector<f64>, f64)>> = starts
        .into_par_iter()
        .map(|v0| {
            let rep = levenberg_marquardt(
                |v| Ok(exp_map(m, x, v.as_slice(), opts.steps)? - &target),
                v0,
                &lm,
            )
            .ok()?;
            Some((rep.x, rep.residual_norm))
        })
        .collect();

    let mut best: Option<LogMap> = None;
    let mut best_residual = f64::INFINITY;
    for (v, res) in results.into_iter().flatten() {
        best_residual = best_residual.min(res);
        if res >= opts.tol {
            continue;
        }
        let d = m.norm(x, v.as_slice())?;
        if best.as_ref().is_none_or(|b| d < b.distance - 1e-12) {
            best = Some(LogMap {
                velocity: v,
                distance: d,
                residual: res,
            });
        }
    }
    best.ok_or(Error::NonConvergence {
        what: "geodesic shooting",
        residual: best_residual,
    })
}

/// Geodesic distance `d_g(x, y)` by shooting.
pub fn geodesic_distance(
    m: &ChartManifold,
    x: &[f64],
    y: &[f64],
    opts: &ShootingOptions,
) -> Result<f64> {
    Ok(log_map(m, x, y, opts)?.distance)
}

/// Parallel transport of the columns of `v0` along a sampled base path,
/// integrating `V̇^k = −Γ^k_{jl} ẋ^j V^l` with the path interpolated linearly
/// between nodes.
pub fn parallel_transport(
    m: &ChartManifold,
    path: &SampledPath,
    v0: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(transport_along(m, path, v0)?.pop().unwrap())
}

/// Transported matrices at every node.
pub fn transport_along(
    m: &ChartManifold,
    path: &SampledPath,
    v0: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let n = m.dim();
    if path.value_dim() != n || v0.nrows() != n {
        return Err(Error::Dimension {
            expected: n,
            got: v0.nrows(),
        });
    }
    let k = v0.ncols();
    let mut out = Vec::with_capacity(path.len());
    let mut state: Vec<f64> = v0.as_slice().to_vec();
    out.push(v0.clone());
    let mut tmp = vec![0.0; n];
    for (seg, w) in path.values.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        let dx = b - a;
        let t0 = path.times[seg];
        // State carries s in its last slot so the field sees x(s).
        state.push(0.0);
        let mut rhs = |y: &[f64], dy: &mut [f64]| -> Result<()> {
            let s = y[n * k];
            let x: Vec<f64> = (0..n).map(|i| a[i] + s * dx[i]).collect();
            let gamma = m.christoffel(&x)?;
            for c in 0..k {
                gamma.contract(dx.as_slice(), &y[c * n..(c + 1) * n], &mut tmp);
                for i in 0..n {
                    dy[c * n + i] = -tmp[i];
                }
            }
            dy[n * k] = 1.0;
            Ok(())
        };
        state = rk4_step(&mut rhs, &state, 1.0).map_err(|e| exit_at(e, t0))?;
        state.pop();
        out.push(DMatrix::from_column_slice(n, k, &state));
    }
    Ok(out)
}
