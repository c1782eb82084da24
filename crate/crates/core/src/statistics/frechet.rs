use nalgebra::DVector;
use rayon::prelude::*;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::framebundle::SymPoint;
use crate::geometry::geodesic::exp_map;
use crate::geometry::{log_map, ChartManifold, ShootingOptions};

#[derive(Clone, Debug)]
pub struct FrechetOptions {
    pub max_iter: usize,
    /// Stop when `‖grad‖_g` falls below this.
    pub grad_tol: f64,
    pub armijo: f64,
    pub shooting: ShootingOptions,
}

impl Default for FrechetOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            armijo: 1e-4,
            shooting: ShootingOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FrechetMean {
    pub x: DVector<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// `Σ_i d_g(x, x_i)²` and `Σ_i Log_x x_i`.
fn objective_and_logs(
    m: &ChartManifold,
    x: &[f64],
    data: &Dataset,
    opts: &ShootingOptions,
) -> Result<(f64, DVector<f64>)> {
    let logs: Vec<(f64, DVector<f64>)> = data
        .points
        .par_iter()
        .map(|p| {
            if p.as_slice() == x {
                return Ok((0.0, DVector::zeros(x.len())));
            }
            let l = log_map(m, x, p.as_slice(), opts)?;
            Ok((l.distance * l.distance, l.velocity))
        })
        .collect::<Result<_>>()?;
    let f = logs.iter().map(|(d2, _)| d2).sum();
    let v = logs
        .into_iter()
        .fold(DVector::zeros(x.len()), |a, (_, v)| a + v);
    Ok((f, v))
}

/// `argmin_x Σ_i d_g(x, x_i)²` by Riemannian gradient descent from the
/// chart mean. The gradient is `−2 Σ Log_x x_i`; steps follow geodesics with
/// Armijo backtracking from the step `1/(2N)`, which is exact on flat charts.
pub fn frechet_mean(
    m: &ChartManifold,
    data: &Dataset,
    opts: &FrechetOptions,
) -> Result<FrechetMean> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "Fréchet mean of an empty dataset".into(),
        ));
    }
    let mut x = data.chart_mean();
    if !m.in_domain(x.as_slice()) {
        x = data.points[0].clone();
    }
    let steps = opts.shooting.steps;
    let (mut f, mut sum_log) = objective_and_logs(m, x.as_slice(), data, &opts.shooting)?;
    let base_step = 1.0 / data.len() as f64;
    for it in 0..opts.max_iter {
        // −grad/2 = Σ Log
        let gnorm = 2.0 * m.norm(x.as_slice(), sum_log.as_slice())?;
        if gnorm < opts.grad_tol {
            return Ok(FrechetMean {
                x,
                objective: f,
                gradient_norm: gnorm,
                iterations: it,
            });
        }
        let mut tau = base_step;
        let mut accepted = false;
        for _ in 0..40 {
            let v = &sum_log * tau;
            let cand = match exp_map(m, x.as_slice(), v.as_slice(), steps) {
                Ok(c) if m.in_domain(c.as_slice()) => c,
                _ => {
                    tau *= 0.5;
                    continue;
                }
            };
            match objective_and_logs(m, cand.as_slice(), data, &opts.shooting) {
                // F decreases by at least c·τ'·‖grad‖² with τ' = τ/2 the
                // step along −grad.
                Ok((fc, lc)) if fc <= f - opts.armijo * 0.5 * tau * gnorm * gnorm => {
                    x = cand;
                    f = fc;
                    sum_log = lc;
                    accepted = true;
                    break;
                }
                _ => tau *= 0.5,
            }
        }
        if !accepted {
            return Err(Error::NonConvergence {
                what: "Fréchet mean (line search)",
                residual: gnorm,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "Fréchet mean",
        residual: 2.0 * m.norm(x.as_slice(), sum_log.as_slice())?,
    })
}

/// `det_g σ = det(σ_ij) / det(g_ij(x))`, the determinant of `σ` in a
/// `g`-orthonormal basis.
pub fn det_g(m: &ChartManifold, sigma: &SymPoint) -> Result<f64> {
    let g = m.metric(sigma.x.as_slice())?;
    Ok(sigma.sigma.determinant() / g.determinant())
}
