use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::develop::{simulate_ensemble, BrownianConfig};
use crate::error::{Error, Result};
use crate::framebundle::FramePoint;
use crate::geometry::ChartManifold;

/// Batches used for the standard error.
pub const DENSITY_BATCHES: usize = 20;
/// Kernel support, in bandwidths.
const KERNEL_CUTOFF: f64 = 5.0;
/// Grid nodes per axis for the kernel normalization.
const NORMALIZATION_GRID: usize = 61;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub y: Vec<f64>,
    pub t: f64,
    pub p_hat: f64,
    /// Kernel bandwidth; for the transition estimator, the standard
    /// deviation scale `√s` of the final Gaussian step.
    pub bandwidth: f64,
    pub n_samples: usize,
    pub std_error: f64,
    /// No sample contributed (relative error unbounded).
    pub unreliable: bool,
}

impl DensityEstimate {
    pub fn relative_error(&self) -> f64 {
        if self.unreliable || self.p_hat <= 0.0 {
            f64::INFINITY
        } else {
            self.std_error / self.p_hat
        }
    }
}

/// Reference rule `1.06 σ̂ N^{-1/5}`, with `σ̂` the root mean per-coordinate
/// sample variance in the chart.
pub fn default_bandwidth(samples: &[DVector<f64>]) -> f64 {
    let n = samples.first().map_or(1, |s| s.len());
    let (_, cov) = super::develop::sample_moments(samples);
    let sd = (cov.trace() / n as f64).sqrt();
    1.06 * sd * (samples.len().max(1) as f64).powf(-0.2)
}

/// Distance used by the kernel: closed form when the manifold has one,
/// otherwise the chart length measured in the metric at the midpoint, which
/// agrees with `d_g` to second order inside the kernel support.
pub fn kernel_distance(m: &ChartManifold, a: &[f64], b: &[f64]) -> Result<f64> {
    if m.has_closed_form_distance() {
        return m.distance(a, b);
    }
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    m.norm(&mid, &d)
}

/// `∫_M exp(−d(y, x)²/2h²) dvol(x)` by the midpoint rule on a chart box
/// covering the kernel support around `y`.
pub fn kernel_normalization(m: &ChartManifold, y: &[f64], h: f64) -> Result<f64> {
    let n = m.dim();
    let ginv = m.metric_inverse(y)?;
    let half: Vec<f64> = (0..n)
        .map(|i| (KERNEL_CUTOFF + 1.0) * h * ginv[(i, i)].sqrt())
        .collect();
    let k = NORMALIZATION_GRID;
    let cells = k.pow(n as u32);
    let cell_volume: f64 = half.iter().map(|w| 2.0 * w / k as f64).product();
    let total: f64 = (0..cells)
        .into_par_iter()
        .map(|mut idx| {
            let mut x = vec![0.0; n];
            for i in 0..n {
                let j = idx % k;
                idx /= k;
                x[i] = y[i] - half[i] + (j as f64 + 0.5) * 2.0 * half[i] / k as f64;
            }
            if !m.in_domain(&x) {
                return 0.0;
            }
            let d = match kernel_distance(m, y, &x) {
                Ok(d) => d,
                Err(_) => return 0.0,
            };
            let vol = m.sqrt_det_metric(&x).unwrap_or(0.0);
            (-d * d / (2.0 * h * h)).exp() * vol
        })
        .sum();
    Ok(total * cell_volume)
}

fn batch_std_error(values: &[f64]) -> f64 {
    let b = DENSITY_BATCHES.min(values.len()).max(1);
    let size = values.len() / b;
    if size == 0 || b < 2 {
        return f64::INFINITY;
    }
    let means: Vec<f64> = (0..b)
        .map(|i| values[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

/// Kernel estimate `p̂(y) = N^{-1} Σ_j K_h(d(y, X_j))` with a Gaussian kernel
/// normalized against the Riemannian volume. The standard error comes from
/// the spread of [`DENSITY_BATCHES`] contiguous batches.
pub fn estimate_density(
    m: &ChartManifold,
    samples: &[DVector<f64>],
    y: &[f64],
    t: f64,
    bandwidth: f64,
) -> Result<DensityEstimate> {
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    m.check_domain(y)?;
    let z = kernel_normalization(m, y, bandwidth)?;
    let h2 = bandwidth * bandwidth;
    let cutoff = KERNEL_CUTOFF * bandwidth;
    let weights: Vec<f64> = samples
        .par_iter()
        .map(|x| match kernel_distance(m, y, x.as_slice()) {
            Ok(d) if d <= cutoff => (-d * d / (2.0 * h2)).exp() / z,
            _ => 0.0,
        })
        .collect();
    let hits = weights.iter().filter(|&&w| w > 0.0).count();
    let p_hat = weights.iter().sum::<f64>() / weights.len() as f64;
    Ok(DensityEstimate {
        y: y.to_vec(),
        t,
        p_hat,
        bandwidth,
        n_samples: samples.len(),
        std_error: batch_std_error(&weights),
        unreliable: hits == 0,
    })
}

/// Itô drift of the chart coordinates of `X`, `b^k = −½ Σ_i Γ^k_{jl} α^j_i α^l_i`.
pub fn ito_drift(m: &ChartManifold, u: &FramePoint) -> Result<DVector<f64>> {
    let n = u.dim();
    let gamma = m.christoffel(u.x.as_slice())?;
    let mut b = DVector::zeros(n);
    let mut tmp = vec![0.0; n];
    for i in 0..n {
        let col: Vec<f64> = u.alpha.column(i).iter().copied().collect();
        gamma.contract(&col, &col, &mut tmp);
        for k in 0..n {
            b[k] -= 0.5 * tmp[k];
        }
    }
    Ok(b)
}

fn gaussian_density(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let Some(chol) = cov.clone().cholesky() else {
        return 0.0;
    };
    let d = y - mean;
    let sol = chol.solve(&d);
    let det = chol.l().diagonal().iter().map(|v| v * v).product::<f64>();
    (-0.5 * d.dot(&sol)).exp() / ((std::f64::consts::TAU).powi(n as i32) * det).sqrt()
}

/// Transition-density estimate at `y` for horizon `t`: paths run to `t − s`
/// with `s = last_fraction · t`, and the final stretch is replaced by its
/// Gaussian law `N(x + b s, s α αᵀ)`, divided by `√det g(y)` to give a
/// density against the volume measure. On flat charts this is exact; in
/// general the error is that of one Euler step of length `s`. Discarded
/// paths contribute zero.
pub fn transition_density(
    m: &ChartManifold,
    u0: &FramePoint,
    y: &[f64],
    t: f64,
    cfg: &BrownianConfig,
    last_fraction: f64,
) -> Result<DensityEstimate> {
    if !(last_fraction > 0.0 && last_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "last step fraction must lie in (0, 1], got {last_fraction}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "t must be positive, got {t}"
        )));
    }
    m.check_domain(y)?;
    let s = last_fraction * t;
    let yv = DVector::from_column_slice(y);
    let vol = m.sqrt_det_metric(y)?;
    let n = m.dim();
    let contribution = |u: &FramePoint| -> f64 {
        let Ok(b) = ito_drift(m, u) else { return 0.0 };
        let mean = &u.x + b * s;
        let cov = &u.alpha * u.alpha.transpose() * s;
        gaussian_density(&yv, &mean, &cov) / vol
    };
    let weights: Vec<f64> = if last_fraction >= 1.0 {
        vec![contribution(u0)]
    } else {
        let run = BrownianConfig {
            horizon: t - s,
            dim: n,
            ..cfg.clone()
        };
        let ens = simulate_ensemble(m, u0, &run)?;
        ens.states
            .par_iter()
            .map(|state| match state {
                Some(q) => FramePoint::from_coords(n, q.as_slice())
                    .map(|u| contribution(&u))
                    .unwrap_or(0.0),
                None => 0.0,
            })
            .collect()
    };
    let hits = weights.iter().filter(|&&w| w > 0.0).count();
    let p_hat = weights.iter().sum::<f64>() / weights.len() as f64;
    let std_error = if weights.len() == 1 {
        0.0
    } else {
        batch_std_error(&weights)
    };
    Ok(DensityEstimate {
        y: y.to_vec(),
        t,
        p_hat,
        bandwidth: s.sqrt(),
        n_samples: weights.len(),
        std_error,
        unreliable: hits == 0,
    })
}
