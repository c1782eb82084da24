use std::io::Write;

use serde::Serialize;

use super::density::{default_bandwidth, estimate_density, transition_density, DensityEstimate};
use super::develop::{simulate_ensemble, BrownianConfig};
use crate::error::{Error, Result};
use crate::framebundle::{sigma_of, FramePoint};
use crate::geometry::ChartManifold;
use crate::path::fmt_f64;
use crate::subriemannian::{dist_sym, FiberShootingOptions};

/// Relative standard error above which a row is flagged.
pub const FLAG_RELATIVE_ERROR: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum DensityMethod {
    /// Gaussian final step of fraction `last_fraction` of the horizon.
    Transition { last_fraction: f64 },
    /// Kernel estimate from endpoints; `None` uses the reference bandwidth.
    Kernel { bandwidth: Option<f64> },
}

impl Default for DensityMethod {
    fn default() -> Self {
        DensityMethod::Transition {
            last_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiagnosticConfig {
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub method: DensityMethod,
    pub shooting: FiberShootingOptions,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            steps: 100,
            seed: 0,
            method: DensityMethod::default(),
            shooting: FiberShootingOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub neg2tlogp: f64,
    pub d2: f64,
    pub ratio: f64,
    /// Standard error of `ratio`, propagated from the density estimate.
    pub stderr: f64,
    pub flagged: bool,
    #[serde(skip)]
    pub estimate: DensityEstimate,
}

/// Table of `(t, −2t log p̂_t(y), d², ratio)` with `d` the fiber distance
/// `d_{Sym⁺M}(Σ(u0), y)`. The ratio tends to 1 as `t ↓ 0`.
pub fn small_time_diagnostic(
    m: &ChartManifold,
    u0: &FramePoint,
    y: &[f64],
    t_list: &[f64],
    cfg: &DiagnosticConfig,
) -> Result<Vec<DiagnosticRow>> {
    if (&u0.x - nalgebra::DVector::from_column_slice(y)).amax() == 0.0 {
        return Err(Error::InvalidArgument(
            "query point must differ from the base point".into(),
        ));
    }
    if t_list.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("times must be positive".into()));
    }
    let d = dist_sym(m, &sigma_of(u0)?, y, &cfg.shooting)?;
    let d2 = d * d;
    t_list
        .iter()
        .map(|&t| {
            let brownian = BrownianConfig::new(m.dim(), t, cfg.steps, cfg.seed, cfg.n_paths)?;
            let estimate = match &cfg.method {
                DensityMethod::Transition { last_fraction } => {
                    transition_density(m, u0, y, t, &brownian, *last_fraction)?
                }
                DensityMethod::Kernel { bandwidth } => {
                    let samples = simulate_ensemble(m, u0, &brownian)?.endpoints();
                    if samples.is_empty() {
                        return Err(Error::NonConvergence {
                            what: "ensemble (all paths discarded)",
                            residual: 1.0,
                        });
                    }
                    let h = bandwidth.unwrap_or_else(|| default_bandwidth(&samples));
                    estimate_density(m, &samples, y, t, h)?
                }
            };
            Ok(row(t, d2, estimate))
        })
        .collect()
}

fn row(t: f64, d2: f64, estimate: DensityEstimate) -> DiagnosticRow {
    let rel = estimate.relative_error();
    let neg2tlogp = -2.0 * t * estimate.p_hat.ln();
    DiagnosticRow {
        t,
        neg2tlogp,
        d2,
        ratio: neg2tlogp / d2,
        stderr: 2.0 * t * rel / d2,
        flagged: !(rel < FLAG_RELATIVE_ERROR),
        estimate,
    }
}

/// Exact ratio for a Gaussian in the plane with frame `α`:
/// `1 + (2t log(2πt) + t log det(ααᵀ)) / d²` in two dimensions, with the
/// general `n`-dimensional normalization.
pub fn gaussian_ratio(t: f64, d2: f64, n: usize, det_cov: f64) -> f64 {
    let log_norm = 0.5 * n as f64 * (std::f64::consts::TAU * t).ln() + 0.5 * det_cov.ln();
    1.0 + 2.0 * t * log_norm / d2
}

/// CSV with header `t,neg2tlogp,d2,ratio,stderr,flagged`.
pub fn write_diagnostic_csv<W: Write>(rows: &[DiagnosticRow], mut out: W) -> Result<()> {
    writeln!(out, "t,neg2tlogp,d2,ratio,stderr,flagged")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.neg2tlogp),
            fmt_f64(r.d2),
            fmt_f64(r.ratio),
            fmt_f64(r.stderr),
            u8::from(r.flagged)
        )?;
    }
    Ok(())
}
