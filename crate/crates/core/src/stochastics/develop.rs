use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::rng::IncrementStream;
use crate::error::{Error, Result};
use crate::framebundle::{check_state, horizontal_field, FramePoint};
use crate::geometry::ChartManifold;
use crate::path::{fmt_f64, SampledPath};

/// Discard fraction above which an ensemble carries a warning.
pub const DISCARD_WARNING: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BrownianConfig {
    pub dim: usize,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub n_paths: usize,
}

impl BrownianConfig {
    pub fn new(dim: usize, horizon: f64, steps: usize, seed: u64, n_paths: usize) -> Result<Self> {
        let cfg = Self {
            dim,
            horizon,
            steps,
            seed,
            n_paths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Brownian path number `index` of the configuration.
pub fn brownian_path(cfg: &BrownianConfig, index: u64) -> SampledPath {
    let n = cfg.dim;
    let sd = cfg.dt().sqrt();
    let mut stream = IncrementStream::new(cfg.seed, index, n);
    let mut z = vec![0.0; n];
    let mut w = DVector::zeros(n);
    let mut values = Vec::with_capacity(cfg.steps + 1);
    values.push(w.clone());
    for _ in 0..cfg.steps {
        stream.next_step(&mut z);
        for (wi, zi) in w.iter_mut().zip(&z) {
            *wi += sd * zi;
        }
        values.push(w.clone());
    }
    SampledPath {
        times: SampledPath::uniform_times(cfg.horizon, cfg.steps),
        values,
    }
}

/// `cfg.n_paths` Brownian paths in `R^n`.
pub fn sample_bm(cfg: &BrownianConfig) -> Result<Vec<SampledPath>> {
    cfg.validate()?;
    Ok((0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| brownian_path(cfg, i))
        .collect())
}

/// One Heun step of `dU = H_i(U) ∘ dW^i`.
fn heun_step(
    m: &ChartManifold,
    q: &mut [f64],
    dw: &[f64],
    k1: &mut [f64],
    k2: &mut [f64],
    pred: &mut [f64],
) -> Result<()> {
    heun_substeps(m, q, dw, k1, k2, pred, 0)
}

/// Base-coordinate disagreement between predictor and corrector above which
/// an increment is split in two.
const SPLIT_TOL: f64 = 1e-4;
const MAX_SPLIT_DEPTH: usize = 10;

/// Heun step along the linear interpolation of `dw`, halving the increment
/// while the base components of the two stages disagree by more than
/// [`SPLIT_TOL`]. Only base components enter the test, so the splitting is
/// the same for `(u·a, a⁻¹dw)` and `(u, dw)`.
fn heun_substeps(
    m: &ChartManifold,
    q: &mut [f64],
    dw: &[f64],
    k1: &mut [f64],
    k2: &mut [f64],
    pred: &mut [f64],
    depth: usize,
) -> Result<()> {
    let n = dw.len();
    horizontal_field(m, q, dw, k1)?;
    for ((p, a), b) in pred.iter_mut().zip(q.iter()).zip(k1.iter()) {
        *p = a + b;
    }
    let split = depth < MAX_SPLIT_DEPTH
        && match horizontal_field(m, pred, dw, k2) {
            Ok(()) => (0..n).any(|i| (k2[i] - k1[i]).abs() > SPLIT_TOL),
            Err(_) => true,
        };
    if split {
        let half: Vec<f64> = dw.iter().map(|d| 0.5 * d).collect();
        heun_substeps(m, q, &half, k1, k2, pred, depth + 1)?;
        return heun_substeps(m, q, &half, k1, k2, pred, depth + 1);
    }
    if depth == MAX_SPLIT_DEPTH {
        horizontal_field(m, pred, dw, k2)?;
    }
    for ((a, b), c) in q.iter_mut().zip(k1.iter()).zip(k2.iter()) {
        *a += 0.5 * (b + c);
    }
    Ok(())
}

fn map_exit(e: Error, time: f64) -> Error {
    match e {
        Error::OutsideDomain { .. } => Error::ChartExit { time },
        e => e,
    }
}

/// Stratonovich development of a sampled driving path by Heun's
/// predictor–corrector, one step per sample interval.
pub fn stochastic_develop(
    m: &ChartManifold,
    u0: &FramePoint,
    w: &SampledPath,
) -> Result<SampledPath> {
    let n = u0.dim();
    m.check_domain(u0.x.as_slice())?;
    if w.value_dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: w.value_dim(),
        });
    }
    if w.start().amax() > 1e-12 {
        return Err(Error::InvalidArgument(
            "driving path must start at 0".into(),
        ));
    }
    let big = n + n * n;
    let mut q = u0.coords().as_slice().to_vec();
    let (mut k1, mut k2, mut pred) = (vec![0.0; big], vec![0.0; big], vec![0.0; big]);
    let mut values = Vec::with_capacity(w.len());
    values.push(DVector::from_column_slice(&q));
    for (k, seg) in w.values.windows(2).enumerate() {
        let dw = &seg[1] - &seg[0];
        heun_step(m, &mut q, dw.as_slice(), &mut k1, &mut k2, &mut pred)
            .map_err(|e| map_exit(e, w.times[k]))?;
        check_state(m, n, &q, w.times[k + 1])?;
        values.push(DVector::from_column_slice(&q));
    }
    Ok(SampledPath {
        times: w.times.clone(),
        values,
    })
}

/// Final frame-bundle state of path `index`, driven by `noise_map · W`.
fn develop_endpoint(
    m: &ChartManifold,
    q0: &[f64],
    cfg: &BrownianConfig,
    index: u64,
    noise_map: Option<&DMatrix<f64>>,
) -> Result<Vec<f64>> {
    let n = cfg.dim;
    let big = n + n * n;
    let dt = cfg.dt();
    let sd = dt.sqrt();
    let mut stream = IncrementStream::new(cfg.seed, index, n);
    let mut q = q0.to_vec();
    let (mut k1, mut k2, mut pred) = (vec![0.0; big], vec![0.0; big], vec![0.0; big]);
    let mut z = vec![0.0; n];
    let mut dw = vec![0.0; n];
    for k in 0..cfg.steps {
        stream.next_step(&mut z);
        match noise_map {
            Some(a) => {
                for (i, d) in dw.iter_mut().enumerate() {
                    *d = sd * (0..n).map(|j| a[(i, j)] * z[j]).sum::<f64>();
                }
            }
            None => {
                for (d, zi) in dw.iter_mut().zip(&z) {
                    *d = sd * zi;
                }
            }
        }
        let t = dt * k as f64;
        heun_step(m, &mut q, &dw, &mut k1, &mut k2, &mut pred).map_err(|e| map_exit(e, t))?;
        check_state(m, n, &q, t + dt)?;
    }
    Ok(q)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscardStats {
    pub n_paths: usize,
    pub n_discarded: usize,
    pub fraction: f64,
    /// Set when more than [`DISCARD_WARNING`] of the paths were discarded.
    pub warning: bool,
}

impl DiscardStats {
    fn new(n_paths: usize, n_discarded: usize) -> Self {
        let fraction = if n_paths == 0 {
            0.0
        } else {
            n_discarded as f64 / n_paths as f64
        };
        Self {
            n_paths,
            n_discarded,
            fraction,
            warning: fraction > DISCARD_WARNING,
        }
    }
}

/// Final frame-bundle states of an ensemble; `None` marks a discarded path
/// (chart exit or frame degeneration).
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub dim: usize,
    pub states: Vec<Option<DVector<f64>>>,
    pub stats: DiscardStats,
}

impl Ensemble {
    fn from_states(dim: usize, states: Vec<Option<DVector<f64>>>) -> Self {
        let discarded = states.iter().filter(|s| s.is_none()).count();
        Self {
            dim,
            stats: DiscardStats::new(states.len(), discarded),
            states,
        }
    }

    /// Base endpoints of the kept paths, in path order.
    pub fn endpoints(&self) -> Vec<DVector<f64>> {
        self.states
            .iter()
            .flatten()
            .map(|q| q.rows(0, self.dim).into_owned())
            .collect()
    }

    /// Final frames of the kept paths.
    pub fn frames(&self) -> Vec<FramePoint> {
        self.states
            .iter()
            .flatten()
            .map(|q| {
                FramePoint::from_coords(self.dim, q.as_slice()).expect("kept states are valid")
            })
            .collect()
    }

    /// CSV with header `path_id,x1..xn,discarded`; discarded rows carry NaN.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.dim;
        let cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        writeln!(out, "path_id,{},discarded", cols.join(","))?;
        for (i, s) in self.states.iter().enumerate() {
            let (xs, flag) = match s {
                Some(q) => (q.iter().take(n).map(|v| fmt_f64(*v)).collect::<Vec<_>>(), 0),
                None => (vec!["NaN".to_string(); n], 1),
            };
            writeln!(out, "{i},{},{flag}", xs.join(","))?;
        }
        Ok(())
    }

    /// Sample mean and covariance of the kept endpoints, in chart
    /// coordinates.
    pub fn endpoint_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        sample_moments(&self.endpoints())
    }
}

pub fn sample_moments(points: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = points.first().map_or(0, |p| p.len());
    let count = points.len().max(1) as f64;
    let mean = points.iter().fold(DVector::zeros(n), |a, p| a + p) / count;
    let cov = points.iter().fold(DMatrix::zeros(n, n), |a, p| {
        let d = p - &mean;
        a + &d * d.transpose()
    }) / (points.len().saturating_sub(1).max(1) as f64);
    (mean, cov)
}

fn run(
    m: &ChartManifold,
    u0: &FramePoint,
    cfg: &BrownianConfig,
    indices: std::ops::Range<u64>,
    noise_map: Option<&DMatrix<f64>>,
) -> Result<Vec<Option<DVector<f64>>>> {
    cfg.validate()?;
    if cfg.dim != m.dim() || u0.dim() != m.dim() {
        return Err(Error::Dimension {
            expected: m.dim(),
            got: if cfg.dim != m.dim() {
                cfg.dim
            } else {
                u0.dim()
            },
        });
    }
    m.check_domain(u0.x.as_slice())?;
    let q0 = u0.coords().as_slice().to_vec();
    Ok(indices
        .into_par_iter()
        .map(|i| {
            develop_endpoint(m, &q0, cfg, i, noise_map)
                .ok()
                .map(DVector::from_vec)
        })
        .collect())
}

/// Endpoints of `cfg.n_paths` developed Brownian paths from `u0`.
pub fn simulate_ensemble(
    m: &ChartManifold,
    u0: &FramePoint,
    cfg: &BrownianConfig,
) -> Result<Ensemble> {
    let states = run(m, u0, cfg, 0..cfg.n_paths as u64, None)?;
    Ok(Ensemble::from_states(cfg.dim, states))
}

/// As [`simulate_ensemble`] with each driving path replaced by `a · W`;
/// `(u0·a, a^{-1}W)` and `(u0, W)` have the same base paths.
pub fn simulate_ensemble_mapped(
    m: &ChartManifold,
    u0: &FramePoint,
    cfg: &BrownianConfig,
    a: &DMatrix<f64>,
) -> Result<Ensemble> {
    if a.nrows() != cfg.dim || a.ncols() != cfg.dim {
        return Err(Error::Dimension {
            expected: cfg.dim,
            got: a.nrows(),
        });
    }
    let states = run(m, u0, cfg, 0..cfg.n_paths as u64, Some(a))?;
    Ok(Ensemble::from_states(cfg.dim, states))
}

/// Ensemble over the path indices `range`, for callers that extend a run.
pub(crate) fn simulate_range(
    m: &ChartManifold,
    u0: &FramePoint,
    cfg: &BrownianConfig,
    range: std::ops::Range<u64>,
) -> Result<Vec<Option<DVector<f64>>>> {
    run(m, u0, cfg, range, None)
}
