//! Frame-bundle coordinates `(x, α)`, horizontal vector fields, the
//! projection `Σ` to precision tensors, and deterministic development.
//!
//! Frames are stored column-wise: column `i` of `alpha` holds the chart
//! components of frame vector `u_i`. Flattened frame-bundle coordinates are
//! `q = (x, vec(α))` with `vec` column-major, so `q[n + i·n + j] = α^j_i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::geodesic::{exit_at, transport_along};
use crate::geometry::ChartManifold;
use crate::ode::rk4_step;
use crate::path::SampledPath;

pub const MIN_FRAME_DET: f64 = 1e-12;
/// Integration aborts below this `|det α|`.
pub const DEGENERATE_FRAME_DET: f64 = 1e-10;
pub const MIN_SIGMA_EIGENVALUE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FramePoint {
    pub x: DVector<f64>,
    pub alpha: DMatrix<f64>,
}

impl FramePoint {
    pub fn new(x: DVector<f64>, alpha: DMatrix<f64>) -> Result<Self> {
        let n = x.len();
        if alpha.nrows() != n || alpha.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: alpha.nrows(),
            });
        }
        let det = alpha.determinant();
        if !(det.abs() > MIN_FRAME_DET) {
            return Err(Error::InvalidFrame { det });
        }
        Ok(Self { x, alpha })
    }

    /// Frame given by its matrix rows, as written in configuration files.
    pub fn from_rows(x: &[f64], rows: &[Vec<f64>]) -> Result<Self> {
        let n = x.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: rows.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(
            DVector::from_column_slice(x),
            DMatrix::from_row_slice(n, n, &flat),
        )
    }

    /// Frame that is orthonormal for `g(x)`: the lower Cholesky factor of
    /// `g(x)^{-1}`.
    pub fn orthonormal(m: &ChartManifold, x: &[f64]) -> Result<Self> {
        let ginv = m.metric_inverse(x)?;
        let l = ginv
            .cholesky()
            .ok_or_else(|| Error::SingularMetric { point: x.to_vec() })?
            .l();
        Self::new(DVector::from_column_slice(x), l)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn coords(&self) -> DVector<f64> {
        let n = self.dim();
        let mut q = DVector::zeros(n + n * n);
        q.rows_mut(0, n).copy_from(&self.x);
        q.rows_mut(n, n * n).copy_from_slice(self.alpha.as_slice());
        q
    }

    pub fn from_coords(n: usize, q: &[f64]) -> Result<Self> {
        if q.len() != n + n * n {
            return Err(Error::Dimension {
                expected: n + n * n,
                got: q.len(),
            });
        }
        Self::new(
            DVector::from_column_slice(&q[..n]),
            DMatrix::from_column_slice(n, n, &q[n..]),
        )
    }

    /// `β = α^{-1}`, the coframe.
    pub fn beta(&self) -> DMatrix<f64> {
        self.alpha
            .clone()
            .try_inverse()
            .expect("frame invariant: alpha invertible")
    }

    /// Gram matrix `g(u_i, u_j)`.
    pub fn gram(&self, m: &ChartManifold) -> Result<DMatrix<f64>> {
        let g = m.metric(self.x.as_slice())?;
        Ok(self.alpha.transpose() * g * &self.alpha)
    }
}

/// Precision tensor `σ_ij = σ(∂_i, ∂_j)` over a base point.
#[derive(Clone, Debug, PartialEq)]
pub struct SymPoint {
    pub x: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl SymPoint {
    pub fn new(x: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = x.len();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: sigma.nrows(),
            });
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-10 * sigma.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        if !(sigma.symmetric_eigenvalues().min() > MIN_SIGMA_EIGENVALUE) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { x, sigma })
    }

    /// A frame over `self`: `(x, chol(σ^{-1}))` with the lower-triangular
    /// factor. Any other lift differs by a right `O(n)` action.
    pub fn lift(&self) -> Result<FramePoint> {
        let cov = self
            .sigma
            .clone()
            .try_inverse()
            .ok_or(Error::NotPositiveDefinite)?;
        let cov = (&cov + cov.transpose()) * 0.5;
        let l = cov.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        FramePoint::new(self.x.clone(), l)
    }

    /// `σ^{-1}`, the covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.sigma.clone().try_inverse().expect("positive definite")
    }
}

/// `Σ(x, α) = (x, (α αᵀ)^{-1})`.
pub fn sigma_of(u: &FramePoint) -> Result<SymPoint> {
    let cov = &u.alpha * u.alpha.transpose();
    let sigma = cov.try_inverse().ok_or(Error::InvalidFrame {
        det: u.alpha.determinant(),
    })?;
    SymPoint::new(u.x.clone(), (&sigma + sigma.transpose()) * 0.5)
}

/// Right action of `GL(n)`: `(x, α) · a = (x, α a)`.
pub fn act(u: &FramePoint, a: &DMatrix<f64>) -> Result<FramePoint> {
    let n = u.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: a.nrows(),
        });
    }
    if !(a.determinant().abs() > MIN_FRAME_DET) {
        return Err(Error::SingularAction);
    }
    FramePoint::new(u.x.clone(), &u.alpha * a)
}

/// `Σ_i ξ^i H_i(q)` written into `out` (length `n + n²`): base part `α ξ`,
/// fiber part `dα^k_m = −v^j Γ^k_{jl} α^l_m` with `v = α ξ`.
pub(crate) fn horizontal_field(
    m: &ChartManifold,
    q: &[f64],
    xi: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = m.dim();
    let (x, a) = q.split_at(n);
    let gamma = m.christoffel(x)?;
    let (dx, da) = out.split_at_mut(n);
    for (j, v) in dx.iter_mut().enumerate() {
        *v = (0..n).map(|i| a[i * n + j] * xi[i]).sum();
    }
    for mm in 0..n {
        let col = &a[mm * n..(mm + 1) * n];
        for k in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if dx[j] == 0.0 {
                    continue;
                }
                for l in 0..n {
                    s += dx[j] * gamma.get(k, j, l) * col[l];
                }
            }
            da[mm * n + k] = -s;
        }
    }
    Ok(())
}

/// The horizontal fields `H_1..H_n` at `u`, as the columns of an
/// `(n + n²) × n` matrix.
pub fn horizontal_basis(m: &ChartManifold, u: &FramePoint) -> Result<DMatrix<f64>> {
    let n = u.dim();
    m.check_domain(u.x.as_slice())?;
    let q = u.coords();
    let big = n + n * n;
    let mut h = DMatrix::zeros(big, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; big];
    for i in 0..n {
        e[i] = 1.0;
        horizontal_field(m, q.as_slice(), &e, &mut col)?;
        h.set_column(i, &DVector::from_column_slice(&col));
        e[i] = 0.0;
    }
    Ok(h)
}

pub(crate) fn frame_det(n: usize, q: &[f64]) -> f64 {
    DMatrix::from_column_slice(n, n, &q[n..n + n * n]).determinant()
}

pub(crate) fn check_state(m: &ChartManifold, n: usize, q: &[f64], time: f64) -> Result<()> {
    if !m.in_domain(&q[..n]) {
        return Err(Error::ChartExit { time });
    }
    let det = frame_det(n, q);
    if !(det.abs() > DEGENERATE_FRAME_DET) {
        return Err(Error::FrameDegenerate { time, det });
    }
    Ok(())
}

/// Development of a piecewise-linear driving path `w` (with `w(0) = 0`):
/// solves `η̇ = H_i(η) ẇ^i` by one RK4 step per driving segment.
pub fn develop(m: &ChartManifold, u0: &FramePoint, w: &SampledPath) -> Result<SampledPath> {
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
    let mut q: Vec<f64> = u0.coords().as_slice().to_vec();
    let mut values = Vec::with_capacity(w.len());
    values.push(DVector::from_column_slice(&q));
    for (k, seg) in w.values.windows(2).enumerate() {
        let dw = &seg[1] - &seg[0];
        let t0 = w.times[k];
        let mut rhs = |y: &[f64], out: &mut [f64]| horizontal_field(m, y, dw.as_slice(), out);
        q = rk4_step(&mut rhs, &q, 1.0).map_err(|e| exit_at(e, t0))?;
        check_state(m, n, &q, w.times[k + 1])?;
        values.push(DVector::from_column_slice(&q));
    }
    Ok(SampledPath {
        times: w.times.clone(),
        values,
    })
}

/// Horizontal lift of a base path: frames parallel-transported from `u0`.
pub fn horizontal_lift(
    m: &ChartManifold,
    u0: &FramePoint,
    gamma: &SampledPath,
) -> Result<SampledPath> {
    let frames = transport_along(m, gamma, &u0.alpha)?;
    let values = gamma
        .values
        .iter()
        .zip(frames)
        .map(|(x, a)| {
            FramePoint {
                x: x.clone(),
                alpha: a,
            }
            .coords()
        })
        .collect();
    Ok(SampledPath {
        times: gamma.times.clone(),
        values,
    })
}

/// Anti-development: transports the frame along `gamma` and accumulates
/// `dw = u(t)^{-1} γ̇ dt`, the base path interpolated linearly between nodes.
pub fn antidevelop(m: &ChartManifold, u0: &FramePoint, gamma: &SampledPath) -> Result<SampledPath> {
    let n = u0.dim();
    if gamma.value_dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: gamma.value_dim(),
        });
    }
    if (gamma.start() - &u0.x).amax() > 1e-9 {
        return Err(Error::InvalidArgument(
            "path must start at the base point of the frame".into(),
        ));
    }
    // state = (vec α, w, s)
    let nn = n * n;
    let mut state: Vec<f64> = u0.alpha.as_slice().to_vec();
    state.extend(std::iter::repeat_n(0.0, n));
    let mut values = Vec::with_capacity(gamma.len());
    values.push(DVector::zeros(n));
    let mut tmp = vec![0.0; n];
    for (seg, pts) in gamma.values.windows(2).enumerate() {
        let (a, b) = (&pts[0], &pts[1]);
        let dx = b - a;
        state.push(0.0);
        let mut rhs = |y: &[f64], dy: &mut [f64]| -> Result<()> {
            let s = y[nn + n];
            let x: Vec<f64> = (0..n).map(|i| a[i] + s * dx[i]).collect();
            let g = m.christoffel(&x)?;
            for c in 0..n {
                g.contract(dx.as_slice(), &y[c * n..(c + 1) * n], &mut tmp);
                for i in 0..n {
                    dy[c * n + i] = -tmp[i];
                }
            }
            let alpha = DMatrix::from_column_slice(n, n, &y[..nn]);
            let inc = alpha
                .lu()
                .solve(&dx)
                .ok_or(Error::InvalidFrame { det: 0.0 })?;
            dy[nn..nn + n].copy_from_slice(inc.as_slice());
            dy[nn + n] = 1.0;
            Ok(())
        };
        state = rk4_step(&mut rhs, &state, 1.0).map_err(|e| exit_at(e, gamma.times[seg]))?;
        state.pop();
        values.push(DVector::from_column_slice(&state[nn..nn + n]));
    }
    Ok(SampledPath {
        times: gamma.times.clone(),
        values,
    })
}
