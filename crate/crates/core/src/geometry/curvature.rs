use nalgebra::DMatrix;

use super::manifold::{ChartManifold, Christoffel, ChristoffelMode};
use crate::error::Result;

/// Step for differencing the Christoffel field. Analytic symbols tolerate a
/// small step; symbols that are already differences need a larger one.
pub(crate) fn christoffel_diff_step(m: &ChartManifold) -> f64 {
    match m.christoffel_mode() {
        ChristoffelMode::Analytic => 1e-5,
        ChristoffelMode::FiniteDifference => 1e-4,
    }
}

/// `out[r] = ∂_r Γ` by central differences.
pub fn christoffel_derivative(m: &ChartManifold, x: &[f64]) -> Result<Vec<Christoffel>> {
    m.check_domain(x)?;
    christoffel_derivative_with_step(m, x, christoffel_diff_step(m))
}

pub(crate) fn christoffel_derivative_with_step(
    m: &ChartManifold,
    x: &[f64],
    h: f64,
) -> Result<Vec<Christoffel>> {
    let n = m.dim();
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        xp[r] = x[r] + h;
        let gp = m.christoffel_unchecked(&xp)?;
        xp[r] = x[r] - h;
        let gm = m.christoffel_unchecked(&xp)?;
        xp[r] = x[r];
        let mut d = Christoffel::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d.set(k, i, j, (gp.get(k, i, j) - gm.get(k, i, j)) / (2.0 * h));
                }
            }
        }
        out.push(d);
    }
    Ok(out)
}

/// Riemann tensor `R^l_{kij}`, the components of `R(∂_i, ∂_j)∂_k`, with
/// `R(X,Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_[X,Y]`. This is the convention under which
/// the round unit sphere has scalar curvature +2.
#[derive(Clone, Debug)]
pub struct Riemann {
    n: usize,
    data: Vec<f64>,
}

impl Riemann {
    #[inline]
    pub fn get(&self, l: usize, k: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.data[((l * n + k) * n + i) * n + j]
    }

    fn set(&mut self, l: usize, k: usize, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.data[((l * n + k) * n + i) * n + j] = v;
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

pub fn curvature(m: &ChartManifold, x: &[f64]) -> Result<Riemann> {
    let n = m.dim();
    let gamma = m.christoffel(x)?;
    let dgamma = christoffel_derivative(m, x)?;
    let mut r = Riemann {
        n,
        data: vec![0.0; n * n * n * n],
    };
    for l in 0..n {
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = dgamma[i].get(l, j, k) - dgamma[j].get(l, i, k);
                    for mm in 0..n {
                        v += gamma.get(l, i, mm) * gamma.get(mm, j, k)
                            - gamma.get(l, j, mm) * gamma.get(mm, i, k);
                    }
                    r.set(l, k, i, j, v);
                }
            }
        }
    }
    Ok(r)
}

/// Ricci tensor `Ric_{kj} = R^i_{kij}`.
pub fn ricci(m: &ChartManifold, x: &[f64]) -> Result<DMatrix<f64>> {
    let r = curvature(m, x)?;
    let n = m.dim();
    Ok(DMatrix::from_fn(n, n, |k, j| {
        (0..n).map(|i| r.get(i, k, i, j)).sum()
    }))
}

/// `S = g^{kj} Ric_{kj}`.
pub fn scalar_curvature(m: &ChartManifold, x: &[f64]) -> Result<f64> {
    let ric = ricci(m, x)?;
    let ginv = m.metric_inverse(x)?;
    Ok(ginv.component_mul(&ric).sum())
}

/// The curvature map `Λ²T_xM → so(n)`, `e_i∧e_j ↦ R(e_i, e_j)`, as an
/// `n(n−1)/2` square matrix. Rows index the antisymmetric part `R_{lk··}`,
/// `l < k`, of the lowered endomorphism; columns index `i < j`.
pub fn curvature_map_matrix(m: &ChartManifold, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = m.dim();
    let r = curvature(m, x)?;
    let g = m.metric(x)?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    let lowered = |l: usize, k: usize, i: usize, j: usize| -> f64 {
        (0..n).map(|a| g[(l, a)] * r.get(a, k, i, j)).sum()
    };
    Ok(DMatrix::from_fn(pairs.len(), pairs.len(), |row, col| {
        let (l, k) = pairs[row];
        let (i, j) = pairs[col];
        lowered(l, k, i, j)
    }))
}

pub const RANK_THRESHOLD: f64 = 1e-8;

/// Numerical rank: singular values above `tol · max(1, σ_max)`.
pub fn numerical_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().singular_values();
    let scale = sv.max().max(1.0);
    sv.iter().filter(|&&s| s > tol * scale).count()
}

/// Rank of the curvature map; equal to `n(n−1)/2` when it is injective.
pub fn curvature_map_rank(m: &ChartManifold, x: &[f64]) -> Result<usize> {
    Ok(numerical_rank(&curvature_map_matrix(m, x)?, RANK_THRESHOLD))
}
