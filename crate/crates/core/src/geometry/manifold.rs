use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type MetricFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type DomainFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
pub type ChristoffelFn = Arc<dyn Fn(&[f64]) -> Christoffel + Send + Sync>;
pub type DistanceFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Christoffel symbols of the second kind, `get(k, i, j) = Γ^k_{ij}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.n + i) * self.n + j] = v;
    }

    /// Sets `Γ^k_{ij}` and `Γ^k_{ji}`.
    pub fn set_sym(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.set(k, i, j, v);
        self.set(k, j, i, v);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `a^k = Γ^k_{ij} u^i v^j`.
    pub fn contract(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.get(k, i, j) * u[i] * v[j];
                }
            }
            *o = s;
        }
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// How the Levi-Civita symbols are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChristoffelMode {
    Analytic,
    FiniteDifference,
}

/// A Riemannian metric on a single coordinate chart.
///
/// Immutable after construction; clones share the underlying closures.
#[derive(Clone)]
pub struct ChartManifold {
    name: String,
    dim: usize,
    metric: MetricFn,
    domain: DomainFn,
    christoffel: Option<ChristoffelFn>,
    distance: Option<DistanceFn>,
    fd_step: f64,
}

impl fmt::Debug for ChartManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartManifold")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("christoffel_mode", &self.christoffel_mode())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl ChartManifold {
    /// Metric-only manifold; Christoffels come from central differences.
    pub fn new<M, D>(name: impl Into<String>, dim: usize, metric: M, domain: D) -> Self
    where
        M: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        D: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        assert!(dim > 0, "chart dimension must be positive");
        Self {
            name: name.into(),
            dim,
            metric: Arc::new(metric),
            domain: Arc::new(domain),
            christoffel: None,
            distance: None,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn with_christoffel<C>(mut self, c: C) -> Self
    where
        C: Fn(&[f64]) -> Christoffel + Send + Sync + 'static,
    {
        self.christoffel = Some(Arc::new(c));
        self
    }

    /// Closed-form geodesic distance, used only where a fast distance is
    /// requested (kernel density estimation).
    pub fn with_distance<F>(mut self, d: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.distance = Some(Arc::new(d));
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        assert!(h > 0.0);
        self.fd_step = h;
        self
    }

    /// Drops analytic Christoffels so that the finite-difference path is used.
    pub fn without_analytic_christoffel(mut self) -> Self {
        self.christoffel = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn christoffel_mode(&self) -> ChristoffelMode {
        if self.christoffel.is_some() {
            ChristoffelMode::Analytic
        } else {
            ChristoffelMode::FiniteDifference
        }
    }

    pub fn has_closed_form_distance(&self) -> bool {
        self.distance.is_some()
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().all(|v| v.is_finite()) && (self.domain)(x)
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        if !self.in_domain(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(())
    }

    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        Ok((self.metric)(x))
    }

    /// Metric without the domain check, for stencils that may straddle the
    /// chart boundary by a finite-difference step.
    pub(crate) fn metric_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        (self.metric)(x)
    }

    pub fn metric_inverse(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.metric(x)?;
        g.try_inverse()
            .ok_or_else(|| Error::SingularMetric { point: x.to_vec() })
    }

    pub fn inner(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        let g = self.metric(x)?;
        let u = DVector::from_column_slice(u);
        let v = DVector::from_column_slice(v);
        Ok(u.dot(&(&g * v)))
    }

    pub fn norm(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        Ok(self.inner(x, v, v)?.max(0.0).sqrt())
    }

    pub fn sqrt_det_metric(&self, x: &[f64]) -> Result<f64> {
        let d = self.metric(x)?.determinant();
        if d <= 0.0 {
            return Err(Error::SingularMetric { point: x.to_vec() });
        }
        Ok(d.sqrt())
    }

    /// `Γ^k_{ij}(x)`, analytic when supplied.
    pub fn christoffel(&self, x: &[f64]) -> Result<Christoffel> {
        self.check_domain(x)?;
        match &self.christoffel {
            Some(c) => Ok(c(x)),
            None => self.christoffel_fd(x),
        }
    }

    /// Γ from central differences of the metric, regardless of mode.
    pub fn christoffel_fd(&self, x: &[f64]) -> Result<Christoffel> {
        self.check_domain(x)?;
        self.christoffel_fd_unchecked(x)
    }

    /// Christoffels without the domain check, for difference stencils that
    /// may reach a step beyond the chart boundary.
    pub(crate) fn christoffel_unchecked(&self, x: &[f64]) -> Result<Christoffel> {
        match &self.christoffel {
            Some(c) => Ok(c(x)),
            None => self.christoffel_fd_unchecked(x),
        }
    }

    fn christoffel_fd_unchecked(&self, x: &[f64]) -> Result<Christoffel> {
        let n = self.dim;
        let h = self.fd_step;
        let ginv = self
            .metric_unchecked(x)
            .try_inverse()
            .ok_or_else(|| Error::SingularMetric { point: x.to_vec() })?;
        // dg[l][i][j] = ∂_l g_ij
        let mut dg = vec![DMatrix::<f64>::zeros(n, n); n];
        let mut xp = x.to_vec();
        for (l, d) in dg.iter_mut().enumerate() {
            xp[l] = x[l] + h;
            let gp = self.metric_unchecked(&xp);
            xp[l] = x[l] - h;
            let gm = self.metric_unchecked(&xp);
            xp[l] = x[l];
            *d = (gp - gm) / (2.0 * h);
        }
        let mut gamma = Christoffel::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    gamma.set_sym(k, i, j, 0.5 * s);
                }
            }
        }
        Ok(gamma)
    }

    /// Geodesic distance: closed form when the manifold ships one, shooting
    /// otherwise.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match &self.distance {
            Some(d) => {
                self.check_domain(x)?;
                self.check_domain(y)?;
                Ok(d(x, y))
            }
            None => super::geodesic::geodesic_distance(
                self,
                x,
                y,
                &super::geodesic::ShootingOptions::default(),
            ),
        }
    }

    /// Smallest eigenvalue of g(x); positive on a valid chart.
    pub fn min_metric_eigenvalue(&self, x: &[f64]) -> Result<f64> {
        let g = self.metric(x)?;
        Ok(g.symmetric_eigenvalues().min())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::registry;

    #[test]
    fn christoffel_symmetric_in_lower_indices() {
        let m = registry::ellipsoid(1.0, 0.8, 0.6);
        let g = m.christoffel(&[0.9, 0.4]).unwrap();
        for k in 0..2 {
            assert_eq!(g.get(k, 0, 1), g.get(k, 1, 0));
        }
        let fd = m.christoffel_fd(&[0.9, 0.4]).unwrap();
        for k in 0..2 {
            assert!((fd.get(k, 0, 1) - fd.get(k, 1, 0)).abs() < 1e-14);
        }
    }

    #[test]
    fn outside_domain_is_an_error() {
        let m = registry::sphere(1.0);
        assert!(matches!(
            m.christoffel(&[0.0, 0.0]),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(matches!(
            m.christoffel(&[1.0]),
            Err(Error::Dimension { .. })
        ));
    }
}
