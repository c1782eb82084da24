use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use super::dataset::Dataset;
use super::frechet::{det_g, frechet_mean, FrechetOptions};
use crate::error::{Error, Result};
use crate::framebundle::SymPoint;
use crate::geometry::{log_map, ChartManifold};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::path::SampledPath;
use crate::subriemannian::{
    dist_sym_geodesic, shoot_to_fiber_cached, FiberShootingOptions, ShootingCache,
};

#[derive(Clone, Debug)]
pub struct EstimatorOptions {
    /// Objective evaluations for the simplex stage.
    pub max_evals: usize,
    /// Bounds on the eigenvalues of `σ` relative to `g`.
    pub eig_min: f64,
    pub eig_max: f64,
    pub polish_iter: usize,
    pub polish_step: f64,
    /// Newton decrement `gᵀH⁻¹g` (in the optimizer parameters, relative
    /// to `1 + |F|`) accepted as stationary.
    pub decrement_tol: f64,
    /// Starting precision; defaults to the isotropic stationary point at
    /// the Fréchet mean.
    pub initial: Option<SymPoint>,
    pub shooting: FiberShootingOptions,
    pub frechet: FrechetOptions,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            max_evals: 400,
            eig_min: 1e-4,
            eig_max: 1e4,
            polish_iter: 8,
            polish_step: 1e-4,
            decrement_tol: 1e-10,
            initial: None,
            shooting: FiberShootingOptions::default(),
            frechet: FrechetOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EstimateResult {
    pub x_hat: DVector<f64>,
    pub sigma_hat: SymPoint,
    pub objective: f64,
    /// `d_{Sym⁺M}(σ̂, x_i)` per data point.
    pub distances: Vec<f64>,
    /// Initial covectors of the fiber geodesics at the estimate.
    pub covectors: Vec<DVector<f64>>,
    pub iterations: usize,
    pub evals: usize,
    /// Best objective after each optimizer iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    /// The eigenvalue bounds bind at the estimate.
    pub degenerate: bool,
    pub gradient_norm: f64,
}

impl EstimateResult {
    pub fn covariance_hat(&self) -> DMatrix<f64> {
        self.sigma_hat.covariance()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let row_major = |a: &DMatrix<f64>| -> Vec<f64> {
            (0..a.nrows())
                .flat_map(|i| (0..a.ncols()).map(move |j| a[(i, j)]))
                .collect()
        };
        json!({
            "x_hat": self.x_hat.as_slice(),
            "sigma_hat": row_major(&self.sigma_hat.sigma),
            "covariance_hat": row_major(&self.covariance_hat()),
            "objective": self.objective,
            "distances": self.distances,
            "iterations": self.iterations,
            "evals": self.evals,
            "converged": self.converged,
            "degenerate": self.degenerate,
            "gradient_norm": self.gradient_norm,
        })
    }
}

/// `(Σ_i d_i², −(N/2) log det_g σ)`.
pub fn objective_parts(
    m: &ChartManifold,
    distances: &[f64],
    sigma: &SymPoint,
) -> Result<(f64, f64)> {
    let sum: f64 = distances.iter().map(|d| d * d).sum();
    let n = distances.len() as f64;
    Ok((sum, -0.5 * n * det_g(m, sigma)?.ln()))
}

/// Parameters `θ = (x, log diag L, strict lower part of L)` and `σ = L Lᵀ`.
struct Param {
    n: usize,
}

impl Param {
    fn len(&self) -> usize {
        self.n + self.n * (self.n + 1) / 2
    }

    fn lower(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = theta[n + i].exp();
        }
        let mut k = 2 * n;
        for i in 1..n {
            for j in 0..i {
                l[(i, j)] = theta[k];
                k += 1;
            }
        }
        l
    }

    fn encode(&self, x: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n = self.n;
        let l = sigma
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .l();
        let mut theta = DVector::zeros(self.len());
        theta.rows_mut(0, n).copy_from(x);
        for i in 0..n {
            theta[n + i] = l[(i, i)].ln();
        }
        let mut k = 2 * n;
        for i in 1..n {
            for j in 0..i {
                theta[k] = l[(i, j)];
                k += 1;
            }
        }
        Ok(theta)
    }
}

/// Clamps the eigenvalues of `σ` relative to `g` into `[lo, hi]`. Returns
/// the clamped tensor and whether a bound was active.
pub fn clamp_relative_eigenvalues(
    g: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    lo: f64,
    hi: f64,
) -> Result<(DMatrix<f64>, bool)> {
    let r = g.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
    let r_inv = r.clone().try_inverse().ok_or(Error::NotPositiveDefinite)?;
    let a = &r_inv * sigma * r_inv.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigen();
    let mut active = false;
    let vals = eig.eigenvalues.map(|v| {
        if v < lo {
            active = true;
            lo
        } else if v > hi {
            active = true;
            hi
        } else {
            v
        }
    });
    let a = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let s = &r * a * r.transpose();
    Ok(((&s + s.transpose()) * 0.5, active))
}

struct Evaluation {
    value: f64,
    distances: Vec<f64>,
    covectors: Vec<DVector<f64>>,
    sigma: SymPoint,
    clamped: bool,
}

struct Objective<'a> {
    m: &'a ChartManifold,
    data: &'a Dataset,
    opts: &'a EstimatorOptions,
    param: Param,
    shooting: FiberShootingOptions,
    cache: Vec<ShootingCache>,
    evals: usize,
}

impl Objective<'_> {
    fn sigma(&self, theta: &DVector<f64>) -> Result<(SymPoint, bool)> {
        let n = self.param.n;
        let x = theta.rows(0, n).into_owned();
        let g = self.m.metric(x.as_slice())?;
        let l = self.param.lower(theta);
        let (s, clamped) = clamp_relative_eigenvalues(
            &g,
            &(&l * l.transpose()),
            self.opts.eig_min,
            self.opts.eig_max,
        )?;
        Ok((SymPoint::new(x, s)?, clamped))
    }

    fn evaluate(&mut self, theta: &DVector<f64>) -> Result<Evaluation> {
        self.evals += 1;
        let n = self.param.n;
        self.m.check_domain(&theta.as_slice()[..n])?;
        let (sigma, clamped) = self.sigma(theta)?;
        let u = sigma.lift()?;
        let shooting = &self.shooting;
        let m = self.m;
        let results: Vec<_> = self
            .data
            .points
            .par_iter()
            .zip(self.cache.par_iter_mut())
            .map(|(y, cache)| shoot_to_fiber_cached(m, &u, y.as_slice(), cache, shooting))
            .collect::<Result<_>>()?;
        let distances: Vec<f64> = results.iter().map(|r| r.length).collect();
        let covectors: Vec<DVector<f64>> =
            results.into_iter().map(|r| r.initial_covector).collect();
        let (sum, logdet) = objective_parts(self.m, &distances, &sigma)?;
        Ok(Evaluation {
            value: sum + logdet,
            distances,
            covectors,
            sigma,
            clamped,
        })
    }

    fn value(&mut self, theta: &DVector<f64>) -> f64 {
        // Inner shooting failures and chart exits reject the point.
        self.evaluate(theta).map_or(f64::INFINITY, |e| e.value)
    }

    fn gradient_hessian(&mut self, theta: &DVector<f64>, f0: f64) -> (DVector<f64>, DMatrix<f64>) {
        let p = theta.len();
        let h = self.opts.polish_step;
        let mut g = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let shifted = |th: &DVector<f64>, i: usize, a: f64, j: usize, b: f64, s: &mut Self| {
            let mut t = th.clone();
            t[i] += a;
            t[j] += b;
            s.value(&t)
        };
        for i in 0..p {
            let fp = shifted(theta, i, h, i, 0.0, self);
            let fm = shifted(theta, i, -h, i, 0.0, self);
            g[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        }
        for i in 0..p {
            for j in 0..i {
                let fpp = shifted(theta, i, h, j, h, self);
                let fpm = shifted(theta, i, h, j, -h, self);
                let fmp = shifted(theta, i, -h, j, h, self);
                let fmm = shifted(theta, i, -h, j, -h, self);
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        (g, hess)
    }

    /// Damped Newton iterations with difference derivatives. Returns the
    /// final point and value, the last gradient norm, the iteration count
    /// and whether the Newton decrement fell below tolerance.
    fn polish(
        &mut self,
        mut theta: DVector<f64>,
        mut f: f64,
        history: &mut Vec<f64>,
    ) -> (DVector<f64>, f64, f64, usize, bool) {
        let mut gnorm = f64::INFINITY;
        let mut iterations = 0;
        let mut stationary = false;
        for _ in 0..self.opts.polish_iter {
            let (g, hess) = self.gradient_hessian(&theta, f);
            gnorm = g.norm();
            if !gnorm.is_finite() {
                break;
            }
            if let Some(c) = hess.clone().cholesky() {
                if g.dot(&c.solve(&g)) < self.opts.decrement_tol * (1.0 + f.abs()) {
                    stationary = true;
                    break;
                }
            }
            iterations += 1;
            let mut lambda = 0.0;
            let mut improved = false;
            for _ in 0..20 {
                let mut a = hess.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda;
                }
                if let Some(c) = a.cholesky() {
                    let cand = &theta - c.solve(&g);
                    let fc = self.value(&cand);
                    if fc < f {
                        theta = cand;
                        f = fc;
                        improved = true;
                        break;
                    }
                }
                lambda = if lambda == 0.0 {
                    1e-6 * hess.amax().max(1.0)
                } else {
                    lambda * 10.0
                };
            }
            history.push(f);
            if !improved {
                break;
            }
        }
        (theta, f, gnorm, iterations, stationary)
    }
}

/// Initial precision: the isotropic stationary point `σ = c g` with
/// `c = nN / (2 Σ d²)` at the Fréchet mean.
fn initial_guess(m: &ChartManifold, data: &Dataset, opts: &EstimatorOptions) -> Result<SymPoint> {
    if let Some(s) = &opts.initial {
        return Ok(s.clone());
    }
    let x = match frechet_mean(m, data, &opts.frechet) {
        Ok(r) => r.x,
        Err(_) => data.chart_mean(),
    };
    m.check_domain(x.as_slice())?;
    let mut sum = 0.0;
    for p in &data.points {
        if p == &x {
            continue;
        }
        // A chart-metric length stands in where the logarithm fails.
        let d2 = match log_map(m, x.as_slice(), p.as_slice(), &opts.frechet.shooting) {
            Ok(l) => l.distance.powi(2),
            Err(_) => {
                let dx = p - &x;
                m.inner(x.as_slice(), dx.as_slice(), dx.as_slice())?
            }
        };
        sum += d2;
    }
    let n = m.dim() as f64;
    let c = if sum > 0.0 {
        (n * data.len() as f64 / (2.0 * sum)).clamp(opts.eig_min, opts.eig_max)
    } else {
        1.0
    };
    SymPoint::new(x.clone(), m.metric(x.as_slice())? * c)
}

/// Zero spread: every distance vanishes at `x = x*` and the log-det term
/// is minimized at the upper eigenvalue bound.
fn coincident_estimate(
    m: &ChartManifold,
    data: &Dataset,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let x = data.points[0].clone();
    let n = m.dim();
    let sigma = SymPoint::new(x.clone(), m.metric(x.as_slice())? * opts.eig_max)?;
    let distances = vec![0.0; data.len()];
    let (sum, logdet) = objective_parts(m, &distances, &sigma)?;
    Ok(EstimateResult {
        x_hat: x,
        sigma_hat: sigma,
        objective: sum + logdet,
        distances,
        covectors: vec![DVector::zeros(n + n * n); data.len()],
        iterations: 0,
        evals: 0,
        history: Vec::new(),
        converged: true,
        degenerate: true,
        gradient_norm: 0.0,
    })
}

/// Minimizes `F(x, σ) = Σ_i d_{Sym⁺M}(σ, x_i)² − (N/2) log det_g σ` over the
/// base point and the precision, by Nelder–Mead on `(x, L)` with
/// `σ = L Lᵀ` followed by a difference Newton polish.
pub fn anisotropic_estimate(
    m: &ChartManifold,
    data: &Dataset,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let n = m.dim();
    if data.len() <= n {
        return Err(Error::InvalidArgument(format!(
            "need more than {n} points to estimate a precision, got {}",
            data.len()
        )));
    }
    if data.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: data.dim(),
        });
    }
    if data.points.iter().all(|p| p == &data.points[0]) {
        return coincident_estimate(m, data, opts);
    }
    let start = initial_guess(m, data, opts)?;
    let param = Param { n };
    let theta0 = param.encode(&start.x, &start.sigma)?;
    let mut obj = Objective {
        m,
        data,
        opts,
        param,
        // Paths are not needed inside the objective.
        shooting: FiberShootingOptions {
            path_steps: 0,
            ..opts.shooting.clone()
        },
        cache: vec![ShootingCache::default(); data.len()],
        evals: 0,
    };
    // Establish covectors at the start before the simplex moves.
    obj.evaluate(&theta0)?;

    let ginv = m.metric_inverse(start.x.as_slice())?;
    let spread = (n as f64 / start.sigma.trace().max(1e-12) * ginv.trace() / n as f64).sqrt();
    let mut steps = vec![0.0; theta0.len()];
    for i in 0..n {
        steps[i] =
            0.2 * spread * ginv[(i, i)].sqrt() / ginv.trace().sqrt().max(1e-12) * (n as f64).sqrt();
        steps[n + i] = 0.2;
    }
    for v in steps.iter_mut().skip(2 * n) {
        *v = 0.2 * start.sigma.trace().sqrt() / (n as f64).sqrt();
    }
    let nm = nelder_mead(
        |th| obj.value(th),
        &theta0,
        &steps,
        &NelderMeadOptions {
            max_evals: opts.max_evals,
            ..Default::default()
        },
    )?;
    let mut history = nm.history.clone();
    let (theta, _, gnorm, polish_iters, stationary) =
        obj.polish(nm.x.clone(), nm.value, &mut history);
    let fin = obj.evaluate(&theta)?;
    let converged = stationary || fin.clamped;
    Ok(EstimateResult {
        x_hat: fin.sigma.x.clone(),
        objective: fin.value,
        distances: fin.distances,
        covectors: fin.covectors,
        iterations: nm.iterations + polish_iters,
        evals: obj.evals,
        history,
        converged,
        degenerate: fin.clamped,
        gradient_norm: gnorm,
        sigma_hat: fin.sigma,
    })
}

/// Most probable paths of the driving process from the estimate to each data
/// point, warm-started from the stored covectors.
pub fn estimate_mpp_paths(
    m: &ChartManifold,
    data: &Dataset,
    est: &EstimateResult,
    opts: &FiberShootingOptions,
) -> Result<Vec<SampledPath>> {
    data.points
        .par_iter()
        .zip(est.covectors.par_iter())
        .map(|(y, c)| {
            Ok(
                dist_sym_geodesic(m, &est.sigma_hat, y.as_slice(), Some(c), opts)?
                    .base_path(m.dim()),
            )
        })
        .collect()
}

/// Principal axes of the covariance `σ^{-1}` relative to `g`.
#[derive(Clone, Debug)]
pub struct Anisotropy {
    /// `√(λ_max/λ_min)`: ratio of standard deviations along the axes.
    pub ratio: f64,
    /// Chart vector of unit `g`-length along the largest variance.
    pub major_axis: DVector<f64>,
}

pub fn anisotropy(m: &ChartManifold, covariance: &DMatrix<f64>, x: &[f64]) -> Result<Anisotropy> {
    let g = m.metric(x)?;
    let r = g.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
    // Covariance in a g-orthonormal basis: Rᵀ C R.
    let a = r.transpose() * covariance * &r;
    let eig = ((&a + a.transpose()) * 0.5).symmetric_eigen();
    let (imax, lmax) = eig.eigenvalues.argmax();
    let lmin = eig.eigenvalues.min();
    let e = eig.eigenvectors.column(imax).into_owned();
    let axis = r
        .transpose()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite)?
        * e;
    Ok(Anisotropy {
        ratio: (lmax / lmin).sqrt(),
        major_axis: axis,
    })
}

/// Unsigned angle in `[0, π/2]` between two lines through `x`.
pub fn axis_angle(m: &ChartManifold, x: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    let c = m.inner(x, a, b)? / (m.norm(x, a)? * m.norm(x, b)?);
    Ok(c.abs().min(1.0).acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::registry::{euclidean, sphere};

    fn plane_data() -> Dataset {
        let pts = [[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]];
        Dataset::new(
            &euclidean(2),
            pts.iter().map(|p| DVector::from_column_slice(p)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parameter_roundtrip() {
        let p = Param { n: 2 };
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.7]);
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let th = p.encode(&x, &s).unwrap();
        let l = p.lower(&th);
        assert!((&l * l.transpose() - s).amax() < 1e-14);
    }

    #[test]
    fn clamping_is_relative_to_the_metric() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.25]));
        let (s, active) = clamp_relative_eigenvalues(&g, &(&g * 2.0), 1e-4, 1e4).unwrap();
        assert!(!active);
        assert!((s - &g * 2.0).amax() < 1e-14);
        let (s, active) = clamp_relative_eigenvalues(&g, &(&g * 1e6), 1e-4, 1e4).unwrap();
        assert!(active);
        assert!((s - &g * 1e4).amax() < 1e-8);
    }

    #[test]
    fn plane_four_points() {
        let m = euclidean(2);
        let r = anisotropic_estimate(&m, &plane_data(), &EstimatorOptions::default()).unwrap();
        assert!(r.x_hat.amax() < 1e-6, "{:?}", r.x_hat);
        let target = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.25]));
        assert!(
            (&r.sigma_hat.sigma - target).amax() < 1e-4,
            "{}",
            r.sigma_hat.sigma
        );
        assert!(
            r.converged && !r.degenerate,
            "{} {} {:?}",
            r.gradient_norm,
            r.iterations,
            &r.history[r.history.len().saturating_sub(5)..]
        );
        let (sum, logdet) = objective_parts(&m, &r.distances, &r.sigma_hat).unwrap();
        assert!((sum + logdet - r.objective).abs() < 1e-9);
        let j = r.to_json();
        assert_eq!(j["sigma_hat"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn repeated_point_hits_the_cap() {
        let m = euclidean(2);
        let d = Dataset::new(&m, vec![DVector::from_vec(vec![0.5, -0.2]); 4]).unwrap();
        let r = anisotropic_estimate(&m, &d, &EstimatorOptions::default()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.x_hat.as_slice(), &[0.5, -0.2]);
        assert!((r.sigma_hat.sigma.symmetric_eigen().eigenvalues.min() - 1e4).abs() < 1e-8);
    }

    #[test]
    fn too_few_points() {
        let m = euclidean(2);
        let d = Dataset::new(
            &m,
            vec![DVector::zeros(2), DVector::from_vec(vec![1.0, 0.0])],
        )
        .unwrap();
        assert!(matches!(
            anisotropic_estimate(&m, &d, &EstimatorOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn anisotropy_of_a_scaled_orthonormal_frame() {
        let m = sphere(1.0);
        let x = [1.0, 0.3];
        let s = 1.0f64.sin();
        // Frame lengths 3 (along ∂θ) and 1 (along the unit φ direction).
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 1.0 / (s * s)]));
        let a = anisotropy(&m, &cov, &x).unwrap();
        assert!((a.ratio - 3.0).abs() < 1e-12);
        assert!(axis_angle(&m, &x, a.major_axis.as_slice(), &[1.0, 0.0]).unwrap() < 1e-12);
        assert!(
            (axis_angle(&m, &x, &[1.0, 0.0], &[0.0, 1.0]).unwrap() - std::f64::consts::FRAC_PI_2)
                .abs()
                < 1e-15
        );
    }
}
