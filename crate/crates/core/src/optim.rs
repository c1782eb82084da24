//! Small dense optimizers: damped Gauss–Newton (Levenberg–Marquardt) with a
//! forward-difference Jacobian, and Nelder–Mead.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop once the residual norm falls below this.
    pub tol: f64,
    /// Keep iterating down to this residual when progress is still fast.
    pub polish_tol: f64,
    pub fd_step: f64,
    pub lambda0: f64,
    /// Stop after an accepted step that reduces the residual by less than
    /// this fraction.
    pub rel_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 60,
            tol: 1e-8,
            polish_tol: 1e-13,
            fd_step: 1e-7,
            lambda0: 1e-3,
            rel_tol: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `‖r(x)‖²`. Evaluations that fail (e.g. a trajectory leaving the
/// chart) count as rejected steps. Fails only if `r(x0)` itself fails.
pub fn levenberg_marquardt<F>(mut r: F, x0: DVector<f64>, opts: &LmOptions) -> Result<LmReport>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = x0;
    let mut res = r(&x)?;
    let mut norm = res.norm();
    let mut lambda = opts.lambda0;
    let mut iterations = 0;
    let m = x.len();

    while iterations < opts.max_iter {
        if norm < opts.polish_tol {
            break;
        }
        iterations += 1;

        let mut jac = DMatrix::zeros(res.len(), m);
        let mut xp = x.clone();
        let mut jac_ok = true;
        for j in 0..m {
            let h = opts.fd_step * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            match r(&xp) {
                Ok(rp) => jac.set_column(j, &((rp - &res) / h)),
                Err(_) => {
                    // one-sided the other way
                    xp[j] = x[j] - h;
                    match r(&xp) {
                        Ok(rm) => jac.set_column(j, &((&res - rm) / h)),
                        Err(_) => jac_ok = false,
                    }
                }
            }
            xp[j] = x[j];
        }
        if !jac_ok {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &res;

        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..m {
                a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let step = match a.cholesky() {
                Some(c) => -c.solve(&grad),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let cand = &x + &step;
            match r(&cand) {
                Ok(rc) if rc.iter().all(|v| v.is_finite()) && rc.norm() < norm => {
                    let new_norm = rc.norm();
                    let small_gain = new_norm > 0.9 * norm;
                    let gain = (norm - new_norm) / norm;
                    x = cand;
                    res = rc;
                    norm = new_norm;
                    lambda = (lambda / 5.0).max(1e-15);
                    improved = true;
                    if (small_gain && norm < opts.tol) || gain < opts.rel_tol {
                        // Past the tolerance and no longer contracting.
                        iterations = opts.max_iter;
                    }
                    break;
                }
                _ => lambda *= 4.0,
            }
            if lambda > 1e14 {
                break;
            }
        }
        if !improved {
            break;
        }
    }

    Ok(LmReport {
        converged: norm < opts.tol,
        x,
        residual: res,
        residual_norm: norm,
        iterations,
    })
}

#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 400,
            f_tol: 1e-12,
            x_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadReport {
    pub x: DVector<f64>,
    pub value: f64,
    pub evals: usize,
    pub iterations: usize,
    /// Best value after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Derivative-free simplex descent. `f` may return `+∞` to reject a point.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &DVector<f64>,
    steps: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadReport>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let n = x0.len();
    if steps.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: steps.len(),
        });
    }
    let mut evals = 0usize;
    let mut eval = |x: &DVector<f64>, evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    if !v0.is_finite() {
        return Err(Error::InvalidArgument(
            "objective is not finite at the initial point".into(),
        ));
    }
    simplex.push((x0.clone(), v0));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += steps[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        history.push(simplex[0].1);
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| (x - &simplex[0].0).amax())
            .fold(0.0, f64::max);
        if spread.abs() <= opts.f_tol * (1.0 + simplex[0].1.abs()) && size <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid = simplex[..n]
            .iter()
            .fold(DVector::zeros(n), |acc, (x, _)| acc + x)
            / n as f64;
        let worst = simplex[n].clone();
        let reflect = &centroid + (&centroid - &worst.0);
        let fr = eval(&reflect, &mut evals);
        if fr < simplex[0].1 {
            let expand = &centroid + (&reflect - &centroid) * 2.0;
            let fe = eval(&expand, &mut evals);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let (contract, fc) = if fr < worst.1 {
                let c = &centroid + (&reflect - &centroid) * 0.5;
                let v = eval(&c, &mut evals);
                (c, v)
            } else {
                let c = &centroid + (&worst.0 - &centroid) * 0.5;
                let v = eval(&c, &mut evals);
                (c, v)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (contract, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x = &best + (&vertex.0 - &best) * 0.5;
                    let v = eval(&x, &mut evals);
                    *vertex = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Ok(NelderMeadReport {
        x,
        value,
        evals,
        iterations,
        history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lm_solves_rosenbrock_residuals() {
        let rep = levenberg_marquardt(
            |x| {
                Ok(DVector::from_vec(vec![
                    10.0 * (x[1] - x[0] * x[0]),
                    1.0 - x[0],
                ]))
            },
            DVector::from_vec(vec![-1.2, 1.0]),
            &LmOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-8 && (rep.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lm_underdetermined_prefers_small_steps() {
        // One equation, two unknowns: lands on the line near the start.
        let rep = levenberg_marquardt(
            |x| Ok(DVector::from_vec(vec![x[0] + x[1] - 2.0])),
            DVector::zeros(2),
            &LmOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let rep = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2),
            &DVector::zeros(2),
            &[0.5, 0.5],
            &NelderMeadOptions {
                max_evals: 2000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((rep.x[0] - 1.0).abs() < 1e-5 && (rep.x[1] + 0.5).abs() < 1e-5);
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nelder_mead_respects_rejections() {
        let rep = nelder_mead(
            |x| {
                if x[0] < 0.2 {
                    f64::INFINITY
                } else {
                    x[0] * x[0]
                }
            },
            &DVector::from_vec(vec![1.0]),
            &[0.3],
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!(rep.x[0] >= 0.2 && rep.x[0] < 0.21);
    }
}
