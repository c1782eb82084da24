use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::hamiltonian::{flow_end, geodesic_flow, CotangentState};
use crate::error::{Error, Result};
use crate::framebundle::{horizontal_basis, FramePoint, SymPoint};
use crate::geometry::ChartManifold;
use crate::optim::{levenberg_marquardt, LmOptions};
use crate::path::SampledPath;

#[derive(Clone, Debug)]
pub struct FiberShootingOptions {
    /// RK4 steps of the flow over `[0, 1]` inside the solver.
    pub steps: usize,
    /// Resolution of the returned path; 0 returns only the initial state.
    pub path_steps: usize,
    /// Endpoint tolerance in chart coordinates.
    pub tol: f64,
    /// Tolerance on the final vertical momentum `p_α(1)`.
    pub transversality_tol: f64,
    pub starts: usize,
    pub penalties: Vec<f64>,
    pub penalty_iter: usize,
    pub refine_iter: usize,
    pub seed: u64,
}

impl Default for FiberShootingOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            path_steps: 200,
            tol: 1e-8,
            transversality_tol: 1e-7,
            starts: 8,
            penalties: vec![1e2, 1e4, 1e6],
            penalty_iter: 25,
            refine_iter: 40,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeodesicResult {
    /// The geodesic in `FM` (frame-bundle coordinates) over `[0, 1]`.
    pub path: SampledPath,
    pub length: f64,
    pub initial_covector: DVector<f64>,
    pub endpoint_residual: f64,
    pub transversality_residual: f64,
    pub converged: bool,
    /// Lengths of all distinct converged solutions, ascending.
    pub local_lengths: Vec<f64>,
}

#[derive(Serialize)]
struct GeodesicRecord<'a> {
    length: f64,
    converged: bool,
    residual: f64,
    covector: &'a [f64],
    path_csv_ref: &'a str,
}

impl GeodesicResult {
    pub fn base_path(&self, n: usize) -> SampledPath {
        self.path.head(n)
    }

    pub fn to_json(&self, path_csv_ref: &str) -> serde_json::Value {
        serde_json::to_value(GeodesicRecord {
            length: self.length,
            converged: self.converged,
            residual: self.endpoint_residual,
            covector: self.initial_covector.as_slice(),
            path_csv_ref,
        })
        .expect("record serializes")
    }
}

/// Outcome of one start.
#[derive(Clone, Debug)]
struct Candidate {
    p0: DVector<f64>,
    length: f64,
    endpoint: f64,
    transversality: f64,
}

impl Candidate {
    fn converged(&self, opts: &FiberShootingOptions) -> bool {
        self.endpoint < opts.tol && self.transversality < opts.transversality_tol
    }

    fn score(&self) -> f64 {
        self.endpoint + self.transversality
    }
}

struct Problem<'a> {
    m: &'a ChartManifold,
    n: usize,
    q0: Vec<f64>,
    hb: DMatrix<f64>,
    y: Vec<f64>,
    opts: &'a FiberShootingOptions,
}

impl Problem<'_> {
    fn big(&self) -> usize {
        self.n + self.n * self.n
    }

    fn end(&self, p: &DVector<f64>) -> Result<Vec<f64>> {
        let mut y0 = self.q0.clone();
        y0.extend_from_slice(p.as_slice());
        flow_end(self.m, &y0, 1.0, self.opts.steps)
    }

    fn length(&self, p: &DVector<f64>) -> f64 {
        (self.hb.transpose() * p).norm()
    }

    fn penalty_residual(&self, p: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        let end = self.end(p)?;
        let c = self.hb.transpose() * p;
        let w = mu.sqrt();
        Ok(DVector::from_iterator(
            2 * self.n,
            c.iter()
                .copied()
                .chain((0..self.n).map(|i| w * (end[i] - self.y[i]))),
        ))
    }

    /// `[x(1) − y ; p_α(1)]`: the endpoint constraint plus transversality to
    /// the target fiber.
    fn kkt_residual(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let end = self.end(p)?;
        let n = self.n;
        let big = self.big();
        Ok(DVector::from_iterator(
            big,
            (0..n)
                .map(|i| end[i] - self.y[i])
                .chain(end[big + n..2 * big].iter().copied()),
        ))
    }

    fn evaluate(&self, p: DVector<f64>) -> Option<Candidate> {
        let r = self.kkt_residual(&p).ok()?;
        Some(self.candidate(p, &r))
    }

    fn candidate(&self, p: DVector<f64>, r: &DVector<f64>) -> Candidate {
        let n = self.n;
        Candidate {
            length: self.length(&p),
            endpoint: r.rows(0, n).norm(),
            transversality: r.rows(n, r.len() - n).norm(),
            p0: p,
        }
    }

    /// Forward-difference Jacobian of the KKT residual.
    fn jacobian(&self, p: &DVector<f64>, r: &DVector<f64>) -> Option<DMatrix<f64>> {
        let big = self.big();
        let mut jac = DMatrix::zeros(big, big);
        let mut pp = p.clone();
        for j in 0..big {
            let h = 1e-7 * p[j].abs().max(1.0);
            pp[j] = p[j] + h;
            let rp = self.kkt_residual(&pp).ok()?;
            jac.set_column(j, &((rp - r) / h));
            pp[j] = p[j];
        }
        Some(jac)
    }

    /// Newton iterations on the KKT system with Broyden updates of a
    /// supplied Jacobian. Stops at the first step that does not reduce the
    /// residual.
    fn refine_broyden(
        &self,
        mut p: DVector<f64>,
        mut jac: DMatrix<f64>,
    ) -> Option<(Candidate, DMatrix<f64>)> {
        let mut r = self.kkt_residual(&p).ok()?;
        let target = 1e-3 * self.opts.tol.min(self.opts.transversality_tol);
        for _ in 0..self.opts.refine_iter {
            if r.norm() < target {
                break;
            }
            let step = jac.clone().lu().solve(&(-&r))?;
            let pn = &p + &step;
            let rn = self.kkt_residual(&pn).ok()?;
            if !(rn.norm() < r.norm()) {
                break;
            }
            let corr = (&rn - &r - &jac * &step) / step.norm_squared();
            jac += corr * step.transpose();
            p = pn;
            r = rn;
        }
        Some((self.candidate(p, &r), jac))
    }

    fn refine(&self, p: DVector<f64>) -> Option<Candidate> {
        let lm = LmOptions {
            max_iter: self.opts.refine_iter,
            tol: self.opts.tol.min(self.opts.transversality_tol),
            ..LmOptions::default()
        };
        let rep = levenberg_marquardt(|p| self.kkt_residual(p), p, &lm).ok()?;
        self.evaluate(rep.x)
    }

    fn solve_from(&self, p0: DVector<f64>) -> Option<Candidate> {
        let mut p = p0;
        for &mu in &self.opts.penalties {
            let lm = LmOptions {
                max_iter: self.opts.penalty_iter,
                tol: 0.0,
                polish_tol: 0.0,
                rel_tol: 1e-4,
                ..LmOptions::default()
            };
            match levenberg_marquardt(|p| self.penalty_residual(p, mu), p.clone(), &lm) {
                Ok(rep) => p = rep.x,
                Err(_) => return None,
            }
        }
        self.refine(p)
    }

    fn starts(&self) -> Vec<DVector<f64>> {
        let n = self.n;
        let big = self.big();
        let x0 = &self.q0[..n];
        let alpha = DMatrix::from_column_slice(n, n, &self.q0[n..]);
        let dx = DVector::from_iterator(n, (0..n).map(|i| self.y[i] - x0[i]));
        // Horizontal dual of the chart difference: p_x = σ Δx.
        let sigma = (&alpha * alpha.transpose())
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(n, n));
        let px = sigma * dx;
        let scale = px.norm().max(1e-3);
        let mut out = Vec::with_capacity(self.opts.starts.max(1));
        let mut base = DVector::zeros(big);
        base.rows_mut(0, n).copy_from(&px);
        out.push(base.clone());
        for k in 1..self.opts.starts.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
            rng.set_stream(k as u64);
            let vertical = if k <= self.opts.starts / 2 { 0.1 } else { 1.0 };
            let mut p = base.clone();
            for v in p.rows_mut(n, n * n).iter_mut() {
                *v = vertical * scale * rng.sample::<f64, _>(StandardNormal);
            }
            if k > self.opts.starts / 2 {
                for v in p.rows_mut(0, n).iter_mut() {
                    *v += 0.25 * scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            out.push(p);
        }
        out
    }

    fn finish(&self, best: Candidate, local_lengths: Vec<f64>) -> Result<GeodesicResult> {
        let converged = best.converged(self.opts);
        let u0 = FramePoint::from_coords(self.n, &self.q0)?;
        let s0 = CotangentState::new(&u0, best.p0.clone())?;
        let path = match geodesic_flow(self.m, &s0, 1.0, self.opts.path_steps) {
            Ok(flow) if self.opts.path_steps > 0 => flow.head(self.big()),
            Ok(_) => SampledPath {
                times: vec![0.0],
                values: vec![s0.q.clone()],
            },
            Err(_) => SampledPath {
                times: vec![0.0, 1.0],
                values: vec![s0.q.clone(), s0.q.clone()],
            },
        };
        let result = GeodesicResult {
            path,
            length: best.length,
            initial_covector: best.p0,
            endpoint_residual: best.endpoint,
            transversality_residual: best.transversality,
            converged,
            local_lengths,
        };
        if converged {
            Ok(result)
        } else {
            Err(Error::ShootingFailed {
                best: Box::new(result),
            })
        }
    }
}

fn distinct_lengths(mut lengths: Vec<f64>) -> Vec<f64> {
    lengths.sort_by(f64::total_cmp);
    lengths.dedup_by(|a, b| (*a - *b).abs() <= 1e-6 * b.abs().max(1.0));
    lengths
}

fn setup<'a>(
    m: &'a ChartManifold,
    u0: &FramePoint,
    y: &[f64],
    opts: &'a FiberShootingOptions,
) -> Result<Problem<'a>> {
    let n = m.dim();
    if u0.dim() != n || y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if u0.dim() != n { u0.dim() } else { y.len() },
        });
    }
    m.check_domain(u0.x.as_slice())?;
    m.check_domain(y)?;
    Ok(Problem {
        m,
        n,
        q0: u0.coords().as_slice().to_vec(),
        hb: horizontal_basis(m, u0)?,
        y: y.to_vec(),
        opts,
    })
}

fn degenerate(u0: &FramePoint, n: usize) -> GeodesicResult {
    let q = u0.coords();
    GeodesicResult {
        path: SampledPath {
            times: vec![0.0, 1.0],
            values: vec![q.clone(), q],
        },
        length: 0.0,
        initial_covector: DVector::zeros(n + n * n),
        endpoint_residual: 0.0,
        transversality_residual: 0.0,
        converged: true,
        local_lengths: vec![0.0],
    }
}

/// Shortest normal geodesic from `u0` to the fiber over `y`, parametrized on
/// `[0, 1]` so that its length is `√(2H)`. All starts run; the result is the
/// shortest converged one and `local_lengths` lists every distinct converged
/// length.
pub fn shoot_to_fiber(
    m: &ChartManifold,
    u0: &FramePoint,
    y: &[f64],
    opts: &FiberShootingOptions,
) -> Result<GeodesicResult> {
    let prob = setup(m, u0, y, opts)?;
    if (&u0.x - DVector::from_column_slice(y)).amax() == 0.0 {
        return Ok(degenerate(u0, prob.n));
    }
    let mut candidates = multistart(&prob);
    if !candidates.iter().any(|c| c.converged(opts)) {
        candidates.extend(continuation(m, u0, y, opts));
    }
    select(&prob, candidates)
}

fn multistart(prob: &Problem) -> Vec<Candidate> {
    let candidates: Vec<Option<Candidate>> = prob
        .starts()
        .into_par_iter()
        .map(|p0| prob.solve_from(p0))
        .collect();
    candidates.into_iter().flatten().collect()
}

/// Homotopy in the target for when no start converges: solves for targets
/// on the chart segment from `x0` to `y`, each stage started from the
/// previous covector scaled to the new distance. The step halves on failure.
fn continuation(
    m: &ChartManifold,
    u0: &FramePoint,
    y: &[f64],
    opts: &FiberShootingOptions,
) -> Option<Candidate> {
    const FIRST: f64 = 0.25;
    const MIN_STEP: f64 = 1.0 / 256.0;
    let x0 = u0.x.as_slice();
    let at = |s: f64| -> Vec<f64> { x0.iter().zip(y).map(|(a, b)| a + s * (b - a)).collect() };
    let mut s = 0.0;
    let mut ds = FIRST;
    let mut current: Option<Candidate> = None;
    while ds >= MIN_STEP {
        let s1 = (s + ds).min(1.0);
        let target = at(s1);
        if !m.in_domain(&target) {
            return None;
        }
        let prob = setup(m, u0, &target, opts).ok()?;
        let next = match &current {
            None => multistart(&prob)
                .into_iter()
                .filter(|c| c.converged(opts))
                .min_by(|a, b| a.length.total_cmp(&b.length)),
            Some(c) => prob.refine(&c.p0 * (s1 / s)).filter(|c| c.converged(opts)),
        };
        match next {
            Some(c) => {
                if s1 >= 1.0 {
                    return Some(c);
                }
                current = Some(c);
                s = s1;
                ds = (1.5 * ds).min(FIRST);
            }
            None => ds *= 0.5,
        }
    }
    None
}

fn select(prob: &Problem, candidates: Vec<Candidate>) -> Result<GeodesicResult> {
    let opts = prob.opts;
    let converged: Vec<&Candidate> = candidates.iter().filter(|c| c.converged(opts)).collect();
    let local = distinct_lengths(converged.iter().map(|c| c.length).collect());
    // First minimum in start order, so the reduction does not depend on
    // scheduling.
    let best = if converged.is_empty() {
        candidates
            .iter()
            .min_by(|a, b| a.score().total_cmp(&b.score()))
            .cloned()
    } else {
        converged
            .iter()
            .min_by(|a, b| a.length.total_cmp(&b.length))
            .map(|c| (*c).clone())
    };
    match best {
        Some(b) => prob.finish(b, local),
        None => Err(Error::ShootingFailed {
            best: Box::new(GeodesicResult {
                path: SampledPath {
                    times: vec![0.0],
                    values: vec![DVector::from_column_slice(&prob.q0)],
                },
                length: f64::NAN,
                initial_covector: DVector::zeros(prob.big()),
                endpoint_residual: f64::INFINITY,
                transversality_residual: f64::INFINITY,
                converged: false,
                local_lengths: Vec::new(),
            }),
        }),
    }
}

/// As [`shoot_to_fiber`], first trying a refinement from `guess` alone and
/// falling back to the full multi-start when it does not converge.
pub fn shoot_to_fiber_warm(
    m: &ChartManifold,
    u0: &FramePoint,
    y: &[f64],
    guess: &DVector<f64>,
    opts: &FiberShootingOptions,
) -> Result<GeodesicResult> {
    let prob = setup(m, u0, y, opts)?;
    if (&u0.x - DVector::from_column_slice(y)).amax() == 0.0 {
        return Ok(degenerate(u0, prob.n));
    }
    if guess.len() == prob.big() {
        if let Some(c) = prob.refine(guess.clone()) {
            if c.converged(opts) {
                let l = vec![c.length];
                return prob.finish(c, l);
            }
        }
    }
    shoot_to_fiber(m, u0, y, opts)
}

/// Warm-start state for repeated shooting to one target from nearby frames:
/// the last covector and a Jacobian of the shooting residual.
#[derive(Clone, Debug, Default)]
pub struct ShootingCache {
    covector: Option<DVector<f64>>,
    jacobian: Option<DMatrix<f64>>,
}

impl ShootingCache {
    pub fn covector(&self) -> Option<&DVector<f64>> {
        self.covector.as_ref()
    }
}

/// As [`shoot_to_fiber_warm`], trying quasi-Newton steps from the cached
/// Jacobian first. The cache is updated on success.
pub fn shoot_to_fiber_cached(
    m: &ChartManifold,
    u0: &FramePoint,
    y: &[f64],
    cache: &mut ShootingCache,
    opts: &FiberShootingOptions,
) -> Result<GeodesicResult> {
    let prob = setup(m, u0, y, opts)?;
    if (&u0.x - DVector::from_column_slice(y)).amax() == 0.0 {
        return Ok(degenerate(u0, prob.n));
    }
    if let (Some(p), Some(j)) = (&cache.covector, &cache.jacobian) {
        if let Some((c, j)) = prob.refine_broyden(p.clone(), j.clone()) {
            if c.converged(opts) {
                cache.covector = Some(c.p0.clone());
                cache.jacobian = Some(j);
                let l = vec![c.length];
                return prob.finish(c, l);
            }
        }
    }
    let result = match &cache.covector {
        Some(g) => shoot_to_fiber_warm(m, u0, y, g, opts)?,
        None => shoot_to_fiber(m, u0, y, opts)?,
    };
    let p = result.initial_covector.clone();
    cache.jacobian = prob
        .kkt_residual(&p)
        .ok()
        .and_then(|r| prob.jacobian(&p, &r));
    cache.covector = Some(p);
    Ok(result)
}

/// `d_{Sym⁺M}(σ, y)`: the fiber distance from the lift `(x, chol(σ^{-1}))`.
pub fn dist_sym(
    m: &ChartManifold,
    sigma: &SymPoint,
    y: &[f64],
    opts: &FiberShootingOptions,
) -> Result<f64> {
    Ok(shoot_to_fiber(m, &sigma.lift()?, y, opts)?.length)
}

/// Full result of the fiber shooting behind [`dist_sym`].
pub fn dist_sym_geodesic(
    m: &ChartManifold,
    sigma: &SymPoint,
    y: &[f64],
    guess: Option<&DVector<f64>>,
    opts: &FiberShootingOptions,
) -> Result<GeodesicResult> {
    let u0 = sigma.lift()?;
    match guess {
        Some(g) => shoot_to_fiber_warm(m, &u0, y, g, opts),
        None => shoot_to_fiber(m, &u0, y, opts),
    }
}

/// Most probable path of the driving process: the base projection of the
/// fiber-minimizing geodesic.
pub fn mpp_driving(
    m: &ChartManifold,
    u0: &FramePoint,
    y: &[f64],
    opts: &FiberShootingOptions,
) -> Result<SampledPath> {
    Ok(shoot_to_fiber(m, u0, y, opts)?.base_path(m.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framebundle::{act, antidevelop, horizontal_lift};
    use crate::geometry::registry::{ellipsoid, euclidean, sphere};
    use crate::geometry::riemannian_geodesic;
    use crate::subriemannian::hamiltonian::hamiltonian;
    use std::f64::consts::FRAC_PI_2;

    fn opts() -> FiberShootingOptions {
        FiberShootingOptions::default()
    }

    #[test]
    fn cached_shooting_tracks_a_moving_frame() {
        let m = ellipsoid(1.0, 0.8, 0.6);
        let y = [1.6, 0.6];
        let mut cache = ShootingCache::default();
        for k in 0..4 {
            let e = 0.01 * k as f64;
            let u0 = FramePoint::from_rows(&[1.3 + e, 0.2], &[vec![0.8 + e, 0.1], vec![0.0, 1.1]])
                .unwrap();
            let cached = shoot_to_fiber_cached(&m, &u0, &y, &mut cache, &opts()).unwrap();
            let cold = shoot_to_fiber(&m, &u0, &y, &opts()).unwrap();
            assert!((cached.length - cold.length).abs() < 1e-9);
            assert!(cached.converged);
        }
        assert!(cache.covector().is_some());
    }

    #[test]
    fn zero_path_steps_keeps_only_the_start() {
        let m = euclidean(2);
        let u0 = FramePoint::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let o = FiberShootingOptions {
            path_steps: 0,
            ..opts()
        };
        let r = shoot_to_fiber(&m, &u0, &[3.0, 4.0], &o).unwrap();
        assert_eq!(r.path.len(), 1);
    }

    #[test]
    fn plane_examples() {
        let m = euclidean(2);
        let u0 = FramePoint::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let r = shoot_to_fiber(&m, &u0, &[3.0, 4.0], &opts()).unwrap();
        assert!((r.length - 5.0).abs() < 1e-9, "{}", r.length);
        let base = r.base_path(2);
        for (t, x) in base.times.iter().zip(&base.values) {
            assert!((x[0] - 3.0 * t).abs() < 1e-8 && (x[1] - 4.0 * t).abs() < 1e-8);
        }

        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let u0 = FramePoint::new(DVector::zeros(2), a).unwrap();
        let r = shoot_to_fiber(&m, &u0, &[2.0, 0.0], &opts()).unwrap();
        assert!((r.length - 1.0).abs() < 1e-9, "{}", r.length);
    }

    #[test]
    fn length_matches_hamiltonian() {
        let m = ellipsoid(1.0, 0.8, 0.6);
        let u0 = FramePoint::from_rows(&[1.3, 0.2], &[vec![0.8, 0.1], vec![0.0, 1.1]]).unwrap();
        let r = shoot_to_fiber(&m, &u0, &[1.6, 0.6], &opts()).unwrap();
        let s = CotangentState::new(&u0, r.initial_covector.clone()).unwrap();
        let h = hamiltonian(&m, &s).unwrap();
        assert!((r.length * r.length - 2.0 * h).abs() < 1e-10);
        assert!(r.local_lengths[0] <= r.length + 1e-12);
    }

    #[test]
    fn degenerate_target_has_zero_length() {
        let m = sphere(1.0);
        let u0 = FramePoint::orthonormal(&m, &[1.0, 0.5]).unwrap();
        let r = shoot_to_fiber(&m, &u0, &[1.0, 0.5], &opts()).unwrap();
        assert_eq!(r.length, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn sphere_isotropic_length_is_arc_length() {
        let m = sphere(1.0);
        let x0 = [FRAC_PI_2, 0.0];
        let u0 = FramePoint::orthonormal(&m, &x0).unwrap();
        let y = [FRAC_PI_2 - 0.8, 0.0];
        let r = shoot_to_fiber(&m, &u0, &y, &opts()).unwrap();
        assert!((r.length - 0.8).abs() < 1e-6, "{}", r.length);
    }

    #[test]
    fn flat_closed_form_for_sym_points() {
        let m = euclidean(2);
        let s = SymPoint::new(
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 1.0])),
        )
        .unwrap();
        let d = dist_sym(&m, &s, &[2.0, 0.0], &opts()).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        let s = SymPoint::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!((dist_sym(&m, &s, &[0.3, -0.4], &opts()).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fiber_action_leaves_length_unchanged() {
        let m = sphere(1.0);
        let u0 = FramePoint::from_rows(&[1.2, 0.1], &[vec![0.9, 0.2], vec![0.0, 0.5]]).unwrap();
        let rho = DMatrix::from_row_slice(2, 2, &[0.8, -0.6, 0.6, 0.8]);
        let y = [1.5, 0.6];
        let a = shoot_to_fiber(&m, &u0, &y, &opts()).unwrap().length;
        let b = shoot_to_fiber(&m, &act(&u0, &rho).unwrap(), &y, &opts())
            .unwrap()
            .length;
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn warm_start_reproduces_the_cold_solution() {
        let m = sphere(1.0);
        let u0 = FramePoint::from_rows(&[1.2, 0.1], &[vec![0.9, 0.2], vec![0.0, 0.5]]).unwrap();
        let cold = shoot_to_fiber(&m, &u0, &[1.5, 0.6], &opts()).unwrap();
        let warm =
            shoot_to_fiber_warm(&m, &u0, &[1.52, 0.58], &cold.initial_covector, &opts()).unwrap();
        let again = shoot_to_fiber(&m, &u0, &[1.52, 0.58], &opts()).unwrap();
        assert!((warm.length - again.length).abs() < 1e-8);
    }

    #[test]
    fn isotropic_mpp_is_the_great_circle() {
        let m = sphere(1.0);
        let x0 = [1.2, -0.3];
        let u0 = FramePoint::orthonormal(&m, &x0).unwrap();
        let y = [1.7, 0.4];
        let o = FiberShootingOptions {
            path_steps: 400,
            ..opts()
        };
        let path = mpp_driving(&m, &u0, &y, &o).unwrap();
        let log = crate::geometry::log_map(&m, &x0, &y, &Default::default()).unwrap();
        let geo = riemannian_geodesic(&m, &x0, log.velocity.as_slice(), 1.0, 400).unwrap();
        assert!(
            path.sup_distance(&geo) < 1e-5,
            "{}",
            path.sup_distance(&geo)
        );
    }

    fn antidevelopment(m: &ChartManifold, u0: &FramePoint, y: &[f64]) -> SampledPath {
        let o = FiberShootingOptions {
            path_steps: 2000,
            ..opts()
        };
        let path = mpp_driving(m, u0, y, &o).unwrap();
        assert_eq!(horizontal_lift(m, u0, &path).unwrap().len(), path.len());
        antidevelop(m, u0, &path).unwrap()
    }

    #[test]
    fn orthonormal_mpp_antidevelops_to_a_line() {
        let m = ellipsoid(1.0, 0.8, 0.6);
        let u0 = FramePoint::orthonormal(&m, &[1.3, 0.0]).unwrap();
        let w = antidevelopment(&m, &u0, &[1.8, 0.7]);
        let end = w.end().clone();
        let dev = w
            .times
            .iter()
            .zip(&w.values)
            .map(|(t, v)| (v - &end * *t).amax())
            .fold(0.0, f64::max);
        assert!(dev < 1e-3, "{dev}");
    }

    #[test]
    fn anisotropic_mpp_antidevelops_at_constant_speed() {
        // The driving path has constant speed equal to the length, but the
        // free endpoint lets it turn: it is not a chord in general.
        let m = sphere(1.0);
        let u0 = FramePoint::from_rows(&[1.3, 0.0], &[vec![1.0, 0.0], vec![0.0, 0.4]]).unwrap();
        let y = [1.8, 0.7];
        let len = shoot_to_fiber(&m, &u0, &y, &opts()).unwrap().length;
        let w = antidevelopment(&m, &u0, &y);
        let dt = w.times[1] - w.times[0];
        for seg in w.values.windows(2) {
            let speed = (&seg[1] - &seg[0]).norm() / dt;
            assert!((speed - len).abs() < 1e-3 * len, "{speed} vs {len}");
        }
        let end = w.end().clone();
        let mid = &w.values[w.len() / 2];
        assert!((mid - &end * 0.5).amax() > 1e-2);
    }

    #[test]
    fn json_record_fields() {
        let m = euclidean(2);
        let u0 = FramePoint::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let r = shoot_to_fiber(&m, &u0, &[3.0, 4.0], &opts()).unwrap();
        let j = r.to_json("path.csv");
        assert_eq!(j["path_csv_ref"], "path.csv");
        assert_eq!(j["covector"].as_array().unwrap().len(), 6);
        assert!(j["converged"].as_bool().unwrap());
    }
}
