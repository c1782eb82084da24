use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::framebundle::{check_state, horizontal_basis, FramePoint};
use crate::geometry::curvature::christoffel_derivative_with_step;
use crate::geometry::{ChartManifold, ChristoffelMode};
use crate::ode::rk4_step;
use crate::path::SampledPath;

/// A point of `T*FM` in chart coordinates: `q = (x, vec α)`, `p` its
/// covector with the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CotangentState {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl CotangentState {
    pub fn new(u: &FramePoint, p: DVector<f64>) -> Result<Self> {
        let q = u.coords();
        if p.len() != q.len() {
            return Err(Error::Dimension {
                expected: q.len(),
                got: p.len(),
            });
        }
        Ok(Self { q, p })
    }

    pub fn frame(&self, n: usize) -> Result<FramePoint> {
        FramePoint::from_coords(n, self.q.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.q.iter().chain(self.p.iter()).copied().collect()
    }

    pub fn from_slice(n: usize, y: &[f64]) -> Self {
        let big = n + n * n;
        Self {
            q: DVector::from_column_slice(&y[..big]),
            p: DVector::from_column_slice(&y[big..2 * big]),
        }
    }
}

/// `H(q, p) = ½ Σ_i ⟨p, H_i(q)⟩²`.
pub fn hamiltonian(m: &ChartManifold, s: &CotangentState) -> Result<f64> {
    let n = m.dim();
    let u = s.frame(n)?;
    let hb = horizontal_basis(m, &u)?;
    let c = hb.transpose() * &s.p;
    Ok(0.5 * c.norm_squared())
}

/// Horizontal velocity components `c_i = ⟨p, H_i(q)⟩`; the base velocity is
/// `Σ c_i u_i`.
pub fn horizontal_components(m: &ChartManifold, s: &CotangentState) -> Result<DVector<f64>> {
    let u = s.frame(m.dim())?;
    Ok(horizontal_basis(m, &u)?.transpose() * &s.p)
}

fn dgamma_step(m: &ChartManifold) -> f64 {
    match m.christoffel_mode() {
        ChristoffelMode::Analytic => 1e-6,
        ChristoffelMode::FiniteDifference => 1e-4,
    }
}

/// Hamilton's equations `q̇ = ∂H/∂p`, `ṗ = −∂H/∂q` at `y = (q, p)`.
///
/// With `Z = P αᵀ`, `W_j = Γ^k_{jl} Z_{kl}`, `s = p_x − W`, `c = αᵀ s` and
/// `v = α c`:
/// `ẋ = v`, `α̇^k_m = −v^j Γ^k_{jl} α^l_m`,
/// `Ṗ_{ab} = −c_b s_a + v^j Γ^k_{ja} P_{kb}`,
/// `ṗ_{x,r} = v^j ∂_rΓ^k_{jl} Z_{kl}`, the last by central differences of Γ.
pub(crate) fn hamiltonian_rhs(m: &ChartManifold, y: &[f64], out: &mut [f64]) -> Result<()> {
    let n = m.dim();
    let big = n + n * n;
    let (q, p) = y.split_at(big);
    let (x, a) = q.split_at(n);
    let (px, pa) = p.split_at(n);
    let alpha = |l: usize, mm: usize| a[mm * n + l];
    let pmat = |k: usize, mm: usize| pa[mm * n + k];

    let gamma = m.christoffel(x)?;

    let mut z = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            z[k * n + l] = (0..n).map(|mm| pmat(k, mm) * alpha(l, mm)).sum();
        }
    }
    let mut s = vec![0.0; n];
    for j in 0..n {
        let mut w = 0.0;
        for k in 0..n {
            for l in 0..n {
                w += gamma.get(k, j, l) * z[k * n + l];
            }
        }
        s[j] = px[j] - w;
    }
    let c: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| alpha(j, i) * s[j]).sum())
        .collect();
    let v: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| alpha(j, i) * c[i]).sum())
        .collect();

    let (dq, dp) = out.split_at_mut(big);
    let (dx, da) = dq.split_at_mut(n);
    let (dpx, dpa) = dp.split_at_mut(n);
    dx.copy_from_slice(&v);

    for mm in 0..n {
        for k in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                for l in 0..n {
                    acc += v[j] * gamma.get(k, j, l) * alpha(l, mm);
                }
            }
            da[mm * n + k] = -acc;
        }
    }
    for b in 0..n {
        for aa in 0..n {
            let mut acc = -c[b] * s[aa];
            for j in 0..n {
                for k in 0..n {
                    acc += v[j] * gamma.get(k, j, aa) * pmat(k, b);
                }
            }
            dpa[b * n + aa] = acc;
        }
    }
    if z.iter().all(|&zz| zz == 0.0) || v.iter().all(|&vv| vv == 0.0) {
        dpx.iter_mut().for_each(|d| *d = 0.0);
    } else {
        let dgamma = christoffel_derivative_with_step(m, x, dgamma_step(m))?;
        for (r, d) in dpx.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        acc += v[j] * dgamma[r].get(k, j, l) * z[k * n + l];
                    }
                }
            }
            *d = acc;
        }
    }
    Ok(())
}

/// `(∂H/∂q, ∂H/∂p)` at a state.
pub fn hamiltonian_gradient(
    m: &ChartManifold,
    s: &CotangentState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let y = s.to_vec();
    let mut out = vec![0.0; y.len()];
    hamiltonian_rhs(m, &y, &mut out)?;
    let big = s.q.len();
    Ok((
        -DVector::from_column_slice(&out[big..]),
        DVector::from_column_slice(&out[..big]),
    ))
}

/// RK4 integration of the Hamiltonian system from `s0` over `[0, horizon]`.
/// Node values are `(q, p)` of length `2(n + n²)`.
pub fn geodesic_flow(
    m: &ChartManifold,
    s0: &CotangentState,
    horizon: f64,
    steps: usize,
) -> Result<SampledPath> {
    let n = m.dim();
    check_state(m, n, s0.q.as_slice(), 0.0)?;
    let mut values = Vec::with_capacity(steps + 1);
    let mut y = s0.to_vec();
    values.push(DVector::from_column_slice(&y));
    integrate(m, &mut y, horizon, steps, |y| {
        values.push(DVector::from_column_slice(y))
    })?;
    Ok(SampledPath {
        times: SampledPath::uniform_times(horizon, steps.max(1)),
        values,
    })
}

pub(crate) fn integrate(
    m: &ChartManifold,
    y: &mut Vec<f64>,
    horizon: f64,
    steps: usize,
    mut visit: impl FnMut(&[f64]),
) -> Result<()> {
    let n = m.dim();
    let steps = steps.max(1);
    let h = horizon / steps as f64;
    let mut rhs = |s: &[f64], out: &mut [f64]| hamiltonian_rhs(m, s, out);
    for k in 0..steps {
        *y = rk4_step(&mut rhs, y, h).map_err(|e| match e {
            Error::OutsideDomain { .. } => Error::ChartExit { time: h * k as f64 },
            e => e,
        })?;
        check_state(m, n, y, h * (k + 1) as f64)?;
        visit(y);
    }
    Ok(())
}

/// Final state of the flow, without storing the trajectory.
pub(crate) fn flow_end(
    m: &ChartManifold,
    y0: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut y = y0.to_vec();
    integrate(m, &mut y, horizon, steps, |_| {})?;
    Ok(y)
}

/// Sub-Riemannian exponential: the frame reached at time `horizon` by the
/// normal geodesic with initial covector `p0`.
pub fn exp(
    m: &ChartManifold,
    u0: &FramePoint,
    p0: &DVector<f64>,
    horizon: f64,
    steps: usize,
) -> Result<FramePoint> {
    let s0 = CotangentState::new(u0, p0.clone())?;
    check_state(m, m.dim(), s0.q.as_slice(), 0.0)?;
    if p0.iter().all(|&v| v == 0.0) {
        return Ok(u0.clone());
    }
    let end = flow_end(m, &s0.to_vec(), horizon, steps)?;
    FramePoint::from_coords(m.dim(), &end[..u0.coords().len()])
}
