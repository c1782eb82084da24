//! Built-in charts, addressable by name: `euclidean(n)`, `sphere(r)`,
//! `ellipsoid(a,b,c)`, `flat-torus(Lx,Ly)` and `hyperbolic-halfplane`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::manifold::{ChartManifold, Christoffel};
use crate::error::{Error, Result};

/// Polar angles closer than this to a pole are outside the spherical charts.
pub const POLE_MARGIN: f64 = 0.02;

pub const REGISTRY_KEYS: &[&str] = &[
    "euclidean(n)",
    "sphere(r)",
    "ellipsoid(a,b,c)",
    "flat-torus(Lx,Ly)",
    "hyperbolic-halfplane",
];

/// Parses a registry key such as `"sphere(2.0)"` or `"euclidean(3)"`.
pub fn from_name(key: &str) -> Result<ChartManifold> {
    let key = key.trim();
    let (name, args) = match key.find('(') {
        Some(i) => {
            if !key.ends_with(')') {
                return Err(unknown(key));
            }
            let inner = &key[i + 1..key.len() - 1];
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| {
                        Error::InvalidArgument(format!("bad parameters in '{key}': {e}"))
                    })?
            };
            (key[..i].trim(), args)
        }
        None => (key, Vec::new()),
    };
    let positive = |v: &[f64]| v.iter().all(|&a| a.is_finite() && a > 0.0);
    match (name, args.as_slice()) {
        ("euclidean", [n]) if *n >= 1.0 && n.fract() == 0.0 => Ok(euclidean(*n as usize)),
        ("euclidean", []) => Ok(euclidean(2)),
        ("sphere", [r]) if positive(&[*r]) => Ok(sphere(*r)),
        ("sphere", []) => Ok(sphere(1.0)),
        ("ellipsoid", [a, b, c]) if positive(&[*a, *b, *c]) => Ok(ellipsoid(*a, *b, *c)),
        ("flat-torus", [lx, ly]) if positive(&[*lx, *ly]) => Ok(flat_torus(*lx, *ly)),
        ("hyperbolic-halfplane", []) => Ok(hyperbolic_halfplane()),
        ("euclidean" | "sphere" | "ellipsoid" | "flat-torus" | "hyperbolic-halfplane", _) => {
            Err(Error::InvalidArgument(format!(
                "bad parameters for '{key}'; expected one of {}",
                REGISTRY_KEYS.join(", ")
            )))
        }
        _ => Err(unknown(key)),
    }
}

fn unknown(key: &str) -> Error {
    Error::UnknownManifold {
        name: key.to_string(),
        known: REGISTRY_KEYS.join(", "),
    }
}

pub fn euclidean(n: usize) -> ChartManifold {
    ChartManifold::new(
        format!("euclidean({n})"),
        n,
        move |_| DMatrix::identity(n, n),
        |_| true,
    )
    .with_christoffel(move |_| Christoffel::zeros(n))
    .with_distance(|x, y| {
        x.iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    })
}

fn polar_chart(x: &[f64]) -> bool {
    x[0] > POLE_MARGIN && x[0] < PI - POLE_MARGIN && x[1] > -PI && x[1] < PI
}

/// Round sphere of radius `r` in the chart `(θ, φ)`, `g = r² diag(1, sin²θ)`.
pub fn sphere(r: f64) -> ChartManifold {
    let r2 = r * r;
    ChartManifold::new(
        format!("sphere({r})"),
        2,
        move |x| {
            let s = x[0].sin();
            DMatrix::from_row_slice(2, 2, &[r2, 0.0, 0.0, r2 * s * s])
        },
        polar_chart,
    )
    .with_christoffel(|x| {
        let (s, c) = x[0].sin_cos();
        let mut g = Christoffel::zeros(2);
        g.set(0, 1, 1, -s * c);
        g.set_sym(1, 0, 1, c / s);
        g
    })
    .with_distance(move |x, y| {
        let p = unit_sphere_point(x);
        let q = unit_sphere_point(y);
        r * p.dot(&q).clamp(-1.0, 1.0).acos()
    })
}

fn unit_sphere_point(x: &[f64]) -> DVector<f64> {
    let (st, ct) = x[0].sin_cos();
    let (sp, cp) = x[1].sin_cos();
    DVector::from_vec(vec![st * cp, st * sp, ct])
}

/// Flat torus `R²/(Lx Z × Ly Z)` on the open fundamental rectangle.
/// Distances are chart-straight, wrap-around is not seen by a single chart.
pub fn flat_torus(lx: f64, ly: f64) -> ChartManifold {
    ChartManifold::new(
        format!("flat-torus({lx},{ly})"),
        2,
        |_| DMatrix::identity(2, 2),
        move |x| x[0] > 0.0 && x[0] < lx && x[1] > 0.0 && x[1] < ly,
    )
    .with_christoffel(|_| Christoffel::zeros(2))
    .with_distance(|x, y| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt())
}

/// Poincaré upper half-plane, `g = I / y²`, scalar curvature −2.
pub fn hyperbolic_halfplane() -> ChartManifold {
    ChartManifold::new(
        "hyperbolic-halfplane",
        2,
        |x| DMatrix::identity(2, 2) / (x[1] * x[1]),
        |x| x[1] > 0.0,
    )
    .with_christoffel(|x| {
        let inv = 1.0 / x[1];
        let mut g = Christoffel::zeros(2);
        g.set_sym(0, 0, 1, -inv);
        g.set(1, 0, 0, inv);
        g.set(1, 1, 1, -inv);
        g
    })
    .with_distance(|x, y| {
        let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
        (1.0 + d2 / (2.0 * x[1] * y[1])).acosh()
    })
}

type EmbedFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
/// Second derivatives: element `[i][j]` is `∂_i ∂_j P`.
type HessianFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<DVector<f64>>> + Send + Sync>;

/// Surface given by an embedding `P: R² ⊃ U → R^m`, with the induced metric
/// `g = Jᵀ J`. Without explicit derivatives, J and the second derivatives
/// come from central differences of `P`.
#[derive(Clone)]
pub struct EmbeddedSurface {
    embedding: EmbedFn,
    jacobian: Option<JacobianFn>,
    hessian: Option<HessianFn>,
    fd_step: f64,
}

impl EmbeddedSurface {
    pub fn new<P>(embedding: P) -> Self
    where
        P: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            embedding: Arc::new(embedding),
            jacobian: None,
            hessian: None,
            fd_step: 1e-5,
        }
    }

    pub fn with_derivatives<J, H>(mut self, jacobian: J, hessian: H) -> Self
    where
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        H: Fn(&[f64]) -> Vec<Vec<DVector<f64>>> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self.hessian = Some(Arc::new(hessian));
        self
    }

    pub fn point(&self, x: &[f64]) -> DVector<f64> {
        (self.embedding)(x)
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        if let Some(j) = &self.jacobian {
            return j(x);
        }
        let h = self.fd_step;
        let m = self.point(x).len();
        let mut jac = DMatrix::zeros(m, 2);
        let mut xp = x.to_vec();
        for i in 0..2 {
            xp[i] = x[i] + h;
            let p = self.point(&xp);
            xp[i] = x[i] - h;
            let q = self.point(&xp);
            xp[i] = x[i];
            jac.set_column(i, &((p - q) / (2.0 * h)));
        }
        jac
    }

    fn second_derivatives(&self, x: &[f64]) -> Vec<Vec<DVector<f64>>> {
        if let Some(hs) = &self.hessian {
            return hs(x);
        }
        // Differences of the Jacobian; larger step keeps the nested
        // stencil above round-off.
        let h = 1e-4;
        let mut out = vec![vec![DVector::zeros(0); 2]; 2];
        let mut xp = x.to_vec();
        for i in 0..2 {
            xp[i] = x[i] + h;
            let jp = self.jacobian(&xp);
            xp[i] = x[i] - h;
            let jm = self.jacobian(&xp);
            xp[i] = x[i];
            let d = (jp - jm) / (2.0 * h);
            for j in 0..2 {
                out[i][j] = d.column(j).into_owned();
            }
        }
        // symmetrize
        let avg = (&out[0][1] + &out[1][0]) * 0.5;
        out[0][1] = avg.clone();
        out[1][0] = avg;
        out
    }

    /// Chart manifold with the induced metric. Christoffels are
    /// `Γ^k_{ij} = g^{kl} ⟨∂_i∂_j P, ∂_l P⟩`.
    pub fn into_manifold<D>(self, name: impl Into<String>, domain: D) -> ChartManifold
    where
        D: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        let for_metric = self.clone();
        let for_gamma = self;
        ChartManifold::new(
            name,
            2,
            move |x| {
                let j = for_metric.jacobian(x);
                j.transpose() * j
            },
            domain,
        )
        .with_christoffel(move |x| {
            let j = for_gamma.jacobian(x);
            let g = j.transpose() * &j;
            let ginv = g
                .try_inverse()
                .unwrap_or_else(|| DMatrix::from_element(2, 2, f64::NAN));
            let dd = for_gamma.second_derivatives(x);
            let mut gamma = Christoffel::zeros(2);
            for i in 0..2 {
                for jj in i..2 {
                    let first: [f64; 2] =
                        [dd[i][jj].dot(&j.column(0)), dd[i][jj].dot(&j.column(1))];
                    for k in 0..2 {
                        let v = ginv[(k, 0)] * first[0] + ginv[(k, 1)] * first[1];
                        gamma.set_sym(k, i, jj, v);
                    }
                }
            }
            gamma
        })
    }
}

/// Triaxial ellipsoid `x²/a² + y²/b² + z²/c² = 1` in the spherical-angle chart
/// `P(θ, φ) = (a sinθ cosφ, b sinθ sinφ, c cosθ)`.
pub fn ellipsoid(a: f64, b: f64, c: f64) -> ChartManifold {
    ellipsoid_surface(a, b, c).into_manifold(format!("ellipsoid({a},{b},{c})"), polar_chart)
}

pub fn ellipsoid_surface(a: f64, b: f64, c: f64) -> EmbeddedSurface {
    EmbeddedSurface::new(move |x| {
        let (st, ct) = x[0].sin_cos();
        let (sp, cp) = x[1].sin_cos();
        DVector::from_vec(vec![a * st * cp, b * st * sp, c * ct])
    })
    .with_derivatives(
        move |x| {
            let (st, ct) = x[0].sin_cos();
            let (sp, cp) = x[1].sin_cos();
            DMatrix::from_row_slice(
                3,
                2,
                &[
                    a * ct * cp,
                    -a * st * sp,
                    b * ct * sp,
                    b * st * cp,
                    -c * st,
                    0.0,
                ],
            )
        },
        move |x| {
            let (st, ct) = x[0].sin_cos();
            let (sp, cp) = x[1].sin_cos();
            let tt = DVector::from_vec(vec![-a * st * cp, -b * st * sp, -c * ct]);
            let tp = DVector::from_vec(vec![-a * ct * sp, b * ct * cp, 0.0]);
            let pp = DVector::from_vec(vec![-a * st * cp, -b * st * sp, 0.0]);
            vec![vec![tt, tp.clone()], vec![tp, pp]]
        },
    )
}
