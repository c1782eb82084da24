//! Acceptance criteria. Each prints one PASS/FAIL line; the run fails if any
//! criterion fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use framestat::framebundle::{act, antidevelop, develop, FramePoint, SymPoint};
use framestat::geometry::registry::{ellipsoid, euclidean, flat_torus, sphere};
use framestat::geometry::{curvature_map_rank, log_map, riemannian_geodesic, ShootingOptions};
use framestat::statistics::{
    anisotropic_estimate, anisotropy, axis_angle, estimate_mpp_paths, generate_synthetic,
    mpp_isotropic, EstimatorOptions, MppOptions,
};
use framestat::stochastics::{
    brownian_path, gaussian_ratio, small_time_diagnostic, stochastic_develop, BrownianConfig,
    DiagnosticConfig,
};
use framestat::subriemannian::{
    dist_sym, geodesic_flow, hamiltonian, hormander_rank, mpp_driving, CotangentState,
    FiberShootingOptions,
};
use framestat::{ChartManifold, SampledPath};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Closed-form objective on the plane at `x = 0`.
fn plane_objective(points: &[[f64; 2]], s: &DMatrix<f64>) -> f64 {
    let quad: f64 = points
        .iter()
        .map(|p| {
            let y = DVector::from_column_slice(p);
            (y.transpose() * s * &y)[0]
        })
        .sum();
    quad - 0.5 * points.len() as f64 * s.determinant().ln()
}

fn c1_estimator_plane() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let points = [[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]];
    let csv: String = std::iter::once("x1,x2".to_string())
        .chain(points.iter().map(|p| format!("{},{}", p[0], p[1])))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.path().join("points.csv"), csv).map_err(|e| e.to_string())?;
    std::fs::write(
        dir.path().join("config.json"),
        r#"{"manifold": "euclidean(2)", "dataset": "points.csv"}"#,
    )
    .map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_framestat"))
        .arg("estimate")
        .arg("--config")
        .arg(dir.path().join("config.json"))
        .arg("--out")
        .arg(&out)
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("estimate exited with {status}"));
    }
    let json: serde_json::Value = serde_json::from_slice(
        &std::fs::read(out.join("estimate.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let x: Vec<f64> = serde_json::from_value(json["x_hat"].clone()).map_err(|e| e.to_string())?;
    let s: Vec<f64> =
        serde_json::from_value(json["sigma_hat"].clone()).map_err(|e| e.to_string())?;
    let s = DMatrix::from_row_slice(2, 2, &s);

    // Stationary point of Σ yᵀσy − (N/2) log det σ: σ⁻¹ = (2/N) Σ y yᵀ.
    let mut scatter = DMatrix::zeros(2, 2);
    for p in &points {
        let y = DVector::from_column_slice(p);
        scatter += &y * y.transpose();
    }
    let analytic = (scatter * (2.0 / points.len() as f64))
        .try_inverse()
        .unwrap();
    // Grid search around it confirms the minimum.
    let f0 = plane_objective(&points, &analytic);
    let mut grid_ok = true;
    for i in -3..=3 {
        for j in -3..=3 {
            for k in -3..=3 {
                let d = DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        0.02 * i as f64,
                        0.01 * k as f64,
                        0.01 * k as f64,
                        0.01 * j as f64,
                    ],
                );
                let cand = &analytic + d;
                if cand.clone().cholesky().is_some() && plane_objective(&points, &cand) < f0 - 1e-12
                {
                    grid_ok = false;
                }
            }
        }
    }
    let ex = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let es = (&s - &analytic).amax();
    let secs = start.elapsed().as_secs_f64();
    check(
        ex < 1e-6 && es < 1e-4 && grid_ok && secs < 60.0,
        format!(
            "|x_hat| = {ex:.2e}, |sigma_hat - diag(1, 1/4)| = {es:.2e} (covariance diag(1, 4)), grid minimum {grid_ok}, {secs:.1} s"
        ),
    )
}

fn c2_flat_distance() -> Outcome {
    let m = euclidean(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = FiberShootingOptions::default();
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let a = DMatrix::from_fn(2, 2, |_, _| uniform(&mut rng, -1.0, 1.0));
        let sigma = &a * a.transpose() + DMatrix::identity(2, 2) * 0.3;
        let y = DVector::from_fn(2, |_, _| uniform(&mut rng, -2.0, 2.0));
        let exact = (y.transpose() * &sigma * &y)[0].sqrt();
        let sp = SymPoint::new(DVector::zeros(2), sigma).map_err(|e| e.to_string())?;
        let d = dist_sym(&m, &sp, y.as_slice(), &opts).map_err(|e| e.to_string())?;
        worst = worst.max((d - exact).abs());
    }
    check(
        worst < 1e-6,
        format!("max |dist_sym - sqrt(y'σy)| = {worst:.2e} over 25 pairs"),
    )
}

fn c3_isotropic_fiber_distance() -> Outcome {
    let m = sphere(1.0);
    let x0 = [1.3, 0.2];
    let sp = SymPoint::new(DVector::from_column_slice(&x0), m.metric(&x0).unwrap())
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = FiberShootingOptions::default();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let y = [uniform(&mut rng, 0.5, 2.6), uniform(&mut rng, -1.3, 1.7)];
        let d = dist_sym(&m, &sp, &y, &opts).map_err(|e| e.to_string())?;
        let dg = m.distance(&x0, &y).map_err(|e| e.to_string())?;
        worst = worst.max((d - dg).abs());
    }
    check(
        worst < 1e-4,
        format!("max |dist_sym - d_g| = {worst:.2e} at 10 targets"),
    )
}

fn conservation(m: &ChartManifold, x: &[f64], rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let n = m.dim();
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut tries = 0;
    while done < 10 {
        tries += 1;
        if tries > 100 {
            return Err("could not draw covectors that stay in the chart".into());
        }
        let a = DMatrix::from_fn(n, n, |i, j| {
            f64::from(u8::from(i == j)) + uniform(rng, -0.3, 0.3)
        });
        let u0 = FramePoint::new(
            DVector::from_column_slice(x),
            m.metric_inverse(x).unwrap().cholesky().unwrap().l() * a,
        )
        .map_err(|e| e.to_string())?;
        let p = DVector::from_fn(n + n * n, |_, _| uniform(rng, -1.0, 1.0));
        let s0 = CotangentState::new(&u0, p).map_err(|e| e.to_string())?;
        let h0 = hamiltonian(m, &s0).map_err(|e| e.to_string())?;
        let Ok(flow) = geodesic_flow(m, &s0, 1.0, 2000) else {
            continue;
        };
        let big = n + n * n;
        for v in &flow.values {
            let s = CotangentState {
                q: v.rows(0, big).into_owned(),
                p: v.rows(big, big).into_owned(),
            };
            let h = hamiltonian(m, &s).map_err(|e| e.to_string())?;
            worst = worst.max((h - h0).abs() / h0);
        }
        done += 1;
    }
    Ok(worst)
}

fn c4_hamiltonian_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let plane = conservation(&euclidean(2), &[0.3, -0.2], &mut rng)?;
    let sph = conservation(&sphere(1.0), &[1.2, 0.4], &mut rng)?;
    let ell = conservation(&ellipsoid(1.0, 0.8, 0.6), &[1.4, 0.3], &mut rng)?;
    let worst = plane.max(sph).max(ell);
    check(
        worst < 1e-6,
        format!("max relative drift: plane {plane:.1e}, sphere {sph:.1e}, ellipsoid {ell:.1e}"),
    )
}

fn c5_development_invariances() -> Outcome {
    let m = sphere(1.0);
    let x0 = [FRAC_PI_2, 0.0];
    let u0 = FramePoint::orthonormal(&m, &x0).map_err(|e| e.to_string())?;

    // (a) orthonormal frames stay orthonormal.
    let cfg = BrownianConfig::new(2, 0.5, 1000, 5, 1000).map_err(|e| e.to_string())?;
    let mut drift = 0.0;
    let mut drift_max = 0.0;
    let mut kept = 0;
    for i in 0..cfg.n_paths as u64 {
        let w = brownian_path(&cfg, i);
        if let Ok(path) = stochastic_develop(&m, &u0, &w) {
            let mut worst = 0.0f64;
            let mut last = 0.0;
            for q in &path.values {
                let u = FramePoint::from_coords(2, q.as_slice()).map_err(|e| e.to_string())?;
                let gram = u.gram(&m).map_err(|e| e.to_string())?;
                last = (gram - DMatrix::<f64>::identity(2, 2)).amax();
                worst = worst.max(last);
            }
            drift += last;
            drift_max += worst;
            kept += 1;
        }
    }
    let drift = drift / kept as f64;
    let drift_max = drift_max / kept as f64;

    // (b) (u0·a, a⁻¹w) and (u0, w) have the same base path.
    let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, -0.2, 0.7]);
    let a_inv = a.clone().try_inverse().unwrap();
    let ua = act(&u0, &a).map_err(|e| e.to_string())?;
    let cfg_b = BrownianConfig::new(2, 0.2, 500, 6, 20).map_err(|e| e.to_string())?;
    let mut equiv = 0.0f64;
    let mut compared = 0;
    for i in 0..cfg_b.n_paths as u64 {
        let w = brownian_path(&cfg_b, i);
        let wa = SampledPath {
            times: w.times.clone(),
            values: w.values.iter().map(|v| &a_inv * v).collect(),
        };
        // Pairs that leave the chart are skipped.
        if let (Ok(p), Ok(q)) = (
            stochastic_develop(&m, &u0, &w),
            stochastic_develop(&m, &ua, &wa),
        ) {
            equiv = equiv.max(p.head(2).sup_distance(&q.head(2)));
            compared += 1;
        }
    }

    // (c) anti-development inverts development.
    let w = SampledPath::from_fn(1.0, 2000, |t| {
        DVector::from_vec(vec![0.8 * (3.0 * t).sin(), 0.6 * t * t - 0.3 * t])
    });
    let u1 = FramePoint::new(
        DVector::from_column_slice(&[1.1, 0.3]),
        DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 1.3]),
    )
    .map_err(|e| e.to_string())?;
    let dev = develop(&m, &u1, &w).map_err(|e| e.to_string())?;
    let back = antidevelop(&m, &u1, &dev.head(2)).map_err(|e| e.to_string())?;
    let inv = back.sup_distance(&w);

    check(
        drift < 5e-3 && compared >= 15 && equiv < 1e-6 && inv < 1e-4,
        format!("(a) mean Gram drift at T {drift:.2e} (running max {drift_max:.2e}) over {kept} paths, (b) equivariance {equiv:.2e} over {compared} paths, (c) antidevelop∘develop {inv:.2e}"),
    )
}

fn c6_small_time() -> Outcome {
    let plane = euclidean(2);
    let u0 =
        FramePoint::new(DVector::zeros(2), DMatrix::identity(2, 2)).map_err(|e| e.to_string())?;
    let y = [0.5, 0.3];
    let cfg = DiagnosticConfig {
        n_paths: 100_000,
        steps: 100,
        seed: 6,
        ..Default::default()
    };
    let rows = small_time_diagnostic(&plane, &u0, &y, &[0.05, 0.1, 0.2], &cfg)
        .map_err(|e| e.to_string())?;
    let mut plane_ok = true;
    let mut detail = String::new();
    for r in &rows {
        let exact = gaussian_ratio(r.t, r.d2, 2, 1.0);
        let z = (r.ratio - exact).abs() / r.stderr;
        plane_ok &= z <= 3.0;
        detail += &format!(
            "t={} ratio {:.4} exact {:.4} ({z:.1} SE); ",
            r.t, r.ratio, exact
        );
    }

    let s = sphere(1.0);
    let x0 = [FRAC_PI_2, 0.0];
    let us = FramePoint::orthonormal(&s, &x0).map_err(|e| e.to_string())?;
    let cfg = DiagnosticConfig {
        n_paths: 200_000,
        steps: 100,
        seed: 7,
        ..Default::default()
    };
    let rows = small_time_diagnostic(&s, &us, &[FRAC_PI_2 - 0.8, 0.0], &[0.05], &cfg)
        .map_err(|e| e.to_string())?;
    let ratio = rows[0].ratio;
    let sphere_ok = (0.75..=1.35).contains(&ratio);
    detail += &format!("sphere t=0.05 ratio {ratio:.4}");
    check(plane_ok && sphere_ok, detail)
}

fn c7_mpp() -> Outcome {
    let opts = FiberShootingOptions::default();
    let plane = euclidean(2);
    let u0 = FramePoint::new(
        DVector::zeros(2),
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 0.7]),
    )
    .map_err(|e| e.to_string())?;
    let y = DVector::from_vec(vec![1.5, -0.8]);
    let p = mpp_driving(&plane, &u0, y.as_slice(), &opts).map_err(|e| e.to_string())?;
    let chord = p
        .times
        .iter()
        .zip(&p.values)
        .map(|(t, v)| (v - &y * *t).amax())
        .fold(0.0, f64::max);

    let s = sphere(1.0);
    let x0 = [1.1, -0.3];
    let ys = [1.9, 0.9];
    let us = FramePoint::orthonormal(&s, &x0).map_err(|e| e.to_string())?;
    let mpp = mpp_driving(&s, &us, &ys, &opts).map_err(|e| e.to_string())?;
    let v = log_map(&s, &x0, &ys, &ShootingOptions::default())
        .map_err(|e| e.to_string())?
        .velocity;
    let geo = riemannian_geodesic(&s, &x0, v.as_slice(), 1.0, mpp.len() - 1)
        .map_err(|e| e.to_string())?;
    let driving = mpp.sup_distance(&geo);

    let iso =
        mpp_isotropic(&s, &x0, &ys, 101, &MppOptions::default()).map_err(|e| e.to_string())?;
    let geo = riemannian_geodesic(&s, &x0, v.as_slice(), 1.0, 100).map_err(|e| e.to_string())?;
    let om = iso.sup_distance(&geo);

    check(
        chord < 1e-8 && driving < 1e-4 && om < 1e-4,
        format!("plane chord deviation {chord:.2e}, sphere driving MPP vs great circle {driving:.2e}, Onsager-Machlup MPP vs geodesic {om:.2e}"),
    )
}

fn c8_hormander() -> Outcome {
    let plane = euclidean(2);
    let torus = flat_torus(2.0 * PI, 2.0 * PI);
    let s = sphere(1.0);
    let e = ellipsoid(1.0, 0.8, 0.6);
    let frame = |m: &ChartManifold, x: &[f64]| FramePoint::orthonormal(m, x).unwrap();
    let x = [1.0, 0.4];
    let ranks = [
        hormander_rank(&plane, &frame(&plane, &x), 3).map_err(|e| e.to_string())?,
        hormander_rank(&torus, &frame(&torus, &x), 3).map_err(|e| e.to_string())?,
        hormander_rank(&s, &frame(&s, &x), 3).map_err(|e| e.to_string())?,
        hormander_rank(&e, &frame(&e, &x), 3).map_err(|e| e.to_string())?,
    ];
    let curv = [
        curvature_map_rank(&plane, &x).map_err(|e| e.to_string())?,
        curvature_map_rank(&torus, &x).map_err(|e| e.to_string())?,
        curvature_map_rank(&s, &x).map_err(|e| e.to_string())?,
        curvature_map_rank(&e, &x).map_err(|e| e.to_string())?,
    ];
    check(
        ranks == [2, 2, 3, 3] && curv == [0, 0, 1, 1],
        format!(
            "bracket ranks plane/torus/sphere/ellipsoid {ranks:?}, curvature map ranks {curv:?}"
        ),
    )
}

fn c9_ellipsoid_estimate() -> Outcome {
    let start = Instant::now();
    let m = ellipsoid(1.0, 1.0, 0.6);
    let x0 = [FRAC_PI_2, 0.0];
    let g = m.metric(&x0).unwrap();
    // g-orthonormal pair turned 30° from the equator, lengths 1 and 1/3.
    let ang = 30f64.to_radians();
    let e1 = DVector::from_vec(vec![
        ang.sin() / g[(0, 0)].sqrt(),
        ang.cos() / g[(1, 1)].sqrt(),
    ]);
    let e2 = DVector::from_vec(vec![
        ang.cos() / g[(0, 0)].sqrt(),
        -ang.sin() / g[(1, 1)].sqrt(),
    ]);
    let alpha = DMatrix::from_columns(&[e1, e2 / 3.0]);
    let u0 = FramePoint::new(DVector::from_column_slice(&x0), alpha.clone())
        .map_err(|e| e.to_string())?;
    let data = generate_synthetic(&m, &u0, 0.2, 40, 1, 100).map_err(|e| e.to_string())?;
    let r =
        anisotropic_estimate(&m, &data, &EstimatorOptions::default()).map_err(|e| e.to_string())?;
    let paths = estimate_mpp_paths(&m, &data, &r, &FiberShootingOptions::default())
        .map_err(|e| e.to_string())?;
    let ends_ok = paths
        .iter()
        .zip(&data.points)
        .all(|(p, y)| (p.end() - y).amax() < 1e-6);

    let est = anisotropy(&m, &r.covariance_hat(), r.x_hat.as_slice()).map_err(|e| e.to_string())?;
    let truth = anisotropy(&m, &(&alpha * alpha.transpose()), &x0).map_err(|e| e.to_string())?;
    let angle = axis_angle(
        &m,
        r.x_hat.as_slice(),
        est.major_axis.as_slice(),
        truth.major_axis.as_slice(),
    )
    .map_err(|e| e.to_string())?
    .to_degrees();
    let rel = (est.ratio - truth.ratio).abs() / truth.ratio;
    let secs = start.elapsed().as_secs_f64();
    check(
        angle < 15.0 && rel < 0.3 && ends_ok && paths.len() == 40 && secs < 1800.0,
        format!(
            "axis error {angle:.2}°, ratio {:.3} vs {:.3} ({:.1}%), {} MPP paths, converged {}, {secs:.0} s",
            est.ratio,
            truth.ratio,
            100.0 * rel,
            paths.len(),
            r.converged
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "Euclidean estimator reduction", c1_estimator_plane),
        (2, "flat anisotropic distance", c2_flat_distance),
        (
            3,
            "isotropic fiber-distance equality",
            c3_isotropic_fiber_distance,
        ),
        (4, "Hamiltonian conservation", c4_hamiltonian_conservation),
        (5, "development invariances", c5_development_invariances),
        (6, "small-time asymptotics", c6_small_time),
        (7, "most probable paths", c7_mpp),
        (8, "Hormander diagnostics", c8_hormander),
        (9, "ellipsoid anisotropy recovery", c9_ellipsoid_estimate),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|s| s == &id.to_string()) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {:?}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(p.downcast_ref::<&str>().copied())
            ))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {id} ({name}): {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {d} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
