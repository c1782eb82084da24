//! Batch front end. Each run reads one JSON configuration, validates it
//! completely, computes, and only then writes its CSV and JSON outputs.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::framebundle::{FramePoint, SymPoint};
use crate::geometry::{curvature_map_rank, registry, ChartManifold};
use crate::path::{fmt_f64, frame_columns, point_columns};
use crate::statistics::{
    anisotropic_estimate, anisotropy, estimate_mpp_paths, generate_synthetic, mpp_isotropic,
    onsager_machlup, Dataset, EstimatorOptions, MppOptions,
};
use crate::stochastics::{
    sample_moments, simulate_ensemble, small_time_diagnostic, write_diagnostic_csv, BrownianConfig,
    DensityMethod, DiagnosticConfig,
};
use crate::subriemannian::{
    geodesic_flow, hamiltonian, hormander_rank, shoot_to_fiber, CotangentState,
    FiberShootingOptions, GeodesicResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "framestat",
    version,
    about = "Frame-bundle geodesics, anisotropic Brownian motion and estimation on chart manifolds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Endpoints of developed Brownian paths.
    Simulate,
    /// Normal geodesic from an initial covector, or to the fiber over a target.
    Geodesic,
    /// Most probable path to a target.
    Mpp,
    /// Fiber distance to a target.
    Distance,
    /// Anisotropic mean and precision of a dataset.
    Estimate,
    /// Small-time density table and bracket-generating report.
    Diagnose,
    /// Synthetic dataset from developed Brownian motion.
    Generate,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MppMethod {
    /// Projection of the fiber-minimizing geodesic (any frame).
    #[default]
    Driving,
    /// Onsager–Machlup ascent for isotropic Brownian motion.
    Onsager,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShootingConfig {
    pub steps: usize,
    pub path_steps: usize,
    pub tol: f64,
    pub transversality_tol: f64,
    pub starts: usize,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        let d = FiberShootingOptions::default();
        Self {
            steps: d.steps,
            path_steps: d.path_steps,
            tol: d.tol,
            transversality_tol: d.transversality_tol,
            starts: d.starts,
        }
    }
}

impl ShootingConfig {
    fn options(&self, seed: u64) -> FiberShootingOptions {
        FiberShootingOptions {
            steps: self.steps,
            path_steps: self.path_steps,
            tol: self.tol,
            transversality_tol: self.transversality_tol,
            starts: self.starts,
            seed,
            ..FiberShootingOptions::default()
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub max_evals: usize,
    pub eig_min: f64,
    pub eig_max: f64,
    /// Write the most probable path to every data point.
    pub emit_paths: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let d = EstimatorOptions::default();
        Self {
            max_evals: d.max_evals,
            eig_min: d.eig_min,
            eig_max: d.eig_max,
            emit_paths: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    /// `transition` or `kernel`.
    pub method: String,
    pub last_fraction: f64,
    pub bandwidth: Option<f64>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            method: "transition".into(),
            last_fraction: 0.25,
            bandwidth: None,
        }
    }
}

/// One run. Frames are given by matrix rows (columns are the frame
/// vectors); `sigma` is a precision tensor, lifted to a frame when no frame
/// is given; without either the frame is `g`-orthonormal.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub manifold: String,
    pub x0: Option<Vec<f64>>,
    pub frame: Option<Vec<Vec<f64>>>,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub target: Option<Vec<f64>>,
    pub covector: Option<Vec<f64>>,
    pub horizon: f64,
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    /// Dataset CSV, relative to the configuration file.
    pub dataset: Option<PathBuf>,
    pub nodes: usize,
    pub mpp_method: MppMethod,
    pub hormander_depth: usize,
    pub density: DensityConfig,
    pub shooting: ShootingConfig,
    pub estimator: EstimatorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifold: String::new(),
            x0: None,
            frame: None,
            sigma: None,
            target: None,
            covector: None,
            horizon: 1.0,
            n_paths: 1000,
            steps: 100,
            seed: 0,
            times: Vec::new(),
            dataset: None,
            nodes: 101,
            mpp_method: MppMethod::Driving,
            hormander_depth: 3,
            density: DensityConfig::default(),
            shooting: ShootingConfig::default(),
            estimator: EstimatorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    fn manifold(&self) -> Result<ChartManifold> {
        if self.manifold.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "config: 'manifold' is required; known: {}",
                registry::REGISTRY_KEYS.join(", ")
            )));
        }
        registry::from_name(&self.manifold)
    }

    fn x0(&self, m: &ChartManifold) -> Result<Vec<f64>> {
        let x = self
            .x0
            .clone()
            .ok_or_else(|| Error::InvalidArgument("config: 'x0' is required".into()))?;
        check_len(&x, m.dim(), "x0")?;
        m.check_domain(&x)?;
        Ok(x)
    }

    fn frame(&self, m: &ChartManifold) -> Result<FramePoint> {
        let x = self.x0(m)?;
        match (&self.frame, &self.sigma) {
            (Some(_), Some(_)) => Err(Error::InvalidArgument(
                "config: give either 'frame' or 'sigma', not both".into(),
            )),
            (Some(rows), None) => FramePoint::from_rows(&x, rows),
            (None, Some(rows)) => sym_point(&x, rows)?.lift(),
            (None, None) => FramePoint::orthonormal(m, &x),
        }
    }

    fn target(&self, m: &ChartManifold) -> Result<Vec<f64>> {
        let y = self
            .target
            .clone()
            .ok_or_else(|| Error::InvalidArgument("config: 'target' is required".into()))?;
        check_len(&y, m.dim(), "target")?;
        m.check_domain(&y)?;
        Ok(y)
    }

    fn brownian(&self, m: &ChartManifold) -> Result<BrownianConfig> {
        BrownianConfig::new(m.dim(), self.horizon, self.steps, self.seed, self.n_paths)
    }
}

fn check_len(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::InvalidArgument(format!(
            "config: '{what}' has {} entries, expected {n}",
            v.len()
        )));
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "config: '{what}' is not finite"
        )));
    }
    Ok(())
}

fn sym_point(x: &[f64], rows: &[Vec<f64>]) -> Result<SymPoint> {
    let n = x.len();
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "config: 'sigma' must be {n}x{n}"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    SymPoint::new(
        DVector::from_column_slice(x),
        DMatrix::from_row_slice(n, n, &flat),
    )
}

fn row_major(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Files produced by a run, written only once everything succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn csv(
        &mut self,
        name: impl Into<PathBuf>,
        write: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn json(&mut self, name: impl Into<PathBuf>, value: &Value) {
        let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
        text.push('\n');
        self.files.push((name.into(), text.into_bytes()));
    }

    pub fn write_all(&self, dir: &Path) -> Result<()> {
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, bytes)?;
        }
        Ok(())
    }
}

/// A failed run, possibly with a report to write anyway.
#[derive(Debug)]
pub struct Failure {
    pub error: Error,
    pub outputs: Outputs,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self {
            error,
            outputs: Outputs::default(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// Shooting failures still report the best attempt.
fn shooting_failure(e: Error, name: &str) -> Failure {
    let mut outputs = Outputs::default();
    if let Error::ShootingFailed { best } = &e {
        outputs.json(name, &best.to_json(""));
    }
    Failure { error: e, outputs }
}

fn geodesic_outputs(
    out: &mut Outputs,
    r: &GeodesicResult,
    n: usize,
    stem: &str,
    base_only: bool,
) -> Result<()> {
    let csv = format!("{stem}.csv");
    if base_only {
        out.csv(&csv, |w| r.base_path(n).write_csv(w, &point_columns(n)))?;
    } else {
        out.csv(&csv, |w| r.path.write_csv(w, &frame_columns(n)))?;
    }
    let mut j = r.to_json(&csv);
    j["transversality_residual"] = json!(r.transversality_residual);
    j["local_lengths"] = json!(r.local_lengths);
    out.json(format!("{stem}.json"), &j);
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Outputs> {
    let m = cfg.manifold()?;
    let u0 = cfg.frame(&m)?;
    let bm = cfg.brownian(&m)?;
    let ens = simulate_ensemble(&m, &u0, &bm)?;
    let (mean, cov) = ens.endpoint_moments();
    let mut out = Outputs::default();
    out.csv("ensemble.csv", |w| ens.write_csv(w))?;
    out.json(
        "summary.json",
        &json!({
            "manifold": m.name(),
            "x0": u0.x.as_slice(),
            "frame": row_major(&u0.alpha),
            "horizon": bm.horizon,
            "steps": bm.steps,
            "n_paths": bm.n_paths,
            "seed": bm.seed,
            "mean": mean.as_slice(),
            "covariance": row_major(&cov),
            "discards": ens.stats,
        }),
    );
    Ok(out)
}

fn cmd_generate(cfg: &ExperimentConfig) -> Result<Outputs> {
    let m = cfg.manifold()?;
    let u0 = cfg.frame(&m)?;
    cfg.brownian(&m)?;
    let data = generate_synthetic(&m, &u0, cfg.horizon, cfg.n_paths, cfg.seed, cfg.steps)?;
    let (mean, cov) = sample_moments(&data.points);
    let mut out = Outputs::default();
    out.csv("dataset.csv", |w| data.write_csv(w))?;
    out.json(
        "generate.json",
        &json!({
            "manifold": m.name(),
            "n": data.len(),
            "horizon": cfg.horizon,
            "steps": cfg.steps,
            "seed": cfg.seed,
            "ground_truth": { "x0": u0.x.as_slice(), "frame": row_major(&u0.alpha) },
            "mean": mean.as_slice(),
            "covariance": row_major(&cov),
            "dataset_csv_ref": "dataset.csv",
        }),
    );
    Ok(out)
}

fn cmd_geodesic(cfg: &ExperimentConfig) -> Result<Outputs, Failure> {
    let m = cfg.manifold()?;
    let u0 = cfg.frame(&m)?;
    let n = m.dim();
    let mut out = Outputs::default();
    match (&cfg.covector, &cfg.target) {
        (Some(p), None) => {
            check_len(p, n + n * n, "covector")?;
            let s0 = CotangentState::new(&u0, DVector::from_column_slice(p))?;
            let h = hamiltonian(&m, &s0)?;
            let path = geodesic_flow(&m, &s0, cfg.horizon, cfg.shooting.path_steps.max(1))?
                .head(n + n * n);
            out.csv("geodesic.csv", |w| path.write_csv(w, &frame_columns(n)))?;
            out.json(
                "geodesic.json",
                &json!({
                    "length": cfg.horizon * (2.0 * h).sqrt(),
                    "hamiltonian": h,
                    "converged": true,
                    "covector": p,
                    "endpoint": path.end().as_slice(),
                    "path_csv_ref": "geodesic.csv",
                }),
            );
        }
        (None, Some(_)) => {
            let y = cfg.target(&m)?;
            let r = shoot_to_fiber(&m, &u0, &y, &cfg.shooting.options(cfg.seed))
                .map_err(|e| shooting_failure(e, "geodesic.json"))?;
            geodesic_outputs(&mut out, &r, n, "geodesic", false)?;
        }
        _ => {
            return Err(Error::InvalidArgument(
                "config: geodesic needs exactly one of 'covector' and 'target'".into(),
            )
            .into())
        }
    }
    Ok(out)
}

fn cmd_distance(cfg: &ExperimentConfig) -> Result<Outputs, Failure> {
    let m = cfg.manifold()?;
    let u0 = cfg.frame(&m)?;
    let y = cfg.target(&m)?;
    let r = shoot_to_fiber(&m, &u0, &y, &cfg.shooting.options(cfg.seed))
        .map_err(|e| shooting_failure(e, "distance.json"))?;
    let mut out = Outputs::default();
    geodesic_outputs(&mut out, &r, m.dim(), "distance", true)?;
    Ok(out)
}

fn cmd_mpp(cfg: &ExperimentConfig) -> Result<Outputs, Failure> {
    let m = cfg.manifold()?;
    let n = m.dim();
    let mut out = Outputs::default();
    match cfg.mpp_method {
        MppMethod::Driving => {
            let u0 = cfg.frame(&m)?;
            let y = cfg.target(&m)?;
            let r = shoot_to_fiber(&m, &u0, &y, &cfg.shooting.options(cfg.seed))
                .map_err(|e| shooting_failure(e, "mpp.json"))?;
            geodesic_outputs(&mut out, &r, n, "mpp", true)?;
        }
        MppMethod::Onsager => {
            let x0 = cfg.x0(&m)?;
            let y = cfg.target(&m)?;
            let path = mpp_isotropic(&m, &x0, &y, cfg.nodes, &MppOptions::default())?;
            let om = onsager_machlup(&m, &path)?;
            out.csv("mpp.csv", |w| path.write_csv(w, &point_columns(n)))?;
            out.json(
                "mpp.json",
                &json!({
                    "method": "onsager",
                    "onsager_machlup": om,
                    "nodes": path.len(),
                    "converged": true,
                    "path_csv_ref": "mpp.csv",
                }),
            );
        }
    }
    Ok(out)
}

fn cmd_estimate(cfg: &ExperimentConfig, config_dir: &Path) -> Result<Outputs> {
    let m = cfg.manifold()?;
    let rel = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config: 'dataset' is required".into()))?;
    let path = config_dir.join(rel);
    let file = fs::File::open(&path).map_err(|e| {
        Error::InvalidArgument(format!(
            "config: cannot read dataset {}: {e}",
            path.display()
        ))
    })?;
    let data = Dataset::read_csv(&m, BufReader::new(file))?;
    if data.len() <= m.dim() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} points; need more than {} to estimate a precision",
            data.len(),
            m.dim()
        )));
    }
    let shooting = cfg.shooting.options(cfg.seed);
    let opts = EstimatorOptions {
        max_evals: cfg.estimator.max_evals,
        eig_min: cfg.estimator.eig_min,
        eig_max: cfg.estimator.eig_max,
        shooting: shooting.clone(),
        ..EstimatorOptions::default()
    };
    let r = anisotropic_estimate(&m, &data, &opts)?;
    let mut j = r.to_json();
    let an = anisotropy(&m, &r.covariance_hat(), r.x_hat.as_slice())?;
    j["manifold"] = json!(m.name());
    j["n_points"] = json!(data.len());
    j["anisotropy_ratio"] = json!(an.ratio);
    j["major_axis"] = json!(an.major_axis.as_slice());
    j["trace_csv_ref"] = json!("trace.csv");

    let mut out = Outputs::default();
    out.csv("trace.csv", |w| {
        use std::io::Write;
        writeln!(w, "iteration,objective")?;
        for (i, f) in r.history.iter().enumerate() {
            writeln!(w, "{i},{}", fmt_f64(*f))?;
        }
        Ok(())
    })?;
    if cfg.estimator.emit_paths {
        let paths = estimate_mpp_paths(&m, &data, &r, &shooting)?;
        let refs: Vec<String> = (0..paths.len())
            .map(|i| format!("mpp/point_{i:04}.csv"))
            .collect();
        for (p, name) in paths.iter().zip(&refs) {
            out.csv(name, |w| p.write_csv(w, &point_columns(m.dim())))?;
        }
        j["mpp_csv_refs"] = json!(refs);
    }
    out.json("estimate.json", &j);
    Ok(out)
}

fn cmd_diagnose(cfg: &ExperimentConfig) -> Result<Outputs> {
    let m = cfg.manifold()?;
    let u0 = cfg.frame(&m)?;
    let n = m.dim();
    let x0 = u0.x.as_slice().to_vec();
    let method = match cfg.density.method.as_str() {
        "transition" => DensityMethod::Transition {
            last_fraction: cfg.density.last_fraction,
        },
        "kernel" => DensityMethod::Kernel {
            bandwidth: cfg.density.bandwidth,
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "config: unknown density method '{other}'; use 'transition' or 'kernel'"
            )))
        }
    };
    let table = match &cfg.target {
        Some(_) => {
            let y = cfg.target(&m)?;
            if cfg.times.is_empty() || cfg.times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                return Err(Error::InvalidArgument(
                    "config: 'times' must be a non-empty list of positive times".into(),
                ));
            }
            BrownianConfig::new(n, 1.0, cfg.steps, cfg.seed, cfg.n_paths)?;
            Some(y)
        }
        None => None,
    };
    let depth = cfg.hormander_depth;
    let rank = hormander_rank(&m, &u0, depth)?;
    let curv = curvature_map_rank(&m, &x0)?;
    let full = n + n * n;
    let pairs = n * (n - 1) / 2;
    let mut out = Outputs::default();
    if let Some(y) = table {
        let dcfg = DiagnosticConfig {
            n_paths: cfg.n_paths,
            steps: cfg.steps,
            seed: cfg.seed,
            method,
            shooting: cfg.shooting.options(cfg.seed),
        };
        let rows = small_time_diagnostic(&m, &u0, &y, &cfg.times, &dcfg)?;
        out.csv("diagnostic.csv", |w| write_diagnostic_csv(&rows, w))?;
    }
    out.json(
        "hormander.json",
        &json!({
            "manifold": m.name(),
            "x0": x0,
            "depth": depth,
            "hormander_rank": rank,
            "frame_bundle_dim": full,
            "bracket_generating": rank == full,
            "horizontal_rank": n,
            "curvature_map_rank": curv,
            "curvature_map_full_rank": pairs,
            "curvature_map_injective": curv == pairs,
            "diagnostic_csv_ref": if cfg.target.is_some() { json!("diagnostic.csv") } else { Value::Null },
        }),
    );
    Ok(out)
}

/// Runs one subcommand and returns the files it produced.
pub fn execute(
    command: Command,
    cfg: &ExperimentConfig,
    config_dir: &Path,
) -> Result<Outputs, Failure> {
    match command {
        Command::Simulate => Ok(cmd_simulate(cfg)?),
        Command::Generate => Ok(cmd_generate(cfg)?),
        Command::Geodesic => cmd_geodesic(cfg),
        Command::Distance => cmd_distance(cfg),
        Command::Mpp => cmd_mpp(cfg),
        Command::Estimate => Ok(cmd_estimate(cfg, config_dir)?),
        Command::Diagnose => Ok(cmd_diagnose(cfg)?),
    }
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| {
        Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
    })?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, dir))
}

/// Parses arguments, runs, writes outputs and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_CONFIG;
        }
        // A pool may already exist when embedded; the setting is advisory.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    let (cfg, dir) = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match execute(cli.command, &cfg, &dir) {
        Ok(out) => match out.write_all(&cli.out) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
        Err(f) => {
            eprintln!("error: {}", f.error);
            if let Err(e) = f.outputs.write_all(&cli.out) {
                eprintln!("error: {e}");
            }
            exit_code(&f.error)
        }
    }
}
