//! Time-sampled paths. The same container carries Euclidean driving paths,
//! base paths on a chart, frame-bundle paths and cotangent trajectories; the
//! meaning of the node vectors is fixed by whoever produced the path.

use std::io::{BufRead, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl SampledPath {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Dimension {
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::InvalidArgument("empty path".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("path times must increase".into()));
        }
        let d = values[0].len();
        if let Some(bad) = values.iter().find(|v| v.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(Self { times, values })
    }

    /// Uniform grid on `[0, horizon]` with `steps` segments.
    pub fn uniform_times(horizon: f64, steps: usize) -> Vec<f64> {
        (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect()
    }

    /// Path `t -> f(t)` sampled on a uniform grid.
    pub fn from_fn(horizon: f64, steps: usize, f: impl Fn(f64) -> DVector<f64>) -> Self {
        let times = Self::uniform_times(horizon, steps);
        let values = times.iter().map(|&t| f(t)).collect();
        Self { times, values }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn value_dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        self.values.last().expect("non-empty path")
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().unwrap() - self.times[0]
    }

    /// First `k` components of every node (e.g. the base point of a
    /// frame-bundle path).
    pub fn head(&self, k: usize) -> SampledPath {
        SampledPath {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.rows(0, k).into_owned())
                .collect(),
        }
    }

    /// Largest node-wise Euclidean distance to another path on the same grid.
    pub fn sup_distance(&self, other: &SampledPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Sum of Euclidean chord lengths.
    pub fn euclidean_length(&self) -> f64 {
        self.values.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum()
    }

    /// Writes `t,<columns...>` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, columns: &[String]) -> Result<()> {
        if columns.len() != self.value_dim() {
            return Err(Error::Dimension {
                expected: self.value_dim(),
                got: columns.len(),
            });
        }
        writeln!(out, "t,{}", columns.join(","))?;
        for (t, v) in self.times.iter().zip(&self.values) {
            write!(out, "{}", fmt_f64(*t))?;
            for x in v.iter() {
                write!(out, ",{}", fmt_f64(*x))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty csv".into()))??;
        let ncol = header.split(',').count();
        if ncol < 2 || !header.starts_with('t') {
            return Err(Error::InvalidArgument(format!(
                "bad path header '{header}'"
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_row(&line, ncol)?;
            times.push(row[0]);
            values.push(DVector::from_column_slice(&row[1..]));
        }
        SampledPath::new(times, values)
    }
}

/// Column names for a frame-bundle path of dimension `n`: `x1..xn`, then
/// `a{i}_{j}` holding component `j` of frame vector `i`, frame by frame
/// (column-major flattening of the frame matrix).
pub fn frame_columns(n: usize) -> Vec<String> {
    let mut cols = point_columns(n);
    for i in 1..=n {
        for j in 1..=n {
            cols.push(format!("a{i}_{j}"));
        }
    }
    cols
}

pub fn point_columns(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_row(line: &str, ncol: usize) -> Result<Vec<f64>> {
    let row: Vec<f64> = line
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("bad number in '{line}': {e}")))?;
    if row.len() != ncol {
        return Err(Error::Dimension {
            expected: ncol,
            got: row.len(),
        });
    }
    Ok(row)
}
