use std::io::{BufRead, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::framebundle::FramePoint;
use crate::geometry::ChartManifold;
use crate::path::{fmt_f64, parse_row, point_columns};

/// Chart points on a manifold, optionally with the frame they were
/// simulated from.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifold: String,
    pub points: Vec<DVector<f64>>,
    pub ground_truth: Option<FramePoint>,
}

impl Dataset {
    pub fn new(m: &ChartManifold, points: Vec<DVector<f64>>) -> Result<Self> {
        for p in &points {
            if p.len() != m.dim() {
                return Err(Error::Dimension {
                    expected: m.dim(),
                    got: p.len(),
                });
            }
            m.check_domain(p.as_slice())?;
        }
        Ok(Self {
            manifold: m.name().to_string(),
            points,
            ground_truth: None,
        })
    }

    pub fn with_ground_truth(mut self, u0: FramePoint) -> Self {
        self.ground_truth = Some(u0);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// Arithmetic mean of the chart coordinates.
    pub fn chart_mean(&self) -> DVector<f64> {
        let n = self.dim();
        self.points.iter().fold(DVector::zeros(n), |a, p| a + p) / self.len().max(1) as f64
    }

    /// CSV with header `x1..xn`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", point_columns(self.dim()).join(","))?;
        for p in &self.points {
            let row: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(m: &ChartManifold, input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty dataset file".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != point_columns(m.dim()) {
            return Err(Error::InvalidArgument(format!(
                "dataset header must be {}, got '{header}'",
                point_columns(m.dim()).join(",")
            )));
        }
        let mut points = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            points.push(DVector::from_vec(parse_row(&line, m.dim())?));
        }
        Self::new(m, points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::registry::{euclidean, sphere};

    #[test]
    fn csv_roundtrip() {
        let m = euclidean(2);
        let d = Dataset::new(
            &m,
            vec![
                DVector::from_vec(vec![0.1, 1.0 / 3.0]),
                DVector::from_vec(vec![-2.0, 5e-9]),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x1,x2\n"));
        assert_eq!(Dataset::read_csv(&m, buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn points_must_lie_in_the_chart() {
        let m = sphere(1.0);
        assert!(Dataset::new(&m, vec![DVector::from_vec(vec![0.0, 0.0])]).is_err());
        assert!(Dataset::read_csv(&m, "x1,x3\n1,0\n".as_bytes()).is_err());
    }
}
