use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::framebundle::{horizontal_field, FramePoint};
use crate::geometry::curvature::{numerical_rank, RANK_THRESHOLD};
use crate::geometry::ChartManifold;

/// Step of the five-point stencil used for brackets. Large enough that
/// nested differences stay well below the rank threshold.
const BRACKET_STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
enum Field {
    Horizontal(usize),
    Bracket(Box<Field>, Box<Field>),
}

fn eval(m: &ChartManifold, f: &Field, q: &[f64]) -> Result<Vec<f64>> {
    let n = m.dim();
    match f {
        Field::Horizontal(i) => {
            let mut xi = vec![0.0; n];
            xi[*i] = 1.0;
            let mut out = vec![0.0; q.len()];
            horizontal_field(m, q, &xi, &mut out)?;
            Ok(out)
        }
        Field::Bracket(a, b) => {
            // [A, B] = DB·A − DA·B
            let va = eval(m, a, q)?;
            let vb = eval(m, b, q)?;
            let db_a = directional(m, b, q, &va)?;
            let da_b = directional(m, a, q, &vb)?;
            Ok(db_a.iter().zip(&da_b).map(|(x, y)| x - y).collect())
        }
    }
}

/// Derivative of `f` at `q` in direction `dir` by the five-point stencil.
fn directional(m: &ChartManifold, f: &Field, q: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
    let h = BRACKET_STEP;
    let at = |s: f64| -> Result<Vec<f64>> {
        let p: Vec<f64> = q.iter().zip(dir).map(|(a, d)| a + s * h * d).collect();
        eval(m, f, &p)
    };
    let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
    Ok((0..q.len())
        .map(|i| (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h))
        .collect())
}

/// The horizontal fields and their iterated brackets up to `depth`
/// (`depth = 1` is the distribution itself), evaluated at `u` as the columns
/// of a matrix.
pub fn bracket_matrix(m: &ChartManifold, u: &FramePoint, depth: usize) -> Result<DMatrix<f64>> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    let n = m.dim();
    m.check_domain(u.x.as_slice())?;
    let q = u.coords();
    let gens: Vec<Field> = (0..n).map(Field::Horizontal).collect();
    let mut all = gens.clone();
    let mut level = gens.clone();
    for d in 2..=depth {
        let mut next = Vec::new();
        for (i, g) in gens.iter().enumerate() {
            for (j, f) in level.iter().enumerate() {
                // Level two only needs i < j.
                if d == 2 && j <= i {
                    continue;
                }
                next.push(Field::Bracket(Box::new(g.clone()), Box::new(f.clone())));
            }
        }
        all.extend(next.iter().cloned());
        level = next;
    }
    let cols: Vec<DVector<f64>> = all
        .iter()
        .map(|f| eval(m, f, q.as_slice()).map(DVector::from_vec))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Dimension of the span of the horizontal fields and their brackets up to
/// `depth` at `u`. For a surface it is 3 at every frame when the Gaussian
/// curvature is nonzero, and 2 on flat charts.
pub fn hormander_rank(m: &ChartManifold, u: &FramePoint, depth: usize) -> Result<usize> {
    Ok(numerical_rank(
        &bracket_matrix(m, u, depth)?,
        RANK_THRESHOLD,
    ))
}
