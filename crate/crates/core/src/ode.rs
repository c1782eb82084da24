//! Fixed-step classical Runge–Kutta.

use crate::error::Result;

/// One RK4 step of `y' = f(y)`. `f` writes the derivative into its second
/// argument.
pub(crate) fn rk4_step<F>(f: &mut F, y: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()> + ?Sized,
{
    let d = y.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];

    f(y, &mut k1)?;
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2)?;
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3)?;
    for i in 0..d {
        tmp[i] = y[i] + h * k3[i];
    }
    f(&tmp, &mut k4)?;
    for i in 0..d {
        tmp[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(tmp)
}
