use crate::error::{Error, Result};

/// Absolute floor used in the denominator of [`relative_error`]; gradient
/// entries below it are compared on an absolute scale.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

/// Central differences `(f(t + h) - f(t - h)) / 2h` for every coordinate,
/// with `h = step * max(1, |t_i|)`.
pub fn finite_diff<F>(f: F, theta: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut work = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let t = theta[i];
        let h = step * t.abs().max(1.0);
        work[i] = t + h;
        let up = f(&work);
        work[i] = t - h;
        let down = f(&work);
        work[i] = t;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_REL_FLOOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}
