use serde::{Deserialize, Serialize};

use super::{ParamTensor, RngState};
use crate::error::{Error, Result};

/// Weight initialisation law. Kernel checks sample value networks from
/// `Bernoulli`; training may use either.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    Bernoulli,
    Gaussian,
}

impl InitScheme {
    pub fn sample(self, shape: Vec<usize>, sigma: f64, rng: &mut RngState) -> Result<ParamTensor> {
        match self {
            InitScheme::Bernoulli => init_bernoulli(shape, sigma, rng),
            InitScheme::Gaussian => init_gaussian(shape, sigma, rng),
        }
    }
}

/// i.i.d. entries, each `+sigma` or `-sigma` with probability one half.
pub fn init_bernoulli(shape: Vec<usize>, sigma: f64, rng: &mut RngState) -> Result<ParamTensor> {
    check_sigma(sigma)?;
    let n = checked_count(&shape)?;
    let values = (0..n).map(|_| sigma * rng.sign()).collect();
    ParamTensor::new(shape, values)
}

/// i.i.d. N(0, sigma^2) entries.
pub fn init_gaussian(shape: Vec<usize>, sigma: f64, rng: &mut RngState) -> Result<ParamTensor> {
    check_sigma(sigma)?;
    let n = checked_count(&shape)?;
    let values = (0..n).map(|_| sigma * rng.normal()).collect();
    ParamTensor::new(shape, values)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )))
    }
}

fn checked_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::invalid(format!("bad tensor shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_is_plus_minus_sigma() {
        let mut rng = RngState::new(3);
        let t = init_bernoulli(vec![2, 2], 0.5, &mut rng).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.values().iter().all(|&v| v == 0.5 || v == -0.5));
    }

    #[test]
    fn sigma_from_width_scaling() {
        // c_scale = 1, w = 4
        let sigma = 1.0 / (4.0f64).sqrt();
        let mut rng = RngState::new(9);
        let t = init_bernoulli(vec![4, 4], sigma, &mut rng).unwrap();
        assert!(t.values().iter().all(|&v| v.abs() == 0.5));
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let mut rng = RngState::new(0);
        assert!(init_bernoulli(vec![2], 0.0, &mut rng).is_err());
        assert!(init_bernoulli(vec![2], -1.0, &mut rng).is_err());
        assert!(init_gaussian(vec![2], 0.0, &mut rng).is_err());
    }

    #[test]
    fn empirical_mean_and_sign_balance() {
        let n = 100_000;
        let mut rng = RngState::new(2024);
        let t = init_bernoulli(vec![n], 1.0, &mut rng).unwrap();
        let mean = t.values().iter().sum::<f64>() / n as f64;
        // std of a +-1 draw is 1, so the standard error is 1/sqrt(n)
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
        let frac = t.values().iter().filter(|&&v| v > 0.0).count() as f64 / n as f64;
        assert!((0.49..=0.51).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = init_bernoulli(vec![3, 5], 0.3, &mut RngState::new(11)).unwrap();
        let b = init_bernoulli(vec![3, 5], 0.3, &mut RngState::new(11)).unwrap();
        assert_eq!(a, b);
    }
}
