use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{npk_conv, npk_fc, npk_res_ensemble, KernelConstants};
use crate::arch::{
    grad, grad_seeded, ArchSpec, Family, GateRouting, GateTensor, Network, ParamSet, ParamSubset,
};
use crate::error::{Error, Result};
use crate::numerics::{dot, median, RngState, RunningStats};

/// Finite-width NTK `<grad y(x), grad y(x')>` over `subset` for a network
/// that computes its own gates.
pub fn ntk(network: &Network<'_>, subset: ParamSubset, x: &[f64], y: &[f64]) -> Result<f64> {
    let gx = grad(network, subset, x)?;
    let gy = grad(network, subset, y)?;
    Ok(dot(&gx.values, &gy.values))
}

/// Gate-determined limit of the value-weight NTK.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtkTarget {
    /// Unscaled kernel: FC NPK, CONV bundle NPK or the RES sum of sub-FCN
    /// NPKs.
    pub npk: f64,
    /// Kernel with the family's constants applied.
    pub value: f64,
    /// `value / npk` (the family constant when `npk` is zero).
    pub constant: f64,
}

pub fn ntk_target(
    arch: &ArchSpec,
    x: &[f64],
    y: &[f64],
    gx: &GateTensor,
    gy: &GateTensor,
) -> Result<NtkTarget> {
    let k = KernelConstants::new(arch)?;
    let (npk, value, fallback) = match arch.family {
        Family::Fc { .. } => {
            let v = npk_fc(x, y, gx, gy)?;
            (v, k.beta_fc * v, k.beta_fc)
        }
        Family::ConvGap { .. } => {
            let beta = k.beta_cv.expect("conv constants");
            let v = npk_conv(arch, x, y, gx, gy)?;
            (v, beta * v, beta)
        }
        Family::Res { .. } => {
            let r = npk_res_ensemble(arch, x, y, gx, gy)?;
            let value = r
                .terms
                .iter()
                .zip(&k.beta_res)
                .map(|((_, v), (_, b))| v * b)
                .sum();
            (r.total, value, k.beta_res[0].1)
        }
    };
    Ok(NtkTarget {
        npk,
        value,
        constant: if npk != 0.0 { value / npk } else { fallback },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    /// Multiplies every layer's sampling sigma; the target keeps the
    /// architecture's sigma. Values other than 1 deliberately break the
    /// match.
    pub sigma_scale: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: 0,
            sigma_scale: 1.0,
        }
    }
}

pub const MIN_MC_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: Vec<f64>,
    pub target: NtkTarget,
}

impl McEstimate {
    /// Whether `|mean - target| <= k * stderr` (with a round-off allowance).
    pub fn within(&self, k: f64) -> bool {
        let slack = 1e-12 * self.target.value.abs().max(self.mean.abs());
        (self.mean - self.target.value).abs() <= k * self.std_error + slack
    }

    /// `(mean - target) / stderr`.
    pub fn z_score(&self) -> f64 {
        let diff = self.mean - self.target.value;
        if self.std_error > 0.0 {
            diff / self.std_error
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        }
    }

    /// Median over samples of `|ntk - target| / |target|`.
    pub fn median_rel_dev(&self) -> f64 {
        let t = self.target.value.abs();
        let devs: Vec<f64> = self
            .samples
            .iter()
            .map(|s| (s - self.target.value).abs() / t)
            .collect();
        median(&devs)
    }

    /// `mean / npk`, the constant the estimate implies.
    pub fn implied_constant(&self) -> f64 {
        self.mean / self.target.npk
    }
}

/// Monte-Carlo mean of the value-weight NTK over Bernoulli +-sigma value
/// networks, gates held fixed at `gx` (for `x`) and `gy` (for `y`).
/// Sample `k` draws from stream `k` of `cfg.seed`, so the result does not
/// depend on the thread count.
pub fn ntk_expectation_mc(
    arch: &ArchSpec,
    gx: &GateTensor,
    gy: &GateTensor,
    x: &[f64],
    y: &[f64],
    cfg: &McConfig,
) -> Result<McEstimate> {
    if cfg.samples < MIN_MC_SAMPLES {
        return Err(Error::invalid(format!(
            "Monte-Carlo NTK needs at least {MIN_MC_SAMPLES} samples, got {}",
            cfg.samples
        )));
    }
    if !(cfg.sigma_scale > 0.0 && cfg.sigma_scale.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma scale must be positive, got {}",
            cfg.sigma_scale
        )));
    }
    let routing = GateRouting::identity();
    let probe = ParamSet::filled(arch, 1.0)?;
    for gates in [gx, gy] {
        Network::FixedGates {
            arch,
            value: &probe,
            gates,
            routing: &routing,
        }
        .validate()?;
    }
    let target = ntk_target(arch, x, y, gx, gy)?;
    let mut seed = vec![0.0; arch.heads];
    seed[0] = 1.0;
    let samples = (0..cfg.samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngState::stream(cfg.seed, k as u64);
            let value = ParamSet::init_bernoulli_scaled(arch, cfg.sigma_scale, &mut rng)?;
            let nx = Network::FixedGates {
                arch,
                value: &value,
                gates: gx,
                routing: &routing,
            };
            let ny = Network::FixedGates {
                arch,
                value: &value,
                gates: gy,
                routing: &routing,
            };
            let (_, a) = grad_seeded(&nx, ParamSubset::Value, x, x, &seed)?;
            let (_, b) = grad_seeded(&ny, ParamSubset::Value, y, y, &seed)?;
            Ok(dot(&a.values, &b.values))
        })
        .collect::<Result<Vec<f64>>>()?;
    let stats: RunningStats = samples.iter().copied().collect();
    Ok(McEstimate {
        mean: stats.mean(),
        std_error: stats.std_error(),
        samples,
        target,
    })
}
