//! Closed-form neural path kernels for the three families, the finite-width
//! NTK, Monte-Carlo checks of the NTK against its gate-determined limit,
//! Gram matrices and invariance checks.
//!
//! Conventions: FC and RES kernels are unnormalized, `<x, x'>` weighted by
//! overlap counts. For CONV_GAP, [`npk_conv_rotsum`] returns the raw
//! rotation sum and [`npk_conv`] the bundle kernel `<phi, phi'>`, which
//! carries the `1/d_in` pooling factor in each feature and so equals
//! `rotsum / d_in^2`.

mod gram;
mod invariance;
mod mc;

pub use gram::{fingerprint, gram, GramMatrix, PsdReport, DEFAULT_GRAM_CAP};
pub use invariance::{
    invariance_report, invariance_report_with_budget, InvarianceCheck, InvarianceReport,
};
pub use mc::{ntk, ntk_expectation_mc, ntk_target, McConfig, McEstimate, NtkTarget};

use serde::{Deserialize, Serialize};

use crate::arch::{forward_relu, ArchSpec, Family, GateKind, GateLayer, GateTensor, ParamSet};
use crate::error::{check_len, Error, Result};
use crate::numerics::dot;
use crate::paths::{enumerate_subfcns, SubFcnMask};

/// Scale constants linking the NTK limit to the NPK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub sigma_fc: f64,
    pub sigma_cv: f64,
    /// `d * sigma^(2(d - 1))` for an FC network of the same depth.
    pub beta_fc: f64,
    pub beta_cv: Option<f64>,
    /// `(mask, beta)` per sub-FCN.
    pub beta_res: Vec<(u32, f64)>,
}

/// `d * sigma^(2(d - 1))`.
pub fn beta_depth(depth: usize, sigma: f64) -> f64 {
    depth as f64 * sigma.powi(2 * (depth as i32 - 1))
}

impl KernelConstants {
    pub fn new(arch: &ArchSpec) -> Result<Self> {
        arch.validate()?;
        let (s_fc, s_cv) = (arch.sigma_fc(), arch.sigma_cv());
        let beta_cv = match arch.family {
            Family::ConvGap {
                conv_layers,
                fc_layers,
                ..
            } => {
                let (dc, df) = (conv_layers as i32, fc_layers as i32);
                Some(
                    dc as f64 * s_cv.powi(2 * (dc - 1)) * s_fc.powi(2 * df)
                        + df as f64 * s_cv.powi(2 * dc) * s_fc.powi(2 * (df - 1)),
                )
            }
            _ => None,
        };
        let beta_res = match arch.family {
            Family::Res { .. } => enumerate_subfcns(arch)?
                .iter()
                .map(|s| (s.mask, beta_depth(s.depth(arch), s_fc)))
                .collect(),
            _ => Vec::new(),
        };
        Ok(Self {
            sigma_fc: s_fc,
            sigma_cv: s_cv,
            beta_fc: beta_depth(arch.depth(), s_fc),
            beta_cv,
            beta_res,
        })
    }
}

/// Hard gates of the ReLU network `params` at `x`.
pub fn relu_gates(arch: &ArchSpec, params: &ParamSet, x: &[f64]) -> Result<GateTensor> {
    Ok(forward_relu(arch, params, x)?.gates)
}

fn check_pair(gx: &GateTensor, gy: &GateTensor) -> Result<()> {
    check_len("gate layer count", gx.layers.len(), gy.layers.len())?;
    for (a, b) in gx.layers.iter().zip(&gy.layers) {
        if a.shape() != b.shape() || a.kind != b.kind {
            return Err(Error::invalid("gate tensors have different shapes"));
        }
    }
    Ok(())
}

/// `<G_l(x), G_l(x')>` for every hidden layer.
pub fn gate_correlations(gx: &GateTensor, gy: &GateTensor) -> Result<Vec<f64>> {
    check_pair(gx, gy)?;
    Ok(gx
        .hidden()
        .zip(gy.hidden())
        .map(|(a, b)| dot(&a.values, &b.values))
        .collect())
}

/// FC kernel `<x, x'> * prod_l <G_l(x), G_l(x')>`.
pub fn npk_fc(x: &[f64], y: &[f64], gx: &GateTensor, gy: &GateTensor) -> Result<f64> {
    check_len("kernel input pair", x.len(), y.len())?;
    if gx.hidden().any(|l| l.positions != 1) {
        return Err(Error::invalid("npk_fc expects fully connected gate layers"));
    }
    let corr = gate_correlations(gx, gy)?;
    Ok(dot(x, y) * corr.iter().product::<f64>())
}

/// `rot(x, r)(i) = x(i + r mod n)`.
pub fn rotate(x: &[f64], r: usize) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| x[(i + r) % n]).collect()
}

/// Gate tensor of a rotated input for an equivariant CONV_GAP network:
/// convolutional gate maps shift by `r` positions, dense gates are kept.
pub fn rotate_gates(g: &GateTensor, r: usize) -> GateTensor {
    let layers = g
        .layers
        .iter()
        .map(|l| {
            if l.kind == GateKind::Hidden && l.positions > 1 {
                let (p, c) = (l.positions, l.channels);
                let mut values = vec![0.0; p * c];
                for f in 0..p {
                    values[f * c..(f + 1) * c]
                        .copy_from_slice(&l.values[((f + r) % p) * c..((f + r) % p + 1) * c]);
                }
                GateLayer {
                    values,
                    ..l.clone()
                }
            } else {
                l.clone()
            }
        })
        .collect();
    GateTensor {
        mode: g.mode,
        layers,
    }
}

/// Per input node, the number of CONV_GAP paths active under both gate
/// tensors (sum of gate-product along paths for soft gates), pooling factor
/// excluded. Computed layer by layer without enumerating paths.
pub fn conv_overlap(arch: &ArchSpec, gx: &GateTensor, gy: &GateTensor) -> Result<Vec<f64>> {
    let Family::ConvGap {
        conv_layers,
        window,
        width,
        ..
    } = arch.family
    else {
        return Err(Error::invalid("conv_overlap needs a CONV_GAP architecture"));
    };
    check_pair(gx, gy)?;
    check_len("gate layers", arch.hidden_gate_count(), gx.hidden_count())?;
    let p = arch.d_in;
    let hx: Vec<&GateLayer> = gx.hidden().collect();
    let hy: Vec<&GateLayer> = gy.hidden().collect();
    let both: Vec<Vec<f64>> = (0..hx.len())
        .map(|l| {
            hx[l]
                .values
                .iter()
                .zip(&hy[l].values)
                .map(|(a, b)| a * b)
                .collect()
        })
        .collect();
    let dense: f64 = both[conv_layers..]
        .iter()
        .map(|v| v.iter().sum::<f64>())
        .product();
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        // u[f * channels + ch]: partial paths from node i ending at (f, ch)
        let mut channels = 1;
        let mut u = vec![0.0; p];
        u[i] = 1.0;
        for g in &both[..conv_layers] {
            let mut next = vec![0.0; p * width];
            for f in 0..p {
                let mut reach = 0.0;
                for c in 0..window {
                    let src = (f + c) % p;
                    reach += u[src * channels..(src + 1) * channels].iter().sum::<f64>();
                }
                if reach != 0.0 {
                    for o in 0..width {
                        next[f * width + o] = reach * g[f * width + o];
                    }
                }
            }
            u = next;
            channels = width;
        }
        out.push(u.iter().sum::<f64>() * dense);
    }
    Ok(out)
}

fn weighted(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    x.iter().zip(y).zip(w).map(|((a, b), c)| a * b * c).sum()
}

/// Rotation sum `sum_r <x, rot(x', r)>_{overlap(., x, rot(x', r))}` with the
/// gates of each rotated input obtained by shifting `gy`. Matches the
/// provider form whenever the gates come from an equivariant network.
pub fn npk_conv_rotsum(
    arch: &ArchSpec,
    x: &[f64],
    y: &[f64],
    gx: &GateTensor,
    gy: &GateTensor,
) -> Result<f64> {
    check_len("kernel input", arch.d_in, x.len())?;
    check_len("kernel input", arch.d_in, y.len())?;
    let mut total = 0.0;
    for r in 0..arch.d_in {
        let ov = conv_overlap(arch, gx, &rotate_gates(gy, r))?;
        total += weighted(x, &rotate(y, r), &ov);
    }
    Ok(total)
}

/// Rotation sum with the gates of every rotated input recomputed by
/// `gates`.
pub fn npk_conv_rotsum_with<F>(arch: &ArchSpec, x: &[f64], y: &[f64], gates: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<GateTensor>,
{
    check_len("kernel input", arch.d_in, x.len())?;
    check_len("kernel input", arch.d_in, y.len())?;
    let gx = gates(x)?;
    let mut total = 0.0;
    for r in 0..arch.d_in {
        let yr = rotate(y, r);
        let ov = conv_overlap(arch, &gx, &gates(&yr)?)?;
        total += weighted(x, &yr, &ov);
    }
    Ok(total)
}

/// Bundle kernel `<phi(x), phi(x')>` of a CONV_GAP network.
pub fn npk_conv(
    arch: &ArchSpec,
    x: &[f64],
    y: &[f64],
    gx: &GateTensor,
    gy: &GateTensor,
) -> Result<f64> {
    let d = arch.d_in as f64;
    Ok(npk_conv_rotsum(arch, x, y, gx, gy)? / (d * d))
}

/// Sum-of-products kernel of a RES network with its per-sub-FCN terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNpk {
    pub total: f64,
    /// `(mask, NPK of that sub-FCN)` in mask order.
    pub terms: Vec<(u32, f64)>,
}

impl ResNpk {
    /// Total over sub-FCNs that skip `block` (a middle block, 1-based).
    pub fn excluding(&self, block: usize) -> f64 {
        self.terms
            .iter()
            .filter(|(m, _)| block == 0 || m >> (block - 1) & 1 == 0)
            .map(|(_, v)| v)
            .sum()
    }
}

pub fn npk_res_ensemble(
    arch: &ArchSpec,
    x: &[f64],
    y: &[f64],
    gx: &GateTensor,
    gy: &GateTensor,
) -> Result<ResNpk> {
    let terms = enumerate_subfcns(arch)?
        .into_iter()
        .map(|s: SubFcnMask| {
            Ok((
                s.mask,
                npk_fc(x, y, &s.gates(arch, gx)?, &s.gates(arch, gy)?)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResNpk {
        total: terms.iter().map(|(_, v)| v).sum(),
        terms,
    })
}

/// Family-dispatched NPK of two inputs with their gates.
pub fn npk(arch: &ArchSpec, x: &[f64], y: &[f64], gx: &GateTensor, gy: &GateTensor) -> Result<f64> {
    match arch.family {
        Family::Fc { .. } => npk_fc(x, y, gx, gy),
        Family::ConvGap { .. } => npk_conv(arch, x, y, gx, gy),
        Family::Res { .. } => Ok(npk_res_ensemble(arch, x, y, gx, gy)?.total),
    }
}
