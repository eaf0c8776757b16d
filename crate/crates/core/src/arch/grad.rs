use serde::{Deserialize, Serialize};

use super::{Network, ParamSet};
use crate::error::{check_len, Error, Result};
use crate::numerics::finite_diff;
use crate::numerics::tape::Tape;

/// Which parameters a gradient is taken with respect to. The weights of a
/// plain ReLU network count as value parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSubset {
    None,
    Value,
    Feature,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetRole {
    Feature,
    Value,
}

/// A contiguous run of [`GradVector::values`] belonging to one weight layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradSegment {
    pub role: NetRole,
    pub layer: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    /// Feature parameters first (when selected), then value parameters.
    pub values: Vec<f64>,
    pub segments: Vec<GradSegment>,
    /// Hard-gate pre-activations exactly at zero.
    pub ties: usize,
}

impl GradVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, role: NetRole) -> Vec<f64> {
        self.segments
            .iter()
            .filter(|s| s.role == role)
            .flat_map(|s| self.values[s.start..s.start + s.len].iter().copied())
            .collect()
    }
}

fn collect(
    grads: &mut [Option<Vec<f64>>],
    ids: &[usize],
    role: NetRole,
    values: &mut Vec<f64>,
    segments: &mut Vec<GradSegment>,
) {
    for (layer, &pid) in ids.iter().enumerate() {
        if let Some(g) = grads[pid].take() {
            segments.push(GradSegment {
                role,
                layer,
                start: values.len(),
                len: g.len(),
            });
            values.extend(g);
        }
    }
}

/// Outputs of every head and the gradient of `seed . output` with respect to
/// `subset`, for explicit feature and value inputs.
pub fn grad_seeded(
    network: &Network<'_>,
    subset: ParamSubset,
    x_f: &[f64],
    x_v: &[f64],
    seed: &[f64],
) -> Result<(Vec<f64>, GradVector)> {
    grad_with(network, subset, x_f, x_v, |out| {
        Ok((seed.to_vec(), out.to_vec()))
    })
}

/// Like [`grad_seeded`], with the seed computed from the outputs by `seed`
/// (which may also return a by-product such as a loss).
pub fn grad_with<T, F>(
    network: &Network<'_>,
    subset: ParamSubset,
    x_f: &[f64],
    x_v: &[f64],
    seed: F,
) -> Result<(T, GradVector)>
where
    F: FnOnce(&[f64]) -> Result<(Vec<f64>, T)>,
{
    let arch = network.arch();
    check_len("feature input", arch.d_in, x_f.len())?;
    check_len("value input", arch.d_in, x_v.len())?;
    if matches!(subset, ParamSubset::Feature) && network.feature_params().is_none() {
        return Err(Error::invalid(
            "network has no trainable feature parameters",
        ));
    }
    let mut tape = Tape::new();
    let rec = network.record(&mut tape, x_f, x_v, subset);
    let (seed, extra) = seed(tape.value(rec.output))?;
    check_len("output seed", arch.heads, seed.len())?;
    let mut grads = tape.backward(rec.output, &seed);
    let mut values = Vec::new();
    let mut segments = Vec::new();
    collect(
        &mut grads,
        &rec.feature_params,
        NetRole::Feature,
        &mut values,
        &mut segments,
    );
    collect(
        &mut grads,
        &rec.value_params,
        NetRole::Value,
        &mut values,
        &mut segments,
    );
    let ties = tape.ties();
    if ties > 0 {
        log::debug!("{ties} hard-gate pre-activations at exactly zero; gradient taken at a non-differentiable point");
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {bad}")));
    }
    Ok((
        extra,
        GradVector {
            values,
            segments,
            ties,
        },
    ))
}

/// Gradient of head 0 at data point `x` with respect to `subset`.
pub fn grad(network: &Network<'_>, subset: ParamSubset, x: &[f64]) -> Result<GradVector> {
    network.validate()?;
    let (xf, xv) = network.inputs(x);
    let mut seed = vec![0.0; network.arch().heads];
    seed[0] = 1.0;
    grad_seeded(network, subset, &xf, &xv, &seed).map(|(_, g)| g)
}

/// Central-difference counterpart of [`grad`], same ordering.
pub fn finite_diff_grad(
    network: &Network<'_>,
    subset: ParamSubset,
    x: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    network.validate()?;
    let feature = network.feature_params();
    let value = network.value_params();
    let take_f = matches!(subset, ParamSubset::Feature | ParamSubset::All) && feature.is_some();
    let take_v = matches!(subset, ParamSubset::Value | ParamSubset::All);
    let mut theta = Vec::new();
    if take_f {
        theta.extend(feature.map(ParamSet::flat).unwrap_or_default());
    }
    let nf = theta.len();
    if take_v {
        theta.extend(value.flat());
    }
    let eval = |t: &[f64]| -> f64 {
        let mut f = feature.cloned();
        let mut v = value.clone();
        if take_f {
            f.as_mut().map(|f| f.set_flat(&t[..nf]));
        }
        if take_v {
            let _ = v.set_flat(&t[nf..]);
        }
        network
            .with_params(f.as_ref(), &v)
            .output(x)
            .unwrap_or(f64::NAN)
    };
    finite_diff(eval, &theta, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchSpec, FeatureKind, GateMode, GateRouting, GateTensor};
    use crate::numerics::{max_relative_error, InitScheme, RngState};

    #[test]
    fn relu_grad_matches_finite_differences() {
        for arch in [
            ArchSpec::fc(3, 3, 4),
            ArchSpec::conv_gap(5, 2, 2, 3, 2),
            ArchSpec::res(3, 1, 2, 3),
        ] {
            let mut rng = RngState::new(1);
            let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
            let x: Vec<f64> = (0..arch.d_in).map(|_| rng.normal()).collect();
            let net = Network::Relu {
                arch: &arch,
                params: &p,
            };
            let g = grad(&net, ParamSubset::Value, &x).unwrap();
            let fd = finite_diff_grad(&net, ParamSubset::Value, &x, 1e-6).unwrap();
            assert_eq!(g.len(), arch.param_count());
            assert!(
                max_relative_error(&g.values, &fd) < 1e-5,
                "{}",
                arch.family_name()
            );
        }
    }

    #[test]
    fn soft_dlgn_grad_matches_finite_differences() {
        let arch = ArchSpec::fc(3, 3, 4).with_beta(2.0);
        let mut rng = RngState::new(9);
        let pf = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let pv = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let routing = GateRouting::identity();
        let net = Network::Gated {
            arch: &arch,
            feature: &pf,
            value: &pv,
            kind: FeatureKind::Linear,
            mode: GateMode::Soft,
            routing: &routing,
        };
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let g = grad(&net, ParamSubset::All, &x).unwrap();
        let fd = finite_diff_grad(&net, ParamSubset::All, &x, 1e-6).unwrap();
        assert!(max_relative_error(&g.values, &fd) < 1e-5);
        assert_eq!(g.segment(NetRole::Feature).len(), pf.num_params());
    }

    #[test]
    fn fixed_gate_grad_is_linear_in_value_weights() {
        let arch = ArchSpec::fc(2, 2, 2);
        let p = ParamSet::filled(&arch, 1.0).unwrap();
        let gates = GateTensor::constant(&arch, 1.0).unwrap();
        let routing = GateRouting::identity();
        let net = Network::FixedGates {
            arch: &arch,
            value: &p,
            gates: &gates,
            routing: &routing,
        };
        let g = grad(&net, ParamSubset::Value, &[1.0, 1.0]).unwrap();
        assert_eq!(g.values, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        assert!(grad(&net, ParamSubset::Feature, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn ties_are_counted() {
        let arch = ArchSpec::fc(2, 2, 2);
        let p = ParamSet::filled(&arch, 1.0).unwrap();
        let net = Network::Relu {
            arch: &arch,
            params: &p,
        };
        let g = grad(&net, ParamSubset::Value, &[1.0, -1.0]).unwrap();
        assert_eq!(g.ties, 2);
    }
}
