use serde::{Deserialize, Serialize};

use super::{
    ArchSpec, Family, GateMode, GateRouting, GateTensor, ParamSet, ParamSetKind, ParamSubset,
    WeightKind,
};
use crate::error::{check_len, Error, Result};
use crate::numerics::tape::{ConvShape, GateFn, NodeId, ParamId, Tape};

/// How the feature network turns `x_f` into gate pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// ReLU network (DGN).
    Relu,
    /// Deep linear network, no activations between layers (DLGN).
    Linear,
    /// One independent linear map of `x_f` per gated layer (DLGN-SF).
    Shallow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStage {
    Dense,
    Conv,
    Pool,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLayer {
    pub stage: TraceStage,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

/// Result of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// One entry per head.
    pub output: Vec<f64>,
    /// Gates applied to the value network, in value-layer order (already
    /// routed).
    pub gates: GateTensor,
    /// Value network stages.
    pub trace: Vec<TraceLayer>,
    /// Feature network stages (DGN/DLGN with a deep feature network).
    pub feature_trace: Option<Vec<TraceLayer>>,
    /// `y_f`, the feature network's own output head (ReLU feature networks).
    pub feature_output: Option<Vec<f64>>,
}

impl Forward {
    pub fn y(&self) -> f64 {
        self.output[0]
    }
}

/// A network configuration whose forward graph can be recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub enum Network<'a> {
    /// Plain ReLU network.
    Relu {
        arch: &'a ArchSpec,
        params: &'a ParamSet,
    },
    /// GaLU value network driven by externally supplied gates.
    FixedGates {
        arch: &'a ArchSpec,
        value: &'a ParamSet,
        gates: &'a GateTensor,
        routing: &'a GateRouting,
    },
    /// Feature network producing gates for a GaLU value network.
    Gated {
        arch: &'a ArchSpec,
        feature: &'a ParamSet,
        value: &'a ParamSet,
        kind: FeatureKind,
        mode: GateMode,
        routing: &'a GateRouting,
    },
}

#[derive(Debug, Clone, Copy)]
enum Act<'g> {
    Relu,
    Identity,
    Gates(&'g [NodeId]),
}

#[derive(Debug, Default)]
pub(crate) struct TrunkNodes {
    pub output: NodeId,
    /// Pre-activations of the gated hidden layers.
    pub gate_pre: Vec<NodeId>,
    /// Hard gate nodes (ReLU trunks only).
    pub relu_gates: Vec<NodeId>,
    stages: Vec<(TraceStage, NodeId, NodeId)>,
}

impl TrunkNodes {
    fn trace(&self, tape: &Tape<'_>) -> Vec<TraceLayer> {
        self.stages
            .iter()
            .map(|&(stage, pre, post)| TraceLayer {
                stage,
                pre: tape.value(pre).to_vec(),
                post: tape.value(post).to_vec(),
            })
            .collect()
    }
}

pub(crate) struct Recorded {
    pub output: NodeId,
    pub value_trunk: TrunkNodes,
    pub feature_trunk: Option<TrunkNodes>,
    pub value_gates: Vec<NodeId>,
    pub feature_params: Vec<ParamId>,
    pub value_params: Vec<ParamId>,
}

fn register<'a>(tape: &mut Tape<'a>, params: &'a ParamSet, requires_grad: bool) -> Vec<ParamId> {
    params
        .tensors()
        .iter()
        .map(|t| tape.param(t.values(), requires_grad))
        .collect()
}

fn apply(
    tape: &mut Tape<'_>,
    q: NodeId,
    act: Act<'_>,
    hidden: usize,
    relu_gates: &mut Vec<NodeId>,
) -> NodeId {
    match act {
        Act::Relu => {
            let g = tape.gate(q, GateFn::Hard);
            relu_gates.push(g);
            tape.mul(q, g)
        }
        Act::Identity => q,
        Act::Gates(g) => tape.mul(q, g[hidden]),
    }
}

fn linear(tape: &mut Tape<'_>, kind: WeightKind, p: ParamId, z: NodeId) -> NodeId {
    match kind {
        WeightKind::Dense { rows, cols } => tape.dense(p, z, rows, cols),
        WeightKind::Conv(shape) => tape.conv(p, z, shape),
    }
}

fn record_trunk(
    tape: &mut Tape<'_>,
    arch: &ArchSpec,
    pids: &[ParamId],
    x: NodeId,
    act: Act<'_>,
) -> TrunkNodes {
    let layers = arch.weight_layers();
    let mut t = TrunkNodes::default();
    let mut z = x;
    match arch.family {
        Family::Fc { depth, .. } => {
            for (l, layer) in layers.iter().enumerate() {
                let q = linear(tape, layer.kind, pids[l], z);
                if l + 1 < depth {
                    t.gate_pre.push(q);
                    z = apply(tape, q, act, l, &mut t.relu_gates);
                    t.stages.push((TraceStage::Dense, q, z));
                } else {
                    t.stages.push((TraceStage::Dense, q, q));
                    t.output = q;
                }
            }
        }
        Family::ConvGap {
            conv_layers,
            width,
            fc_layers,
            ..
        } => {
            for l in 0..conv_layers {
                let q = linear(tape, layers[l].kind, pids[l], z);
                t.gate_pre.push(q);
                z = apply(tape, q, act, l, &mut t.relu_gates);
                t.stages.push((TraceStage::Conv, q, z));
            }
            let pooled = tape.pool(z, arch.d_in, width);
            t.stages.push((TraceStage::Pool, z, pooled));
            z = pooled;
            for j in 0..fc_layers {
                let l = conv_layers + j;
                let q = linear(tape, layers[l].kind, pids[l], z);
                if j + 1 < fc_layers {
                    t.gate_pre.push(q);
                    z = apply(tape, q, act, l, &mut t.relu_gates);
                    t.stages.push((TraceStage::Dense, q, z));
                } else {
                    t.stages.push((TraceStage::Dense, q, q));
                    t.output = q;
                }
            }
        }
        Family::Res {
            skips, block_depth, ..
        } => {
            let total = layers.len();
            for block in 0..skips + 2 {
                let block_in = z;
                for k in 0..block_depth {
                    let l = block * block_depth + k;
                    let q = linear(tape, layers[l].kind, pids[l], z);
                    if l + 1 < total {
                        t.gate_pre.push(q);
                        z = apply(tape, q, act, l, &mut t.relu_gates);
                        t.stages.push((TraceStage::Dense, q, z));
                    } else {
                        t.stages.push((TraceStage::Dense, q, q));
                        t.output = q;
                    }
                }
                if (1..=skips).contains(&block) {
                    let summed = tape.add(z, block_in);
                    t.stages.push((TraceStage::Skip, z, summed));
                    z = summed;
                }
            }
        }
    }
    t
}

fn record_shallow(
    tape: &mut Tape<'_>,
    arch: &ArchSpec,
    pids: &[ParamId],
    x: NodeId,
) -> Vec<NodeId> {
    let layers = arch.shallow_layers();
    let conv_layers = match arch.family {
        Family::ConvGap { conv_layers, .. } => conv_layers,
        _ => usize::MAX,
    };
    layers
        .iter()
        .enumerate()
        .map(|(g, layer)| {
            let q = linear(tape, layer.kind, pids[g], x);
            match layer.kind {
                // Dense gates after pooling see a pooled convolution of x.
                WeightKind::Conv(ConvShape { c_out, .. }) if g >= conv_layers => {
                    tape.pool(q, arch.d_in, c_out)
                }
                _ => q,
            }
        })
        .collect()
}

impl<'a> Network<'a> {
    pub fn arch(&self) -> &'a ArchSpec {
        match *self {
            Network::Relu { arch, .. }
            | Network::FixedGates { arch, .. }
            | Network::Gated { arch, .. } => arch,
        }
    }

    pub fn routing(&self) -> Option<&'a GateRouting> {
        match *self {
            Network::Relu { .. } => None,
            Network::FixedGates { routing, .. } | Network::Gated { routing, .. } => Some(routing),
        }
    }

    pub fn value_params(&self) -> &'a ParamSet {
        match *self {
            Network::Relu { params, .. } => params,
            Network::FixedGates { value, .. } | Network::Gated { value, .. } => value,
        }
    }

    pub fn feature_params(&self) -> Option<&'a ParamSet> {
        match *self {
            Network::Gated { feature, .. } => Some(feature),
            _ => None,
        }
    }

    /// Same configuration with different weights.
    pub fn with_params<'b>(&self, feature: Option<&'b ParamSet>, value: &'b ParamSet) -> Network<'b>
    where
        'a: 'b,
    {
        match *self {
            Network::Relu { arch, .. } => Network::Relu {
                arch,
                params: value,
            },
            Network::FixedGates {
                arch,
                gates,
                routing,
                ..
            } => Network::FixedGates {
                arch,
                value,
                gates,
                routing,
            },
            Network::Gated {
                arch,
                feature: f,
                kind,
                mode,
                routing,
                ..
            } => Network::Gated {
                arch,
                feature: feature.unwrap_or(f),
                value,
                kind,
                mode,
                routing,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.arch();
        arch.validate()?;
        let value = self.value_params();
        if value.kind() != ParamSetKind::Standard {
            return Err(Error::invalid(
                "value network needs a standard parameter set",
            ));
        }
        value.check(arch)?;
        match *self {
            Network::Relu { .. } => {}
            Network::FixedGates { gates, routing, .. } => {
                routing.validate(arch)?;
                let shapes = arch.hidden_gate_shapes();
                check_len("external gate layers", shapes.len(), gates.hidden_count())?;
                for (s, g) in shapes.iter().zip(gates.hidden()) {
                    if *s != g.shape() {
                        return Err(Error::invalid(
                            "external gates do not match the architecture",
                        ));
                    }
                }
                gates.validate()?;
            }
            Network::Gated {
                feature,
                kind,
                routing,
                ..
            } => {
                routing.validate(arch)?;
                let expect = if kind == FeatureKind::Shallow {
                    ParamSetKind::Shallow
                } else {
                    ParamSetKind::Standard
                };
                if feature.kind() != expect {
                    return Err(Error::invalid(format!(
                        "{kind:?} feature network needs a {expect:?} parameter set"
                    )));
                }
                feature.check(arch)?;
            }
        }
        Ok(())
    }

    /// Feature and value inputs for data point `x`.
    pub fn inputs(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xv = match self.routing() {
            Some(r) => r.value_input(x),
            None => x.to_vec(),
        };
        (x.to_vec(), xv)
    }

    pub(crate) fn record(
        &self,
        tape: &mut Tape<'a>,
        x_f: &[f64],
        x_v: &[f64],
        subset: ParamSubset,
    ) -> Recorded {
        let arch = self.arch();
        let want_value = matches!(subset, ParamSubset::Value | ParamSubset::All);
        let want_feature = matches!(subset, ParamSubset::Feature | ParamSubset::All);
        match *self {
            Network::Relu { params, .. } => {
                let pids = register(tape, params, want_value);
                let x = tape.input(x_v.to_vec());
                let trunk = record_trunk(tape, arch, &pids, x, Act::Relu);
                Recorded {
                    output: trunk.output,
                    value_gates: trunk.relu_gates.clone(),
                    value_trunk: trunk,
                    feature_trunk: None,
                    feature_params: Vec::new(),
                    value_params: pids,
                }
            }
            Network::FixedGates {
                value,
                gates,
                routing,
                ..
            } => {
                let pids = register(tape, value, want_value);
                let gate_nodes: Vec<NodeId> = (0..arch.hidden_gate_count())
                    .map(|l| tape.input(gates.hidden_layer(routing.source(l)).values.clone()))
                    .collect();
                let x = tape.input(x_v.to_vec());
                let trunk = record_trunk(tape, arch, &pids, x, Act::Gates(&gate_nodes));
                Recorded {
                    output: trunk.output,
                    value_trunk: trunk,
                    feature_trunk: None,
                    value_gates: gate_nodes,
                    feature_params: Vec::new(),
                    value_params: pids,
                }
            }
            Network::Gated {
                feature,
                value,
                kind,
                mode,
                routing,
                ..
            } => {
                let fpids = register(tape, feature, want_feature);
                let vpids = register(tape, value, want_value);
                let xf = tape.input(x_f.to_vec());
                let (feature_trunk, gate_pre) = match kind {
                    FeatureKind::Relu => {
                        let t = record_trunk(tape, arch, &fpids, xf, Act::Relu);
                        let pre = t.gate_pre.clone();
                        (Some(t), pre)
                    }
                    FeatureKind::Linear => {
                        let t = record_trunk(tape, arch, &fpids, xf, Act::Identity);
                        let pre = t.gate_pre.clone();
                        (Some(t), pre)
                    }
                    FeatureKind::Shallow => (None, record_shallow(tape, arch, &fpids, xf)),
                };
                let gate_fn = mode.gate_fn(arch.beta);
                let gate_nodes: Vec<NodeId> = (0..gate_pre.len())
                    .map(|l| {
                        let src = routing.source(l);
                        match (&feature_trunk, kind, mode) {
                            // reuse the ReLU's own indicator instead of recomputing it
                            (Some(t), FeatureKind::Relu, GateMode::Hard) => t.relu_gates[src],
                            _ => tape.gate(gate_pre[src], gate_fn),
                        }
                    })
                    .collect();
                let xv = tape.input(x_v.to_vec());
                let trunk = record_trunk(tape, arch, &vpids, xv, Act::Gates(&gate_nodes));
                Recorded {
                    output: trunk.output,
                    value_trunk: trunk,
                    feature_trunk,
                    value_gates: gate_nodes,
                    feature_params: fpids,
                    value_params: vpids,
                }
            }
        }
    }

    fn gate_mode(&self) -> GateMode {
        match *self {
            Network::Relu { .. } => GateMode::Hard,
            Network::FixedGates { gates, .. } => gates.mode,
            Network::Gated { mode, .. } => mode,
        }
    }

    /// Forward pass with explicit feature and value inputs.
    pub fn forward_with(&self, x_f: &[f64], x_v: &[f64]) -> Result<Forward> {
        self.validate()?;
        let arch = self.arch();
        check_len("feature input", arch.d_in, x_f.len())?;
        check_len("value input", arch.d_in, x_v.len())?;
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, x_f, x_v, ParamSubset::None);
        let hidden = rec
            .value_gates
            .iter()
            .map(|&g| tape.value(g).to_vec())
            .collect();
        let gates = GateTensor::from_hidden(arch, self.gate_mode(), hidden)?;
        let feature_output = match (*self, &rec.feature_trunk) {
            (
                Network::Gated {
                    kind: FeatureKind::Relu,
                    ..
                },
                Some(t),
            ) => Some(tape.value(t.output).to_vec()),
            _ => None,
        };
        Ok(Forward {
            output: tape.value(rec.output).to_vec(),
            gates,
            trace: rec.value_trunk.trace(&tape),
            feature_trace: rec.feature_trunk.as_ref().map(|t| t.trace(&tape)),
            feature_output,
        })
    }

    /// Forward pass on data point `x` (value input follows the routing's
    /// constant-1 switch).
    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        let (xf, xv) = self.inputs(x);
        self.forward_with(&xf, &xv)
    }

    /// Every head's output without building gate or trace copies.
    pub fn outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let arch = self.arch();
        check_len("input", arch.d_in, x.len())?;
        let (xf, xv) = self.inputs(x);
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, &xf, &xv, ParamSubset::None);
        Ok(tape.value(rec.output).to_vec())
    }

    /// Scalar output (head 0).
    pub fn output(&self, x: &[f64]) -> Result<f64> {
        Ok(self.outputs(x)?[0])
    }
}

/// ReLU network forward pass; gates record `1{q > 0}` per hidden unit.
pub fn forward_relu(arch: &ArchSpec, params: &ParamSet, x: &[f64]) -> Result<Forward> {
    Network::Relu { arch, params }.forward_with(x, x)
}

/// GaLU value network with external gates, routed by `routing`.
pub fn forward_gated(
    arch: &ArchSpec,
    value: &ParamSet,
    gates: &GateTensor,
    routing: &GateRouting,
    x_v: &[f64],
) -> Result<Forward> {
    Network::FixedGates {
        arch,
        value,
        gates,
        routing,
    }
    .forward_with(x_v, x_v)
}

/// Deep gated network: ReLU feature network on `x_f`, GaLU value network on `x_v`.
pub fn forward_dgn(
    arch: &ArchSpec,
    feature: &ParamSet,
    value: &ParamSet,
    x_f: &[f64],
    x_v: &[f64],
    mode: GateMode,
    routing: &GateRouting,
) -> Result<Forward> {
    Network::Gated {
        arch,
        feature,
        value,
        kind: FeatureKind::Relu,
        mode,
        routing,
    }
    .forward_with(x_f, x_v)
}

/// Deep linearly gated network. With `shallow_features`, `feature` must be
/// a shallow parameter set and every gate layer reads its own linear map of
/// `x_f`.
#[allow(clippy::too_many_arguments)]
pub fn forward_dlgn(
    arch: &ArchSpec,
    feature: &ParamSet,
    value: &ParamSet,
    x_f: &[f64],
    x_v: &[f64],
    mode: GateMode,
    routing: &GateRouting,
    shallow_features: bool,
) -> Result<Forward> {
    Network::Gated {
        arch,
        feature,
        value,
        kind: if shallow_features {
            FeatureKind::Shallow
        } else {
            FeatureKind::Linear
        },
        mode,
        routing,
    }
    .forward_with(x_f, x_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{InitScheme, RngState};

    fn rand_vec(rng: &mut RngState, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn fc_all_ones_example() {
        let arch = ArchSpec::fc(2, 2, 2);
        let p = ParamSet::filled(&arch, 1.0).unwrap();
        let f = forward_relu(&arch, &p, &[1.0, 1.0]).unwrap();
        assert_eq!(f.y(), 4.0);
        assert_eq!(f.trace[0].pre, vec![2.0, 2.0]);
        assert_eq!(f.gates.layers[0].values, vec![1.0, 1.0]);

        let f = forward_relu(&arch, &p, &[-1.0, -1.0]).unwrap();
        assert_eq!(f.y(), 0.0);
        assert_eq!(f.gates.layers[0].values, vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let arch = ArchSpec::fc(2, 2, 2);
        let p = ParamSet::filled(&arch, 1.0).unwrap();
        assert!(matches!(
            forward_relu(&arch, &p, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn conv_output_invariant_under_rotation() {
        let arch = ArchSpec::conv_gap(5, 2, 2, 3, 2);
        let p = ParamSet::filled(&arch, 1.0).unwrap();
        let x = vec![1.0; 5];
        let y0 = forward_relu(&arch, &p, &x).unwrap().y();
        let mut rng = RngState::new(8);
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 5);
        let base = forward_relu(&arch, &p, &x).unwrap();
        for r in 0..5 {
            let xr: Vec<f64> = (0..5).map(|i| x[(i + r) % 5]).collect();
            let fr = forward_relu(&arch, &p, &xr).unwrap();
            assert!((fr.y() - base.y()).abs() <= 1e-9 * (1.0 + base.y().abs()));
            // hidden maps rotate with the input
            let (a, b) = (&base.trace[0].post, &fr.trace[0].post);
            for f in 0..5 {
                for c in 0..3 {
                    assert!((b[f * 3 + c] - a[((f + r) % 5) * 3 + c]).abs() < 1e-12);
                }
            }
        }
        assert!(y0 > 0.0);
    }

    #[test]
    fn galu_with_unit_gates_is_linear_network() {
        let arch = ArchSpec::fc(3, 3, 4);
        let mut rng = RngState::new(2);
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let ones = GateTensor::constant(&arch, 1.0).unwrap();
        let x = rand_vec(&mut rng, 3);
        let y = forward_gated(&arch, &p, &ones, &GateRouting::identity(), &x)
            .unwrap()
            .y();
        let w: Vec<&[f64]> = p.tensors().iter().map(|t| t.values()).collect();
        let h1: Vec<f64> = (0..4)
            .map(|r| (0..3).map(|c| w[0][r * 3 + c] * x[c]).sum())
            .collect();
        let h2: Vec<f64> = (0..4)
            .map(|r| (0..4).map(|c| w[1][r * 4 + c] * h1[c]).sum())
            .collect();
        let expect: f64 = (0..4).map(|c| w[2][c] * h2[c]).sum();
        assert!((y - expect).abs() < 1e-12);

        let zeros = GateTensor::constant(&arch, 0.0).unwrap();
        assert_eq!(
            forward_gated(&arch, &p, &zeros, &GateRouting::identity(), &x)
                .unwrap()
                .y(),
            0.0
        );
    }

    #[test]
    fn self_gated_dgn_equals_relu() {
        for arch in [
            ArchSpec::fc(3, 4, 5),
            ArchSpec::conv_gap(6, 2, 3, 3, 2),
            ArchSpec::res(3, 2, 2, 4),
        ] {
            let mut rng = RngState::new(5);
            let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
            for _ in 0..10 {
                let x = rand_vec(&mut rng, arch.d_in);
                let a = forward_relu(&arch, &p, &x).unwrap();
                let b = forward_dgn(
                    &arch,
                    &p,
                    &p,
                    &x,
                    &x,
                    GateMode::Hard,
                    &GateRouting::identity(),
                )
                .unwrap();
                assert_eq!(a.output, b.output);
                assert_eq!(a.trace, b.trace);
                assert_eq!(a.gates, b.gates);
            }
        }
    }

    #[test]
    fn dgn_constant_one_depends_on_x_only_through_gates() {
        let arch = ArchSpec::fc(3, 3, 6);
        let mut rng = RngState::new(12);
        let pf = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let pv = ParamSet::init(&arch, InitScheme::Bernoulli, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 3);
        // positive rescaling keeps hard ReLU gates unchanged
        let x2: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let one = vec![1.0; 3];
        let a = forward_dgn(
            &arch,
            &pf,
            &pv,
            &x,
            &one,
            GateMode::Hard,
            &GateRouting::identity(),
        )
        .unwrap();
        let b = forward_dgn(
            &arch,
            &pf,
            &pv,
            &x2,
            &one,
            GateMode::Hard,
            &GateRouting::identity(),
        )
        .unwrap();
        assert_eq!(a.gates, b.gates);
        assert_eq!(a.y(), b.y());
        let c = forward_dgn(
            &arch,
            &pf,
            &pv,
            &x,
            &x,
            GateMode::Hard,
            &GateRouting::identity(),
        )
        .unwrap();
        let d = forward_dgn(
            &arch,
            &pf,
            &pv,
            &x2,
            &x2,
            GateMode::Hard,
            &GateRouting::identity(),
        )
        .unwrap();
        assert!((d.y() - 3.0 * c.y()).abs() < 1e-12);
    }

    #[test]
    fn dlgn_feature_is_linear() {
        let arch = ArchSpec::fc(3, 3, 4);
        let mut rng = RngState::new(3);
        let pf = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let pv = ParamSet::init(&arch, InitScheme::Bernoulli, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 3);
        let f = forward_dlgn(
            &arch,
            &pf,
            &pv,
            &x,
            &x,
            GateMode::Soft,
            &GateRouting::identity(),
            false,
        )
        .unwrap();
        let ft = f.feature_trace.unwrap();
        let w1 = pf.layer(0).values();
        let w2 = pf.layer(1).values();
        let h1: Vec<f64> = (0..4)
            .map(|r| (0..3).map(|c| w1[r * 3 + c] * x[c]).sum())
            .collect();
        let h2: Vec<f64> = (0..4)
            .map(|r| (0..4).map(|c| w2[r * 4 + c] * h1[c]).sum())
            .collect();
        for (a, b) in ft[1].pre.iter().zip(&h2) {
            assert!((a - b).abs() < 1e-12);
        }
        // x_f = 0 gives every soft gate 1/2
        let z = vec![0.0; 3];
        let f = forward_dlgn(
            &arch,
            &pf,
            &pv,
            &z,
            &x,
            GateMode::Soft,
            &GateRouting::identity(),
            false,
        )
        .unwrap();
        assert!(f.gates.hidden().all(|l| l.values.iter().all(|&g| g == 0.5)));
    }

    #[test]
    fn shallow_gates_depend_only_on_their_own_map() {
        let arch = ArchSpec::fc(3, 4, 4);
        let mut rng = RngState::new(4);
        let mut pf = ParamSet::init_shallow(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let pv = ParamSet::init(&arch, InitScheme::Bernoulli, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 3);
        let r = GateRouting::identity();
        let before = forward_dlgn(&arch, &pf, &pv, &x, &x, GateMode::Soft, &r, true).unwrap();
        pf.set(0, 0, 5.0).unwrap();
        pf.set(2, 3, -5.0).unwrap();
        let after = forward_dlgn(&arch, &pf, &pv, &x, &x, GateMode::Soft, &r, true).unwrap();
        assert_eq!(before.gates.layers[1], after.gates.layers[1]);
        assert_ne!(before.gates.layers[0], after.gates.layers[0]);
        // a deep feature parameter set is rejected
        let deep = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        assert!(forward_dlgn(&arch, &deep, &pv, &x, &x, GateMode::Soft, &r, true).is_err());
    }

    #[test]
    fn routing_with_unequal_shapes_is_rejected() {
        let arch = ArchSpec::conv_gap(5, 1, 2, 3, 2);
        let p = ParamSet::filled(&arch, 0.1).unwrap();
        let g = GateTensor::constant(&arch, 1.0).unwrap();
        let r = GateRouting::permuted(vec![1, 0]);
        assert!(forward_gated(&arch, &p, &g, &r, &[1.0; 5]).is_err());
    }

    #[test]
    fn permuted_routing_changes_output_in_general() {
        let arch = ArchSpec::fc(3, 4, 5);
        let mut rng = RngState::new(21);
        let pf = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let pv = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 3);
        let a = forward_dgn(
            &arch,
            &pf,
            &pv,
            &x,
            &x,
            GateMode::Hard,
            &GateRouting::identity(),
        )
        .unwrap();
        let b = forward_dgn(
            &arch,
            &pf,
            &pv,
            &x,
            &x,
            GateMode::Hard,
            &GateRouting::permuted(vec![2, 0, 1]),
        )
        .unwrap();
        assert_ne!(a.y(), b.y());
        assert_eq!(b.gates.layers[0], a.gates.layers[2]);
    }
}
