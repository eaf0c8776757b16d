use serde::{Deserialize, Serialize};

use super::{ArchSpec, Family, GateShape};
use crate::error::{check_len, Error, Result};
use crate::numerics::tape::GateFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Hard,
    #[default]
    Soft,
}

impl GateMode {
    pub fn gate_fn(self, beta: f64) -> GateFn {
        match self {
            GateMode::Hard => GateFn::Hard,
            GateMode::Soft => GateFn::Soft { beta },
        }
    }
}

/// `1{q > 0}` (hard) or `logistic(beta q)` (soft).
pub fn gate_fn(q: f64, mode: GateMode, beta: f64) -> f64 {
    mode.gate_fn(beta).eval(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Hidden,
    /// Global-average-pooling mask, constant `1/d_in`.
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateLayer {
    pub kind: GateKind,
    pub positions: usize,
    pub channels: usize,
    /// Position-major: `values[pos * channels + ch]`.
    pub values: Vec<f64>,
}

impl GateLayer {
    pub fn shape(&self) -> GateShape {
        GateShape {
            positions: self.positions,
            channels: self.channels,
        }
    }

    pub fn at(&self, pos: usize, ch: usize) -> f64 {
        self.values[pos * self.channels + ch]
    }
}

/// Gate values of one input, in path order. For CONV_GAP the pooling mask
/// sits between the convolutional and dense gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateTensor {
    pub mode: GateMode,
    pub layers: Vec<GateLayer>,
}

impl GateTensor {
    /// Assembles a tensor from hidden-layer values, inserting the pooling
    /// mask where the family has one.
    pub fn from_hidden(arch: &ArchSpec, mode: GateMode, hidden: Vec<Vec<f64>>) -> Result<Self> {
        let shapes = arch.hidden_gate_shapes();
        check_len("GateTensor hidden layers", shapes.len(), hidden.len())?;
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        for (i, (shape, values)) in shapes.iter().zip(hidden).enumerate() {
            check_len("GateTensor layer", shape.len(), values.len())?;
            if let Family::ConvGap {
                conv_layers, width, ..
            } = arch.family
            {
                if i == conv_layers {
                    layers.push(Self::pool_layer(arch.d_in, width));
                }
            }
            layers.push(GateLayer {
                kind: GateKind::Hidden,
                positions: shape.positions,
                channels: shape.channels,
                values,
            });
        }
        if let Family::ConvGap {
            conv_layers,
            width,
            fc_layers: 1,
            ..
        } = arch.family
        {
            debug_assert_eq!(layers.len(), conv_layers);
            layers.push(Self::pool_layer(arch.d_in, width));
        }
        let t = Self { mode, layers };
        t.validate()?;
        Ok(t)
    }

    /// All hidden gates equal to `value` (hard mode if 0/1, soft otherwise).
    pub fn constant(arch: &ArchSpec, value: f64) -> Result<Self> {
        let mode = if value == 0.0 || value == 1.0 {
            GateMode::Hard
        } else {
            GateMode::Soft
        };
        let hidden = arch
            .hidden_gate_shapes()
            .iter()
            .map(|s| vec![value; s.len()])
            .collect();
        Self::from_hidden(arch, mode, hidden)
    }

    fn pool_layer(d_in: usize, width: usize) -> GateLayer {
        GateLayer {
            kind: GateKind::Pool,
            positions: d_in,
            channels: width,
            values: vec![1.0 / d_in as f64; d_in * width],
        }
    }

    pub fn hidden(&self) -> impl Iterator<Item = &GateLayer> {
        self.layers.iter().filter(|l| l.kind == GateKind::Hidden)
    }

    pub fn hidden_layer(&self, i: usize) -> &GateLayer {
        self.hidden().nth(i).expect("hidden gate layer index")
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden().count()
    }

    /// Hard: entries in {0, 1}. Soft: entries in [0, 1] (the logistic may
    /// round to an endpoint in floating point). Pool: exactly `1/positions`.
    pub fn validate(&self) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            check_len(
                "GateLayer values",
                layer.positions * layer.channels,
                layer.values.len(),
            )?;
            let ok = match layer.kind {
                GateKind::Pool => {
                    let v = 1.0 / layer.positions as f64;
                    layer.values.iter().all(|&g| g == v)
                }
                GateKind::Hidden => match self.mode {
                    GateMode::Hard => layer.values.iter().all(|&g| g == 0.0 || g == 1.0),
                    GateMode::Soft => layer.values.iter().all(|&g| (0.0..=1.0).contains(&g)),
                },
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "gate layer {l} violates its value range"
                )));
            }
        }
        Ok(())
    }

    /// Copy with hidden layer `i` taken from layer `perm[i]` of `self`.
    pub fn routed(&self, perm: &[usize]) -> Result<Self> {
        let hidden: Vec<&GateLayer> = self.hidden().collect();
        if perm.is_empty() {
            return Ok(self.clone());
        }
        check_len("routing permutation", hidden.len(), perm.len())?;
        let mut next = perm.iter();
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer.kind {
                GateKind::Pool => Ok(layer.clone()),
                GateKind::Hidden => {
                    let src = hidden[*next.next().expect("perm length checked")];
                    if src.shape() != layer.shape() {
                        return Err(Error::invalid(
                            "routing permutes gate layers of unequal shape",
                        ));
                    }
                    Ok(src.clone())
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            mode: self.mode,
            layers,
        })
    }
}

/// Assignment of feature-network gate layers to value-network layers,
/// plus the constant-1 value input switch. An empty permutation is the
/// identity.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GateRouting {
    #[serde(default)]
    pub perm: Vec<usize>,
    #[serde(default)]
    pub const_one: bool,
}

impl GateRouting {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn permuted(perm: Vec<usize>) -> Self {
        Self {
            perm,
            const_one: false,
        }
    }

    pub fn with_const_one(mut self, const_one: bool) -> Self {
        self.const_one = const_one;
        self
    }

    /// Source layer feeding value-network gate layer `l`.
    pub fn source(&self, l: usize) -> usize {
        if self.perm.is_empty() {
            l
        } else {
            self.perm[l]
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn validate(&self, arch: &ArchSpec) -> Result<()> {
        if self.perm.is_empty() {
            return Ok(());
        }
        let shapes = arch.hidden_gate_shapes();
        check_len("routing permutation", shapes.len(), self.perm.len())?;
        let mut seen = vec![false; shapes.len()];
        for (l, &p) in self.perm.iter().enumerate() {
            if p >= shapes.len() || seen[p] {
                return Err(Error::invalid(format!(
                    "{:?} is not a permutation",
                    self.perm
                )));
            }
            seen[p] = true;
            if shapes[p] != shapes[l] {
                return Err(Error::invalid(format!(
                    "routing maps gate layer {p} onto layer {l} of a different shape"
                )));
            }
        }
        Ok(())
    }

    /// The value-network input for data point `x`.
    pub fn value_input(&self, x: &[f64]) -> Vec<f64> {
        if self.const_one {
            vec![1.0; x.len()]
        } else {
            x.to_vec()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_fn_examples() {
        assert_eq!(gate_fn(0.0, GateMode::Soft, 10.0), 0.5);
        assert!((gate_fn(1.0, GateMode::Soft, 10.0) - 0.9999546).abs() < 1e-7);
        assert_eq!(gate_fn(0.0, GateMode::Hard, 10.0), 0.0);
        assert_eq!(gate_fn(0.3, GateMode::Hard, 10.0), 1.0);
    }

    #[test]
    fn conv_tensor_has_pool_layer() {
        let arch = ArchSpec::conv_gap(4, 1, 2, 2, 1);
        let g = GateTensor::constant(&arch, 1.0).unwrap();
        assert_eq!(g.layers.len(), 2);
        assert_eq!(g.layers[1].kind, GateKind::Pool);
        assert!(g.layers[1].values.iter().all(|&v| v == 0.25));
        let arch = ArchSpec::conv_gap(5, 2, 2, 3, 3);
        let g = GateTensor::constant(&arch, 1.0).unwrap();
        let kinds: Vec<_> = g.layers.iter().map(|l| l.kind).collect();
        use GateKind::*;
        assert_eq!(kinds, vec![Hidden, Hidden, Pool, Hidden, Hidden]);
    }

    #[test]
    fn routing_validation() {
        let fc = ArchSpec::fc(3, 4, 5);
        assert!(GateRouting::permuted(vec![2, 0, 1]).validate(&fc).is_ok());
        assert!(GateRouting::permuted(vec![0, 0, 1]).validate(&fc).is_err());
        assert!(GateRouting::permuted(vec![0, 1]).validate(&fc).is_err());
        let conv = ArchSpec::conv_gap(5, 2, 2, 3, 2);
        assert!(GateRouting::permuted(vec![1, 0, 2]).validate(&conv).is_ok());
        assert!(GateRouting::permuted(vec![2, 1, 0])
            .validate(&conv)
            .is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let arch = ArchSpec::fc(2, 2, 2);
        assert!(GateTensor::from_hidden(&arch, GateMode::Hard, vec![vec![0.5, 1.0]]).is_err());
        assert!(GateTensor::from_hidden(&arch, GateMode::Soft, vec![vec![0.5, 1.0]]).is_ok());
        assert!(GateTensor::from_hidden(&arch, GateMode::Soft, vec![vec![0.5]]).is_err());
    }
}
