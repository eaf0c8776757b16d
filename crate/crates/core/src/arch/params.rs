use serde::{Deserialize, Serialize};

use super::{ArchSpec, WeightLayer};
use crate::error::{check_len, Error, Result};
use crate::numerics::{InitScheme, ParamTensor, RngState};

/// Which layer list a parameter set follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSetKind {
    /// One tensor per weight layer of the architecture.
    Standard,
    /// One shallow linear map per gated layer (DLGN-SF feature network).
    Shallow,
}

/// All weights of one network, one tensor per layer. There are no biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    kind: ParamSetKind,
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    /// Value-network style initialisation: every layer drawn from
    /// `scheme` with the layer's sigma (`c_scale / sqrt(w)` for dense
    /// layers, `c_scale / sqrt(w * w_cv)` for convolutions).
    pub fn init(arch: &ArchSpec, scheme: InitScheme, rng: &mut RngState) -> Result<Self> {
        arch.validate()?;
        Self::draw(
            ParamSetKind::Standard,
            &arch.weight_layers(),
            scheme,
            rng,
            1.0,
        )
    }

    /// Bernoulli +-sigma draw with every layer's sigma multiplied by
    /// `sigma_scale` (1.0 reproduces [`ParamSet::init`]).
    pub fn init_bernoulli_scaled(
        arch: &ArchSpec,
        sigma_scale: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        arch.validate()?;
        Self::draw(
            ParamSetKind::Standard,
            &arch.weight_layers(),
            InitScheme::Bernoulli,
            rng,
            sigma_scale,
        )
    }

    pub fn init_shallow(arch: &ArchSpec, scheme: InitScheme, rng: &mut RngState) -> Result<Self> {
        arch.validate()?;
        Self::draw(
            ParamSetKind::Shallow,
            &arch.shallow_layers(),
            scheme,
            rng,
            1.0,
        )
    }

    fn draw(
        kind: ParamSetKind,
        layers: &[WeightLayer],
        scheme: InitScheme,
        rng: &mut RngState,
        sigma_scale: f64,
    ) -> Result<Self> {
        let tensors = layers
            .iter()
            .map(|l| scheme.sample(l.kind.shape(), l.sigma * sigma_scale, rng))
            .collect::<Result<_>>()?;
        Ok(Self { kind, tensors })
    }

    /// Every weight set to `value`.
    pub fn filled(arch: &ArchSpec, value: f64) -> Result<Self> {
        arch.validate()?;
        let tensors = arch
            .weight_layers()
            .iter()
            .map(|l| ParamTensor::filled(l.kind.shape(), value))
            .collect::<Result<_>>()?;
        Ok(Self {
            kind: ParamSetKind::Standard,
            tensors,
        })
    }

    pub fn from_tensors(
        arch: &ArchSpec,
        kind: ParamSetKind,
        tensors: Vec<ParamTensor>,
    ) -> Result<Self> {
        let set = Self { kind, tensors };
        set.check(arch)?;
        Ok(set)
    }

    /// Confirms tensor count and shapes match `arch`.
    pub fn check(&self, arch: &ArchSpec) -> Result<()> {
        let layers = match self.kind {
            ParamSetKind::Standard => arch.weight_layers(),
            ParamSetKind::Shallow => arch.shallow_layers(),
        };
        check_len("ParamSet layer count", layers.len(), self.tensors.len())?;
        for (i, (l, t)) in layers.iter().zip(&self.tensors).enumerate() {
            if l.kind.shape() != t.shape() {
                return Err(Error::invalid(format!(
                    "layer {i}: expected shape {:?}, got {:?}",
                    l.kind.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ParamSetKind {
        self.kind
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn layer(&self, l: usize) -> &ParamTensor {
        &self.tensors[l]
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        check_len("ParamSet::set_flat", self.num_params(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ParamSet::set_flat".into()));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.values_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Overwrites a single weight.
    pub fn set(&mut self, layer: usize, index: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("layer {layer} index {index}")));
        }
        let t = self
            .tensors
            .get_mut(layer)
            .ok_or_else(|| Error::invalid(format!("no layer {layer}")))?;
        let slot = t
            .values_mut()
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("layer {layer} has no index {index}")))?;
        *slot = value;
        Ok(())
    }
}
