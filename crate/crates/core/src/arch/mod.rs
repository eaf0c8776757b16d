//! Architecture families, parameter sets, gates and the forward passes of
//! the ReLU network (DNN), the deep gated network (DGN) and the deep
//! linearly gated network (DLGN).

mod forward;
mod gates;
mod grad;
mod layout;
mod params;

pub use forward::{
    forward_dgn, forward_dlgn, forward_gated, forward_relu, FeatureKind, Forward, Network,
    TraceLayer, TraceStage,
};
pub use gates::{gate_fn, GateKind, GateLayer, GateMode, GateRouting, GateTensor};
pub use grad::{
    finite_diff_grad, grad, grad_seeded, grad_with, GradSegment, GradVector, NetRole, ParamSubset,
};
pub use layout::{GateShape, WeightKind, WeightLayer};
pub use params::{ParamSet, ParamSetKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three supported families. Depth counts weight layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `depth` weight layers, `depth - 1` hidden layers of `width` units.
    Fc { depth: usize, width: usize },
    /// `conv_layers` circular convolutions (`width` filters, window
    /// `window`), global average pooling, then `fc_layers` dense layers
    /// (the last one is the output layer).
    ConvGap {
        conv_layers: usize,
        window: usize,
        width: usize,
        fc_layers: usize,
    },
    /// `skips + 2` fully connected blocks of `block_depth` layers; blocks
    /// `1..=skips` carry an identity shortcut.
    Res {
        skips: usize,
        block_depth: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub d_in: usize,
    pub family: Family,
    #[serde(default = "default_c_scale")]
    pub c_scale: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Number of scalar output heads; kernel computations require 1.
    #[serde(default = "default_heads")]
    pub heads: usize,
}

fn default_c_scale() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    10.0
}
fn default_heads() -> usize {
    1
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self::fc(3, 4, 16)
    }
}

impl ArchSpec {
    pub fn fc(d_in: usize, depth: usize, width: usize) -> Self {
        Self {
            d_in,
            family: Family::Fc { depth, width },
            c_scale: 1.0,
            beta: 10.0,
            heads: 1,
        }
    }

    pub fn conv_gap(
        d_in: usize,
        conv_layers: usize,
        window: usize,
        width: usize,
        fc_layers: usize,
    ) -> Self {
        Self {
            d_in,
            family: Family::ConvGap {
                conv_layers,
                window,
                width,
                fc_layers,
            },
            c_scale: 1.0,
            beta: 10.0,
            heads: 1,
        }
    }

    pub fn res(d_in: usize, skips: usize, block_depth: usize, width: usize) -> Self {
        Self {
            d_in,
            family: Family::Res {
                skips,
                block_depth,
                width,
            },
            c_scale: 1.0,
            beta: 10.0,
            heads: 1,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_c_scale(mut self, c_scale: f64) -> Self {
        self.c_scale = c_scale;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn width(&self) -> usize {
        match self.family {
            Family::Fc { width, .. }
            | Family::ConvGap { width, .. }
            | Family::Res { width, .. } => width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::invalid(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        positive("d_in", self.d_in)?;
        positive("heads", self.heads)?;
        if !(self.c_scale > 0.0 && self.c_scale.is_finite()) {
            return Err(Error::invalid("c_scale must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be positive"));
        }
        match self.family {
            Family::Fc { depth, width } => {
                positive("depth", depth)?;
                positive("width", width)?;
            }
            Family::ConvGap {
                conv_layers,
                window,
                width,
                fc_layers,
            } => {
                positive("conv_layers", conv_layers)?;
                positive("window", window)?;
                positive("width", width)?;
                positive("fc_layers", fc_layers)?;
                if window >= self.d_in {
                    return Err(Error::invalid(format!(
                        "convolution window {window} must be smaller than d_in {}",
                        self.d_in
                    )));
                }
            }
            Family::Res {
                block_depth, width, ..
            } => {
                positive("block_depth", block_depth)?;
                positive("width", width)?;
            }
        }
        Ok(())
    }

    /// Number of weight layers on the longest input-to-output route.
    pub fn depth(&self) -> usize {
        match self.family {
            Family::Fc { depth, .. } => depth,
            Family::ConvGap {
                conv_layers,
                fc_layers,
                ..
            } => conv_layers + fc_layers,
            Family::Res {
                skips, block_depth, ..
            } => (skips + 2) * block_depth,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Fc { .. } => "fc",
            Family::ConvGap { .. } => "conv_gap",
            Family::Res { .. } => "res",
        }
    }
}
