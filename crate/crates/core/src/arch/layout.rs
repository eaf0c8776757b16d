use super::{ArchSpec, Family};
use crate::numerics::tape::ConvShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// Row-major `[rows, cols]` = `[out, in]`.
    Dense {
        rows: usize,
        cols: usize,
    },
    Conv(ConvShape),
}

impl WeightKind {
    pub fn shape(&self) -> Vec<usize> {
        match *self {
            WeightKind::Dense { rows, cols } => vec![rows, cols],
            WeightKind::Conv(s) => vec![s.window, s.c_in, s.c_out],
        }
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightLayer {
    pub kind: WeightKind,
    /// Standard deviation of the +-sigma value-network initialisation.
    pub sigma: f64,
}

/// Shape of one gating layer: `positions * channels` entries, position-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateShape {
    pub positions: usize,
    pub channels: usize,
}

impl GateShape {
    pub fn len(&self) -> usize {
        self.positions * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ArchSpec {
    pub fn sigma_fc(&self) -> f64 {
        self.c_scale / (self.width() as f64).sqrt()
    }

    pub fn sigma_cv(&self) -> f64 {
        match self.family {
            Family::ConvGap { window, width, .. } => {
                self.c_scale / ((width * window) as f64).sqrt()
            }
            _ => self.sigma_fc(),
        }
    }

    pub fn weight_layers(&self) -> Vec<WeightLayer> {
        let heads = self.heads;
        match self.family {
            Family::Fc { depth, width } => (0..depth)
                .map(|l| WeightLayer {
                    kind: WeightKind::Dense {
                        rows: if l + 1 == depth { heads } else { width },
                        cols: if l == 0 { self.d_in } else { width },
                    },
                    sigma: self.sigma_fc(),
                })
                .collect(),
            Family::ConvGap {
                conv_layers,
                window,
                width,
                fc_layers,
            } => {
                let mut out: Vec<WeightLayer> = (0..conv_layers)
                    .map(|l| WeightLayer {
                        kind: WeightKind::Conv(ConvShape {
                            positions: self.d_in,
                            window,
                            c_in: if l == 0 { 1 } else { width },
                            c_out: width,
                        }),
                        sigma: self.sigma_cv(),
                    })
                    .collect();
                out.extend((0..fc_layers).map(|j| WeightLayer {
                    kind: WeightKind::Dense {
                        rows: if j + 1 == fc_layers { heads } else { width },
                        cols: width,
                    },
                    sigma: self.sigma_fc(),
                }));
                out
            }
            Family::Res {
                skips,
                block_depth,
                width,
            } => {
                let total = (skips + 2) * block_depth;
                (0..total)
                    .map(|l| WeightLayer {
                        kind: WeightKind::Dense {
                            rows: if l + 1 == total { heads } else { width },
                            cols: if l == 0 { self.d_in } else { width },
                        },
                        sigma: self.sigma_fc(),
                    })
                    .collect()
            }
        }
    }

    /// Shapes of the gated hidden layers, in forward order (pooling excluded).
    pub fn hidden_gate_shapes(&self) -> Vec<GateShape> {
        let vec_of = |n: usize, w: usize| {
            vec![
                GateShape {
                    positions: 1,
                    channels: w
                };
                n
            ]
        };
        match self.family {
            Family::Fc { depth, width } => vec_of(depth - 1, width),
            Family::ConvGap {
                conv_layers,
                width,
                fc_layers,
                ..
            } => {
                let mut v = vec![
                    GateShape {
                        positions: self.d_in,
                        channels: width
                    };
                    conv_layers
                ];
                v.extend(vec_of(fc_layers - 1, width));
                v
            }
            Family::Res {
                skips,
                block_depth,
                width,
            } => vec_of((skips + 2) * block_depth - 1, width),
        }
    }

    pub fn hidden_gate_count(&self) -> usize {
        self.hidden_gate_shapes().len()
    }

    /// Total number of value-network weights.
    pub fn param_count(&self) -> usize {
        self.weight_layers().iter().map(|l| l.kind.len()).sum()
    }

    /// Shapes of the per-layer shallow feature maps used by DLGN-SF.
    pub(crate) fn shallow_layers(&self) -> Vec<WeightLayer> {
        match self.family {
            Family::Fc { width, .. } | Family::Res { width, .. } => (0..self.hidden_gate_count())
                .map(|_| WeightLayer {
                    kind: WeightKind::Dense {
                        rows: width,
                        cols: self.d_in,
                    },
                    sigma: self.sigma_fc(),
                })
                .collect(),
            Family::ConvGap { window, width, .. } => (0..self.hidden_gate_count())
                .map(|_| WeightLayer {
                    kind: WeightKind::Conv(ConvShape {
                        positions: self.d_in,
                        window,
                        c_in: 1,
                        c_out: width,
                    }),
                    sigma: self.sigma_cv(),
                })
                .collect(),
        }
    }
}
