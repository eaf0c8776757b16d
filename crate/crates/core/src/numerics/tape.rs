//! Vector-valued reverse-mode tape.
//!
//! Every forward graph in the crate (ReLU, GaLU value networks, linear and
//! shallow feature networks, circular convolutions, pooling, skip sums) is
//! recorded as a short sequence of vector ops over borrowed parameter
//! slices. `backward` walks the tape once in reverse and accumulates the
//! gradient of a seeded output into every parameter that asked for it.

/// Gate nonlinearity applied elementwise to a pre-activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateFn {
    /// `1{q > 0}`; derivative taken as 0 everywhere.
    Hard,
    /// `1 / (1 + exp(-beta q))`.
    Soft { beta: f64 },
}

impl GateFn {
    #[inline]
    pub fn eval(self, q: f64) -> f64 {
        match self {
            GateFn::Hard => {
                if q > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            GateFn::Soft { beta } => logistic(beta * q),
        }
    }
}

#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub type NodeId = usize;
pub type ParamId = usize;

/// Circular 1-D convolution geometry. Activations are laid out
/// position-major: `z[pos * channels + ch]`. Kernels are
/// `[window, c_in, c_out]` row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub positions: usize,
    pub window: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvShape {
    #[inline]
    pub fn kernel_index(&self, offset: usize, c_in: usize, c_out: usize) -> usize {
        (offset * self.c_in + c_in) * self.c_out + c_out
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Dense {
        weight: ParamId,
        input: NodeId,
        rows: usize,
        cols: usize,
    },
    Conv {
        kernel: ParamId,
        input: NodeId,
        shape: ConvShape,
    },
    Pool {
        input: NodeId,
        positions: usize,
        channels: usize,
    },
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Gate {
        pre: NodeId,
        gate: GateFn,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    requires_grad: bool,
}

#[derive(Debug)]
struct ParamSlot<'p> {
    values: &'p [f64],
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<'p> {
    params: Vec<ParamSlot<'p>>,
    nodes: Vec<Node>,
    ties: usize,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            nodes: Vec::new(),
            ties: 0,
        }
    }

    pub fn param(&mut self, values: &'p [f64], requires_grad: bool) -> ParamId {
        self.params.push(ParamSlot {
            values,
            requires_grad,
        });
        self.params.len() - 1
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Input, value, false)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of hard gates evaluated exactly at a zero pre-activation.
    pub fn ties(&self) -> usize {
        self.ties
    }

    /// `W z` with `W` stored row-major as `[rows, cols]`.
    pub fn dense(&mut self, weight: ParamId, input: NodeId, rows: usize, cols: usize) -> NodeId {
        let w = self.params[weight].values;
        let z = &self.nodes[input].value;
        assert_eq!(w.len(), rows * cols, "dense weight shape");
        assert_eq!(z.len(), cols, "dense input length");
        let out = w
            .chunks_exact(cols)
            .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.params[weight].requires_grad || self.nodes[input].requires_grad;
        self.push(
            Op::Dense {
                weight,
                input,
                rows,
                cols,
            },
            out,
            rg,
        )
    }

    /// `q[f, o] = sum_{c, i} K[c, i, o] * z[(f + c) mod P, i]`.
    pub fn conv(&mut self, kernel: ParamId, input: NodeId, shape: ConvShape) -> NodeId {
        let k = self.params[kernel].values;
        let z = &self.nodes[input].value;
        let ConvShape {
            positions,
            window,
            c_in,
            c_out,
        } = shape;
        assert_eq!(k.len(), window * c_in * c_out, "conv kernel shape");
        assert_eq!(z.len(), positions * c_in, "conv input length");
        let mut out = vec![0.0; positions * c_out];
        for f in 0..positions {
            let row = &mut out[f * c_out..(f + 1) * c_out];
            for c in 0..window {
                let src = (f + c) % positions;
                for i in 0..c_in {
                    let zi = z[src * c_in + i];
                    if zi == 0.0 {
                        continue;
                    }
                    let kbase = shape.kernel_index(c, i, 0);
                    for (o, r) in row.iter_mut().enumerate() {
                        *r += k[kbase + o] * zi;
                    }
                }
            }
        }
        let rg = self.params[kernel].requires_grad || self.nodes[input].requires_grad;
        self.push(
            Op::Conv {
                kernel,
                input,
                shape,
            },
            out,
            rg,
        )
    }

    /// Global average pooling over positions.
    pub fn pool(&mut self, input: NodeId, positions: usize, channels: usize) -> NodeId {
        let z = &self.nodes[input].value;
        assert_eq!(z.len(), positions * channels, "pool input length");
        let scale = 1.0 / positions as f64;
        let mut out = vec![0.0; channels];
        for row in z.chunks_exact(channels) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= scale);
        let rg = self.nodes[input].requires_grad;
        self.push(
            Op::Pool {
                input,
                positions,
                channels,
            },
            out,
            rg,
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = zip_map(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        let rg = self.nodes[a].requires_grad || self.nodes[b].requires_grad;
        self.push(Op::Mul(a, b), out, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = zip_map(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        let rg = self.nodes[a].requires_grad || self.nodes[b].requires_grad;
        self.push(Op::Add(a, b), out, rg)
    }

    pub fn gate(&mut self, pre: NodeId, gate: GateFn) -> NodeId {
        let q = &self.nodes[pre].value;
        if gate == GateFn::Hard {
            self.ties += q.iter().filter(|&&v| v == 0.0).count();
        }
        let out = q.iter().map(|&v| gate.eval(v)).collect();
        // Hard gates are piecewise constant: nothing flows back through them.
        let rg = matches!(gate, GateFn::Soft { .. }) && self.nodes[pre].requires_grad;
        self.push(Op::Gate { pre, gate }, out, rg)
    }

    /// `q * 1{q > 0}`, with subgradient 0 at the kink.
    pub fn relu(&mut self, pre: NodeId) -> NodeId {
        let g = self.gate(pre, GateFn::Hard);
        self.mul(pre, g)
    }

    fn push(&mut self, op: Op, value: Vec<f64>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    /// Back-propagates `seed` (same length as `output`) and returns one
    /// gradient buffer per registered parameter; parameters registered
    /// without `requires_grad` get `None`.
    pub fn backward(&self, output: NodeId, seed: &[f64]) -> Vec<Option<Vec<f64>>> {
        assert_eq!(seed.len(), self.nodes[output].value.len(), "seed length");
        let mut grads: Vec<Option<Vec<f64>>> = self
            .params
            .iter()
            .map(|p| p.requires_grad.then(|| vec![0.0; p.values.len()]))
            .collect();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[output] = Some(seed.to_vec());

        for id in (0..=output).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            match node.op {
                Op::Input => {}
                Op::Dense {
                    weight,
                    input,
                    rows,
                    cols,
                } => {
                    let z = &self.nodes[input].value;
                    if let Some(gw) = grads[weight].as_mut() {
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (dw, zc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(z) {
                                *dw += gr * zc;
                            }
                        }
                    }
                    if self.nodes[input].requires_grad {
                        let w = self.params[weight].values;
                        let dz = adjoint(&mut adj, input, cols);
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (d, wv) in dz.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                                *d += gr * wv;
                            }
                        }
                    }
                }
                Op::Conv {
                    kernel,
                    input,
                    shape,
                } => {
                    let z = &self.nodes[input].value;
                    let ConvShape {
                        positions,
                        window,
                        c_in,
                        c_out,
                    } = shape;
                    if let Some(gk) = grads[kernel].as_mut() {
                        for f in 0..positions {
                            let gf = &g[f * c_out..(f + 1) * c_out];
                            for c in 0..window {
                                let src = (f + c) % positions;
                                for i in 0..c_in {
                                    let zi = z[src * c_in + i];
                                    if zi == 0.0 {
                                        continue;
                                    }
                                    let base = shape.kernel_index(c, i, 0);
                                    for (dk, go) in gk[base..base + c_out].iter_mut().zip(gf) {
                                        *dk += go * zi;
                                    }
                                }
                            }
                        }
                    }
                    if self.nodes[input].requires_grad {
                        let k = self.params[kernel].values;
                        let dz = adjoint(&mut adj, input, positions * c_in);
                        for f in 0..positions {
                            let gf = &g[f * c_out..(f + 1) * c_out];
                            for c in 0..window {
                                let src = (f + c) % positions;
                                for i in 0..c_in {
                                    let base = shape.kernel_index(c, i, 0);
                                    let s: f64 = k[base..base + c_out]
                                        .iter()
                                        .zip(gf)
                                        .map(|(a, b)| a * b)
                                        .sum();
                                    dz[src * c_in + i] += s;
                                }
                            }
                        }
                    }
                }
                Op::Pool {
                    input,
                    positions,
                    channels,
                } => {
                    let scale = 1.0 / positions as f64;
                    let dz = adjoint(&mut adj, input, positions * channels);
                    for row in dz.chunks_exact_mut(channels) {
                        for (d, go) in row.iter_mut().zip(&g) {
                            *d += go * scale;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a].requires_grad {
                        let vb = &self.nodes[b].value;
                        let da = adjoint(&mut adj, a, g.len());
                        for ((d, go), y) in da.iter_mut().zip(&g).zip(vb) {
                            *d += go * y;
                        }
                    }
                    if self.nodes[b].requires_grad {
                        let va = &self.nodes[a].value;
                        let db = adjoint(&mut adj, b, g.len());
                        for ((d, go), x) in db.iter_mut().zip(&g).zip(va) {
                            *d += go * x;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for child in [a, b] {
                        if self.nodes[child].requires_grad {
                            let d = adjoint(&mut adj, child, g.len());
                            for (x, go) in d.iter_mut().zip(&g) {
                                *x += go;
                            }
                        }
                    }
                }
                Op::Gate { pre, gate } => {
                    if let GateFn::Soft { beta } = gate {
                        let out = &node.value;
                        let dq = adjoint(&mut adj, pre, g.len());
                        for ((d, go), s) in dq.iter_mut().zip(&g).zip(out) {
                            *d += go * beta * s * (1.0 - s);
                        }
                    }
                }
            }
        }
        grads
    }
}

fn adjoint(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    adj[id].get_or_insert_with(|| vec![0.0; len])
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise length");
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
