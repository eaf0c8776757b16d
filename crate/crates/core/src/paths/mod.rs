//! Brute-force enumeration of input-to-output paths and the exact dual
//! objects built from them: neural path features (input times gate
//! activity), neural path values (product of weights), activity and
//! overlap counts. Everything here is exponential in depth and exists as an
//! oracle for the closed-form kernels.
//!
//! Paths are stored in lexicographic order of their index maps
//! `(I_0, I_1, ...)`. For CONV_GAP, a layer index is the pair
//! (window offset, output channel). For RES, rows are grouped by sub-FCN
//! mask in increasing bit order, lexicographic within each group.

mod subfcn;

pub use subfcn::{enumerate_subfcns, SubFcnMask};

use crate::arch::{ArchSpec, Family, GateMode, GateTensor, ParamSet, WeightKind};
use crate::error::{check_len, Error, Result};

/// Default refusal threshold for [`enumerate_paths`].
pub const DEFAULT_PATH_BUDGET: u128 = 1_000_000;

/// Closed-form path count to output head 0.
pub fn path_count(arch: &ArchSpec) -> u128 {
    let d_in = arch.d_in as u128;
    let pow = |b: usize, e: usize| (b as u128).saturating_pow(e as u32);
    match arch.family {
        Family::Fc { depth, width } => d_in.saturating_mul(pow(width, depth - 1)),
        Family::ConvGap {
            conv_layers,
            window,
            width,
            fc_layers,
        } => d_in
            .saturating_mul(pow(window * width, conv_layers))
            .saturating_mul(pow(width, fc_layers - 1)),
        Family::Res {
            skips,
            block_depth,
            width,
        } => {
            let mut total = 0u128;
            let mut binom = 1u128;
            for i in 0..=skips {
                total = total
                    .saturating_add(binom.saturating_mul(pow(width, (i + 2) * block_depth - 1)));
                binom = binom * (skips - i) as u128 / (i + 1) as u128;
            }
            d_in.saturating_mul(total)
        }
    }
}

/// One enumerated path, borrowed from its [`PathTable`].
#[derive(Debug, Clone, Copy)]
pub struct PathRef<'t> {
    pub index: usize,
    /// Input node `I_0`.
    pub input: usize,
    /// Flat indices into the concatenated weight layers (see
    /// [`ParamSet::flat`]), one per traversed layer.
    pub weights: &'t [u32],
    /// Flat indices into the concatenated hidden gate layers, one per
    /// traversed gated layer.
    pub gates: &'t [u32],
    /// Sub-FCN mask (RES only).
    pub mask: Option<u32>,
    /// Bundle id (CONV_GAP only).
    pub bundle: Option<usize>,
}

/// All paths of an architecture to output head 0.
#[derive(Debug, Clone)]
pub struct PathTable {
    arch: ArchSpec,
    inputs: Vec<u32>,
    weights: Vec<u32>,
    weight_off: Vec<usize>,
    gates: Vec<u32>,
    gate_off: Vec<usize>,
    masks: Vec<u32>,
    bundles: usize,
}

fn offsets(lens: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut acc = 0;
    lens.map(|n| {
        let o = acc;
        acc += n;
        o
    })
    .collect()
}

/// Odometer over `radices`, most significant first.
fn odometer(radices: &[usize], mut visit: impl FnMut(&[usize])) {
    if radices.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; radices.len()];
    loop {
        visit(&idx);
        let mut k = radices.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < radices[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

impl PathTable {
    fn push(&mut self, input: usize, weights: &[u32], gates: &[u32], mask: u32) {
        self.inputs.push(input as u32);
        self.weight_off.push(self.weights.len());
        self.weights.extend_from_slice(weights);
        self.gate_off.push(self.gates.len());
        self.gates.extend_from_slice(gates);
        self.masks.push(mask);
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn get(&self, index: usize) -> PathRef<'_> {
        let end = |off: &[usize], all: usize| off.get(index + 1).copied().unwrap_or(all);
        let w = self.weight_off[index]..end(&self.weight_off, self.weights.len());
        let g = self.gate_off[index]..end(&self.gate_off, self.gates.len());
        PathRef {
            index,
            input: self.inputs[index] as usize,
            weights: &self.weights[w],
            gates: &self.gates[g],
            mask: matches!(self.arch.family, Family::Res { .. }).then(|| self.masks[index]),
            bundle: (self.bundles > 0).then(|| index % self.bundles),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = PathRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Whether activities carry the `1/d_in` pooling factor.
    pub fn pooled(&self) -> bool {
        matches!(self.arch.family, Family::ConvGap { .. })
    }

    /// Number of weight-sharing bundles (CONV_GAP), zero otherwise.
    pub fn bundle_count(&self) -> usize {
        self.bundles
    }
}

/// [`enumerate_paths_with_budget`] at [`DEFAULT_PATH_BUDGET`].
pub fn enumerate_paths(arch: &ArchSpec) -> Result<PathTable> {
    enumerate_paths_with_budget(arch, DEFAULT_PATH_BUDGET)
}

pub fn enumerate_paths_with_budget(arch: &ArchSpec, budget: u128) -> Result<PathTable> {
    arch.validate()?;
    let paths = path_count(arch);
    if paths > budget {
        return Err(Error::BudgetExceeded { paths, budget });
    }
    let layers = arch.weight_layers();
    let w_off = offsets(layers.iter().map(|l| l.kind.len()));
    let g_off = offsets(arch.hidden_gate_shapes().iter().map(|s| s.len()));
    let n = paths as usize;
    let mut table = PathTable {
        arch: arch.clone(),
        inputs: Vec::with_capacity(n),
        weights: Vec::with_capacity(n * layers.len()),
        weight_off: Vec::with_capacity(n),
        gates: Vec::with_capacity(n * g_off.len()),
        gate_off: Vec::with_capacity(n),
        masks: Vec::with_capacity(n),
        bundles: 0,
    };
    let width = arch.width();
    match arch.family {
        Family::Fc { depth, .. } => {
            let chain: Vec<usize> = (0..depth).collect();
            chain_paths(&mut table, arch, &chain, &w_off, &g_off, 0);
        }
        Family::Res { .. } => {
            for sub in enumerate_subfcns(arch)? {
                let chain = sub.layers(arch);
                chain_paths(&mut table, arch, &chain, &w_off, &g_off, sub.mask);
            }
        }
        Family::ConvGap {
            conv_layers,
            window,
            fc_layers,
            ..
        } => {
            let d_in = arch.d_in;
            let mut radices = vec![d_in];
            for _ in 0..conv_layers {
                radices.extend([window, width]);
            }
            radices.extend(std::iter::repeat_n(width, fc_layers - 1));
            let mut wbuf = Vec::new();
            let mut gbuf = Vec::new();
            odometer(&radices, |idx| {
                wbuf.clear();
                gbuf.clear();
                let mut pos = idx[0];
                let mut ch = 0;
                for l in 0..conv_layers {
                    let (c, o) = (idx[1 + 2 * l], idx[2 + 2 * l]);
                    let WeightKind::Conv(shape) = layers[l].kind else {
                        unreachable!()
                    };
                    wbuf.push((w_off[l] + shape.kernel_index(c, ch, o)) as u32);
                    // the output at position f reads the input at f + c
                    pos = (pos + d_in - c) % d_in;
                    ch = o;
                    gbuf.push((g_off[l] + pos * width + ch) as u32);
                }
                let mut node = ch;
                for j in 0..fc_layers {
                    let l = conv_layers + j;
                    let last = j + 1 == fc_layers;
                    let next = if last {
                        0
                    } else {
                        idx[1 + 2 * conv_layers + j]
                    };
                    wbuf.push((w_off[l] + next * width + node) as u32);
                    if !last {
                        gbuf.push((g_off[l] + next) as u32);
                    }
                    node = next;
                }
                table.push(idx[0], &wbuf, &gbuf, 0);
            });
            table.bundles = n / d_in;
        }
    }
    debug_assert_eq!(table.len(), n);
    Ok(table)
}

/// Paths through a chain of dense layers (global layer ids); every layer
/// except the chain's last has its output gated at its own global index.
fn chain_paths(
    table: &mut PathTable,
    arch: &ArchSpec,
    chain: &[usize],
    w_off: &[usize],
    g_off: &[usize],
    mask: u32,
) {
    let width = arch.width();
    let mut radices = vec![arch.d_in];
    radices.extend(std::iter::repeat_n(width, chain.len() - 1));
    let layers = arch.weight_layers();
    let mut wbuf = Vec::with_capacity(chain.len());
    let mut gbuf = Vec::with_capacity(chain.len());
    odometer(&radices, |idx| {
        wbuf.clear();
        gbuf.clear();
        for (k, &l) in chain.iter().enumerate() {
            let WeightKind::Dense { cols, .. } = layers[l].kind else {
                unreachable!()
            };
            let last = k + 1 == chain.len();
            let next = if last { 0 } else { idx[k + 1] };
            wbuf.push((w_off[l] + next * cols + idx[k]) as u32);
            if !last {
                gbuf.push((g_off[l] + next) as u32);
            }
        }
        table.push(idx[0], &wbuf, &gbuf, mask);
    });
}

/// Partition of CONV_GAP paths into weight-sharing bundles.
#[derive(Debug, Clone)]
pub struct BundleTable {
    size: usize,
    members: Vec<u32>,
}

impl BundleTable {
    pub fn new(table: &PathTable) -> Result<Self> {
        if !table.pooled() {
            return Err(Error::invalid(
                "bundles exist only for CONV_GAP path tables",
            ));
        }
        let count = table.bundle_count();
        let size = table.arch().d_in;
        let mut members = vec![u32::MAX; count * size];
        for p in table.iter() {
            let b = p.bundle.expect("pooled table has bundles");
            members[b * size + p.input] = p.index as u32;
        }
        Ok(Self { size, members })
    }

    pub fn count(&self) -> usize {
        self.members.len() / self.size
    }

    /// Path indices of bundle `b`, ordered by input node.
    pub fn members(&self, b: usize) -> &[u32] {
        &self.members[b * self.size..(b + 1) * self.size]
    }
}

fn flat_hidden(gates: &GateTensor) -> Vec<f64> {
    gates
        .hidden()
        .flat_map(|l| l.values.iter().copied())
        .collect()
}

fn check_gates(table: &PathTable, gates: &GateTensor) -> Result<()> {
    let shapes = table.arch().hidden_gate_shapes();
    check_len("gate layers", shapes.len(), gates.hidden_count())?;
    for (s, l) in shapes.iter().zip(gates.hidden()) {
        if *s != l.shape() {
            return Err(Error::invalid(
                "gate tensor does not match the path table's architecture",
            ));
        }
    }
    Ok(())
}

fn activity_flat(table: &PathTable, flat: &[f64], p: &PathRef<'_>) -> f64 {
    let a: f64 = p.gates.iter().map(|&g| flat[g as usize]).product();
    if table.pooled() {
        a / table.arch().d_in as f64
    } else {
        a
    }
}

/// Product of the gates on `p`, including the pooling factor for CONV_GAP.
pub fn path_activity(table: &PathTable, gates: &GateTensor, p: &PathRef<'_>) -> Result<f64> {
    check_gates(table, gates)?;
    Ok(activity_flat(table, &flat_hidden(gates), p))
}

/// Product of the weights on `p`.
pub fn path_value(params: &ParamSet, p: &PathRef<'_>) -> f64 {
    let flat = params.flat();
    p.weights.iter().map(|&w| flat[w as usize]).product()
}

/// Per-path features `x(I_0) A(x, p)`, without bundling.
pub fn path_features(table: &PathTable, x: &[f64], gates: &GateTensor) -> Result<Vec<f64>> {
    check_len("path feature input", table.arch().d_in, x.len())?;
    check_gates(table, gates)?;
    let flat = flat_hidden(gates);
    Ok(table
        .iter()
        .map(|p| x[p.input] * activity_flat(table, &flat, &p))
        .collect())
}

/// Per-path values, without bundling.
pub fn path_values(table: &PathTable, params: &ParamSet) -> Result<Vec<f64>> {
    params.check(table.arch())?;
    let flat = params.flat();
    Ok(table
        .iter()
        .map(|p| p.weights.iter().map(|&w| flat[w as usize]).product())
        .collect())
}

/// Neural path feature and value vectors. CONV_GAP entries are per bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVectors {
    pub npf: Vec<f64>,
    pub npv: Vec<f64>,
}

impl DualVectors {
    /// `<npf, npv>`, the network output.
    pub fn output(&self) -> f64 {
        crate::numerics::dot(&self.npf, &self.npv)
    }
}

/// Sums per-path features over each bundle (identity for other families).
pub fn bundle_features(table: &PathTable, features: &[f64]) -> Vec<f64> {
    if !table.pooled() {
        return features.to_vec();
    }
    let nb = table.bundle_count();
    let mut out = vec![0.0; nb];
    for (i, f) in features.iter().enumerate() {
        out[i % nb] += f;
    }
    out
}

pub fn dual_vectors(
    table: &PathTable,
    params: &ParamSet,
    x: &[f64],
    gates: &GateTensor,
) -> Result<DualVectors> {
    let npf = bundle_features(table, &path_features(table, x, gates)?);
    let mut npv = path_values(table, params)?;
    if table.pooled() {
        npv.truncate(table.bundle_count());
    }
    Ok(DualVectors { npf, npv })
}

/// Per input node, the number of paths active under both gate tensors
/// (pooling factor excluded). Hard gates only.
pub fn overlap_counts(table: &PathTable, gx: &GateTensor, gy: &GateTensor) -> Result<Vec<u64>> {
    if gx.mode != GateMode::Hard || gy.mode != GateMode::Hard {
        return Err(Error::invalid(
            "overlap counts active paths and needs hard gates; use soft_overlap for the relaxation",
        ));
    }
    check_gates(table, gx)?;
    check_gates(table, gy)?;
    let (fx, fy) = (flat_hidden(gx), flat_hidden(gy));
    let mut out = vec![0u64; table.arch().d_in];
    for p in table.iter() {
        if p.gates
            .iter()
            .all(|&g| fx[g as usize] == 1.0 && fy[g as usize] == 1.0)
        {
            out[p.input] += 1;
        }
    }
    Ok(out)
}

/// Overlap count at a single input node.
pub fn overlap(i: usize, table: &PathTable, gx: &GateTensor, gy: &GateTensor) -> Result<u64> {
    let counts = overlap_counts(table, gx, gy)?;
    counts
        .get(i)
        .copied()
        .ok_or_else(|| Error::invalid(format!("input node {i} out of range")))
}

/// Diagnostic relaxation for soft gates: per input node, the sum over paths
/// of the product of both gate values along the path. Coincides with
/// [`overlap_counts`] for hard gates; it is not a path count otherwise.
pub fn soft_overlap(table: &PathTable, gx: &GateTensor, gy: &GateTensor) -> Result<Vec<f64>> {
    check_gates(table, gx)?;
    check_gates(table, gy)?;
    let (fx, fy) = (flat_hidden(gx), flat_hidden(gy));
    let mut out = vec![0.0; table.arch().d_in];
    for p in table.iter() {
        out[p.input] += p
            .gates
            .iter()
            .map(|&g| fx[g as usize] * fy[g as usize])
            .product::<f64>();
    }
    Ok(out)
}

/// Gradient of `<npf, npv>` with respect to every weight, assembled path by
/// path: each path adds its feature times the product of its other weights.
pub fn value_gradient(
    table: &PathTable,
    params: &ParamSet,
    x: &[f64],
    gates: &GateTensor,
) -> Result<Vec<f64>> {
    let features = path_features(table, x, gates)?;
    params.check(table.arch())?;
    let flat = params.flat();
    let mut grad = vec![0.0; flat.len()];
    let mut prefix = Vec::new();
    for p in table.iter() {
        let phi = features[p.index];
        if phi == 0.0 {
            continue;
        }
        prefix.clear();
        let mut acc = 1.0;
        for &w in p.weights {
            prefix.push(acc);
            acc *= flat[w as usize];
        }
        let mut suffix = 1.0;
        for (k, &w) in p.weights.iter().enumerate().rev() {
            grad[w as usize] += phi * prefix[k] * suffix;
            suffix *= flat[w as usize];
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests;
