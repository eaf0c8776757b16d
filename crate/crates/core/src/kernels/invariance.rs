use serde::{Deserialize, Serialize};

use super::{npk, npk_conv_rotsum_with, npk_fc, npk_res_ensemble, relu_gates, rotate};
use crate::arch::{ArchSpec, Family, GateTensor, ParamSet};
use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::paths::{
    bundle_features, enumerate_paths_with_budget, path_features, PathTable, DEFAULT_PATH_BUDGET,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceCheck {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Reason the check did not run (budget refusals).
    pub skipped: Option<String>,
}

impl InvarianceCheck {
    pub fn measured(name: &str, max_deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
            skipped: None,
        }
    }

    pub fn skipped(name: &str, tolerance: f64, reason: String) -> Self {
        Self {
            name: name.to_string(),
            max_deviation: 0.0,
            tolerance,
            passed: true,
            skipped: Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub family: String,
    pub checks: Vec<InvarianceCheck>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Orderings of `n` layers to try: all of them up to 6 layers, the cyclic
/// shifts beyond that.
fn layer_orders(n: usize) -> Vec<Vec<usize>> {
    if n <= 6 {
        permutations(n)
    } else {
        (0..n)
            .map(|s| (0..n).map(|i| (i + s) % n).collect())
            .collect()
    }
}

fn brute_force_npk(
    table: &PathTable,
    x: &[f64],
    y: &[f64],
    gx: &GateTensor,
    gy: &GateTensor,
) -> Result<f64> {
    let fx = bundle_features(table, &path_features(table, x, gx)?);
    let fy = bundle_features(table, &path_features(table, y, gy)?);
    Ok(dot(&fx, &fy))
}

const ORACLE_TOL: f64 = 1e-9;
const PERMUTATION_TOL: f64 = 1e-12;

/// Runs the checks that apply to `arch`'s family on every probe pair,
/// with hard gates from the ReLU network `params_f`:
///
/// * every family: closed-form NPK against the brute-force path inner
///   product (skipped beyond the path budget);
/// * FC: gate-layer permutation and constant-1 input;
/// * CONV_GAP: joint rotation of both inputs;
/// * RES: sub-FCN additivity and removal of one block's paths.
pub fn invariance_report(
    arch: &ArchSpec,
    params_f: &ParamSet,
    probes: &[Vec<f64>],
) -> Result<InvarianceReport> {
    invariance_report_with_budget(arch, params_f, probes, DEFAULT_PATH_BUDGET)
}

/// [`invariance_report`] with an explicit path-enumeration budget.
pub fn invariance_report_with_budget(
    arch: &ArchSpec,
    params_f: &ParamSet,
    probes: &[Vec<f64>],
    budget: u128,
) -> Result<InvarianceReport> {
    if probes.len() < 2 {
        return Err(Error::invalid(
            "invariance report needs at least two probes",
        ));
    }
    let gates: Vec<GateTensor> = probes
        .iter()
        .map(|x| relu_gates(arch, params_f, x))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..probes.len())
        .flat_map(|i| (i..probes.len()).map(move |j| (i, j)))
        .collect();
    let mut checks = Vec::new();

    match enumerate_paths_with_budget(arch, budget) {
        Ok(table) => {
            let mut worst: f64 = 0.0;
            for &(i, j) in &pairs {
                let closed = npk(arch, &probes[i], &probes[j], &gates[i], &gates[j])?;
                let brute = brute_force_npk(&table, &probes[i], &probes[j], &gates[i], &gates[j])?;
                worst = worst.max(rel(closed, brute));
            }
            checks.push(InvarianceCheck::measured("path-oracle", worst, ORACLE_TOL));
        }
        Err(e @ Error::BudgetExceeded { .. }) => {
            checks.push(InvarianceCheck::skipped(
                "path-oracle",
                ORACLE_TOL,
                e.to_string(),
            ));
        }
        Err(e) => return Err(e),
    }

    match arch.family {
        Family::Fc { .. } => {
            let orders = layer_orders(arch.hidden_gate_count());
            let mut worst: f64 = 0.0;
            for &(i, j) in &pairs {
                let base = npk_fc(&probes[i], &probes[j], &gates[i], &gates[j])?;
                for order in &orders {
                    let v = npk_fc(
                        &probes[i],
                        &probes[j],
                        &gates[i].routed(order)?,
                        &gates[j].routed(order)?,
                    )?;
                    worst = worst.max(rel(base, v));
                }
            }
            checks.push(InvarianceCheck::measured(
                "layer-permutation",
                worst,
                PERMUTATION_TOL,
            ));

            let ones = vec![1.0; arch.d_in];
            let mut worst: f64 = 0.0;
            for &(i, j) in &pairs {
                let v = npk_fc(&ones, &ones, &gates[i], &gates[j])?;
                let product: f64 = gates[i]
                    .hidden()
                    .zip(gates[j].hidden())
                    .map(|(a, b)| dot(&a.values, &b.values))
                    .product();
                worst = worst.max(rel(v, arch.d_in as f64 * product));
            }
            checks.push(InvarianceCheck::measured("constant-one", worst, ORACLE_TOL));
        }
        Family::ConvGap { .. } => {
            let provider = |x: &[f64]| relu_gates(arch, params_f, x);
            let mut worst: f64 = 0.0;
            for &(i, j) in &pairs {
                let base = npk_conv_rotsum_with(arch, &probes[i], &probes[j], provider)?;
                for s in 1..arch.d_in {
                    let v = npk_conv_rotsum_with(
                        arch,
                        &rotate(&probes[i], s),
                        &rotate(&probes[j], s),
                        provider,
                    )?;
                    worst = worst.max(rel(base, v));
                }
            }
            checks.push(InvarianceCheck::measured("rotation", worst, ORACLE_TOL));
        }
        Family::Res {
            skips, block_depth, ..
        } => {
            let mut worst: f64 = 0.0;
            for &(i, j) in &pairs {
                let full = npk_res_ensemble(arch, &probes[i], &probes[j], &gates[i], &gates[j])?;
                let sum: f64 = full.terms.iter().map(|(_, v)| v).sum();
                worst = worst.max(rel(full.total, sum));
                for block in 1..=skips {
                    let (gi, gj) = (
                        silence_block(&gates[i], block, block_depth),
                        silence_block(&gates[j], block, block_depth),
                    );
                    let cut = npk_res_ensemble(arch, &probes[i], &probes[j], &gi, &gj)?;
                    for ((m, before), (_, after)) in full.terms.iter().zip(&cut.terms) {
                        let through = m >> (block - 1) & 1 == 1;
                        let expect = if through { 0.0 } else { *before };
                        worst = worst.max(rel(expect, *after));
                    }
                    worst = worst.max(rel(full.excluding(block), cut.total));
                }
            }
            checks.push(InvarianceCheck::measured("ensemble", worst, ORACLE_TOL));
        }
    }
    Ok(InvarianceReport {
        family: arch.family_name().to_string(),
        checks,
    })
}

/// Turns off every gate of middle block `block`, removing the paths that
/// traverse it.
fn silence_block(g: &GateTensor, block: usize, block_depth: usize) -> GateTensor {
    let mut out = g.clone();
    for t in 0..block_depth {
        let l = block * block_depth + t;
        out.layers[l].values.iter_mut().for_each(|v| *v = 0.0);
    }
    out
}
