#![allow(dead_code)]

use dualview::arch::{ArchSpec, GateMode, GateTensor};
use dualview::numerics::RngState;
use dualview::paths::path_count;
use proptest::prelude::*;

pub fn random_input(d: usize, rng: &mut RngState) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

pub fn random_hard_gates(arch: &ArchSpec, p_on: f64, rng: &mut RngState) -> GateTensor {
    let hidden = arch
        .hidden_gate_shapes()
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|_| (rng.uniform() < p_on) as u8 as f64)
                .collect()
        })
        .collect();
    GateTensor::from_hidden(arch, GateMode::Hard, hidden).unwrap()
}

pub fn fc_arch() -> impl Strategy<Value = ArchSpec> {
    (1usize..5, 1usize..5, 1usize..5)
        .prop_map(|(d_in, depth, width)| ArchSpec::fc(d_in, depth, width))
}

pub fn conv_arch() -> impl Strategy<Value = ArchSpec> {
    (3usize..7, 1usize..3, 1usize..3, 1usize..3, 1usize..3).prop_map(
        |(d_in, conv, window, width, fc)| {
            ArchSpec::conv_gap(d_in, conv, window.min(d_in - 1), width, fc)
        },
    )
}

pub fn res_arch() -> impl Strategy<Value = ArchSpec> {
    (1usize..4, 0usize..3, 1usize..3, 1usize..4)
        .prop_map(|(d_in, skips, block, width)| ArchSpec::res(d_in, skips, block, width))
}

/// Small architectures of every family with at most `10^5` paths.
pub fn any_arch() -> impl Strategy<Value = ArchSpec> {
    prop_oneof![fc_arch(), conv_arch(), res_arch()]
        .prop_filter("path budget", |a| path_count(a) <= 100_000)
}
