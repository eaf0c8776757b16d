//! Property tests over randomly drawn small architectures, parameters and
//! inputs.

mod common;

use common::{any_arch, conv_arch, fc_arch, random_hard_gates, random_input, res_arch};
use dualview::arch::{
    forward_dgn, forward_gated, forward_relu, grad, ArchSpec, Family, GateKind, GateMode,
    GateRouting, GateTensor, Network, ParamSet, ParamSubset,
};
use dualview::io::{generate_synthetic, ExperimentConfig, SyntheticSpec};
use dualview::kernels::{
    gate_correlations, gram, npk, npk_fc, relu_gates, rotate, rotate_gates, GramMatrix,
    KernelConstants,
};
use dualview::numerics::{dot, InitScheme, RngState};
use dualview::paths::{
    bundle_features, dual_vectors, enumerate_paths, enumerate_subfcns, overlap_counts, path_count,
    path_features, BundleTable,
};
use dualview::train::{train, Regime, TrainConfig};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn same_seed_same_parameters(arch in any_arch(), seed in any::<u64>()) {
        let a = ParamSet::init(&arch, InitScheme::Bernoulli, &mut RngState::new(seed)).unwrap();
        let b = ParamSet::init(&arch, InitScheme::Bernoulli, &mut RngState::new(seed)).unwrap();
        prop_assert_eq!(a.flat(), b.flat());
        prop_assert_eq!(a.num_params(), arch.param_count());
        prop_assert!(a.flat().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gate_tensors_respect_their_ranges(arch in any_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let pf = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let pv = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let x = random_input(arch.d_in, &mut rng);
        for mode in [GateMode::Hard, GateMode::Soft] {
            let f = forward_dgn(&arch, &pf, &pv, &x, &x, mode, &GateRouting::identity()).unwrap();
            for layer in &f.gates.layers {
                for &g in &layer.values {
                    match (layer.kind, mode) {
                        (GateKind::Pool, _) => prop_assert_eq!(g, 1.0 / arch.d_in as f64),
                        (GateKind::Hidden, GateMode::Hard) => prop_assert!(g == 0.0 || g == 1.0),
                        (GateKind::Hidden, GateMode::Soft) => prop_assert!(g > 0.0 && g < 1.0 || g == 0.0 || g == 1.0),
                    }
                }
            }
        }
    }

    #[test]
    fn unit_gates_give_the_linear_network(arch in any_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let x = random_input(arch.d_in, &mut rng);
        let ones = GateTensor::constant(&arch, 1.0).unwrap();
        let galu = forward_gated(&arch, &p, &ones, &GateRouting::identity(), &x).unwrap().y();
        // linear network as a sum over paths of input times weights
        let table = enumerate_paths(&arch).unwrap();
        let linear = dual_vectors(&table, &p, &x, &ones).unwrap().output();
        prop_assert!(close(galu, linear, 1e-9), "{} vs {}", galu, linear);
        // and linear in the input
        let z = random_input(arch.d_in, &mut rng);
        let mix: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let gz = forward_gated(&arch, &p, &ones, &GateRouting::identity(), &z).unwrap().y();
        let gm = forward_gated(&arch, &p, &ones, &GateRouting::identity(), &mix).unwrap().y();
        prop_assert!(close(gm, 2.0 * galu - 0.5 * gz, 1e-9));
    }

    #[test]
    fn self_gated_dgn_matches_relu_on_every_layer(arch in any_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let x = random_input(arch.d_in, &mut rng);
        let a = forward_relu(&arch, &p, &x).unwrap();
        let b = forward_dgn(&arch, &p, &p, &x, &x, GateMode::Hard, &GateRouting::identity()).unwrap();
        prop_assert_eq!(&a.output, &b.output);
        prop_assert_eq!(&a.trace, &b.trace);
        prop_assert_eq!(&a.gates, &b.gates);
    }

    #[test]
    fn conv_output_is_rotation_invariant(arch in conv_arch(), seed in any::<u64>(), r in 0usize..8) {
        let mut rng = RngState::new(seed);
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let x = random_input(arch.d_in, &mut rng);
        let y0 = forward_relu(&arch, &p, &x).unwrap().y();
        let y1 = forward_relu(&arch, &p, &rotate(&x, r % arch.d_in)).unwrap().y();
        prop_assert!(close(y0, y1, 1e-9));
    }

    #[test]
    fn output_is_the_path_inner_product(arch in any_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let table = enumerate_paths(&arch).unwrap();
        prop_assert_eq!(table.len() as u128, path_count(&arch));
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let x = random_input(arch.d_in, &mut rng);
        let y = forward_relu(&arch, &p, &x).unwrap().y();
        let dv = dual_vectors(&table, &p, &x, &relu_gates(&arch, &p, &x).unwrap()).unwrap();
        prop_assert!((y - dv.output()).abs() <= 1e-9 * (1.0 + y.abs()));
    }

    #[test]
    fn feature_inner_product_is_overlap_weighted(arch in any_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let table = enumerate_paths(&arch).unwrap();
        let (x, y) = (random_input(arch.d_in, &mut rng), random_input(arch.d_in, &mut rng));
        let (gx, gy) = (random_hard_gates(&arch, 0.6, &mut rng), random_hard_gates(&arch, 0.6, &mut rng));
        let inner = dot(&path_features(&table, &x, &gx).unwrap(), &path_features(&table, &y, &gy).unwrap());
        let counts = overlap_counts(&table, &gx, &gy).unwrap();
        // pooling contributes (1/d_in)^2 per path
        let pool = if table.pooled() { (arch.d_in as f64).powi(-2) } else { 1.0 };
        let weighted: f64 = (0..arch.d_in).map(|i| counts[i] as f64 * x[i] * y[i] * pool).sum();
        prop_assert!(close(inner, weighted, 1e-9), "{} vs {}", inner, weighted);
    }

    #[test]
    fn fc_overlap_is_a_product_of_gate_counts(arch in fc_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let table = enumerate_paths(&arch).unwrap();
        let (gx, gy) = (random_hard_gates(&arch, 0.5, &mut rng), random_hard_gates(&arch, 0.5, &mut rng));
        let product: u64 = gate_correlations(&gx, &gy).unwrap().iter().map(|&c| c as u64).product();
        for c in overlap_counts(&table, &gx, &gy).unwrap() {
            prop_assert_eq!(c, product);
        }
    }

    #[test]
    fn fc_kernel_ignores_layer_order(arch in fc_arch(), seed in any::<u64>(), shift in 0usize..4) {
        let mut rng = RngState::new(seed);
        let (x, y) = (random_input(arch.d_in, &mut rng), random_input(arch.d_in, &mut rng));
        let (gx, gy) = (random_hard_gates(&arch, 0.5, &mut rng), random_hard_gates(&arch, 0.5, &mut rng));
        let n = gx.hidden_count();
        if n > 0 {
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let (px, py) = (gx.routed(&perm).unwrap(), gy.routed(&perm).unwrap());
            let a = npk_fc(&x, &y, &gx, &gy).unwrap();
            let b = npk_fc(&x, &y, &px, &py).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn closed_form_kernel_matches_path_space(arch in any_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let table = enumerate_paths(&arch).unwrap();
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let (x, y) = (random_input(arch.d_in, &mut rng), random_input(arch.d_in, &mut rng));
        let (gx, gy) = (relu_gates(&arch, &p, &x).unwrap(), relu_gates(&arch, &p, &y).unwrap());
        let fx = bundle_features(&table, &path_features(&table, &x, &gx).unwrap());
        let fy = bundle_features(&table, &path_features(&table, &y, &gy).unwrap());
        let closed = npk(&arch, &x, &y, &gx, &gy).unwrap();
        prop_assert!(close(closed, dot(&fx, &fy), 1e-9));
    }

    #[test]
    fn bundles_hold_d_in_paths_with_one_value(arch in conv_arch()) {
        let table = enumerate_paths(&arch).unwrap();
        let bundles = BundleTable::new(&table).unwrap();
        prop_assert_eq!(bundles.count() * arch.d_in, table.len());
        let mut seen = vec![false; table.len()];
        for b in 0..bundles.count() {
            let members = bundles.members(b);
            prop_assert_eq!(members.len(), arch.d_in);
            let first = table.get(members[0] as usize);
            let mut inputs: Vec<usize> = Vec::new();
            for &m in members {
                let path = table.get(m as usize);
                prop_assert_eq!(path.weights, first.weights);
                prop_assert!(!seen[m as usize]);
                seen[m as usize] = true;
                inputs.push(path.input);
            }
            inputs.sort_unstable();
            prop_assert_eq!(inputs, (0..arch.d_in).collect::<Vec<_>>());
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn res_paths_concatenate_subnetwork_paths(arch in res_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let table = enumerate_paths(&arch).unwrap();
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let x = random_input(arch.d_in, &mut rng);
        let g = relu_gates(&arch, &p, &x).unwrap();
        let full = dual_vectors(&table, &p, &x, &g).unwrap();
        let mut npf = Vec::new();
        let mut npv = Vec::new();
        for mask in enumerate_subfcns(&arch).unwrap() {
            let sub = mask.fc_arch(&arch);
            let st = enumerate_paths(&sub).unwrap();
            let dv = dual_vectors(&st, &mask.params(&arch, &p).unwrap(), &x, &mask.gates(&arch, &g).unwrap()).unwrap();
            npf.extend(dv.npf);
            npv.extend(dv.npv);
        }
        prop_assert_eq!(npf, full.npf);
        prop_assert_eq!(npv, full.npv);
    }

    #[test]
    fn conv_kernel_is_invariant_under_joint_rotation(arch in conv_arch(), seed in any::<u64>(), s in 0usize..8) {
        let mut rng = RngState::new(seed);
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let (x, y) = (random_input(arch.d_in, &mut rng), random_input(arch.d_in, &mut rng));
        let s = s % arch.d_in;
        let (xr, yr) = (rotate(&x, s), rotate(&y, s));
        let a = npk(&arch, &x, &y, &relu_gates(&arch, &p, &x).unwrap(), &relu_gates(&arch, &p, &y).unwrap()).unwrap();
        let b = npk(&arch, &xr, &yr, &relu_gates(&arch, &p, &xr).unwrap(), &relu_gates(&arch, &p, &yr).unwrap()).unwrap();
        prop_assert!(close(a, b, 1e-9), "{} vs {}", a, b);
        // the rotated gates of an equivariant network are the gates of the rotated input
        let gr = rotate_gates(&relu_gates(&arch, &p, &x).unwrap(), s);
        let direct = relu_gates(&arch, &p, &xr).unwrap();
        prop_assert_eq!(gr, direct);
    }

    #[test]
    fn kernel_grams_are_psd(arch in any_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let p = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let points: Vec<Vec<f64>> = (0..10).map(|_| random_input(arch.d_in, &mut rng)).collect();
        let g = gram(&points, "npk", 64, |x, y| {
            npk(&arch, x, y, &relu_gates(&arch, &p, x)?, &relu_gates(&arch, &p, y)?)
        }).unwrap();
        prop_assert!(g.check_psd().passed);
        prop_assert!(g.max_asymmetry() <= 1e-12);
        let net = Network::Relu { arch: &arch, params: &p };
        let k = gram(&points, "ntk", 64, |x, y| dualview::kernels::ntk(&net, ParamSubset::Value, x, y)).unwrap();
        prop_assert!(k.check_psd().passed);
    }

    #[test]
    fn gram_files_round_trip(n in 1usize..12, seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let points: Vec<Vec<f64>> = (0..n).map(|_| random_input(3, &mut rng)).collect();
        let g = gram(&points, "npk", 64, |x, y| Ok(dot(x, y).exp())).unwrap();
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        let back = GramMatrix::read_csv(csv.as_slice()).unwrap();
        prop_assert_eq!(back.n, n);
        for (a, b) in back.data.iter().zip(&g.data) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let mut bin = Vec::new();
        g.write_binary(&mut bin).unwrap();
        prop_assert_eq!(GramMatrix::read_binary(bin.as_slice()).unwrap().data, g.data.clone());
    }

    #[test]
    fn gradient_length_is_the_parameter_count(arch in any_arch(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let pf = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let pv = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let x = random_input(arch.d_in, &mut rng);
        let routing = GateRouting::identity();
        let net = Network::Gated {
            arch: &arch,
            feature: &pf,
            value: &pv,
            kind: dualview::arch::FeatureKind::Linear,
            mode: GateMode::Soft,
            routing: &routing,
        };
        prop_assert_eq!(grad(&net, ParamSubset::Value, &x).unwrap().len(), arch.param_count());
        prop_assert_eq!(grad(&net, ParamSubset::All, &x).unwrap().len(), 2 * arch.param_count());
    }

    #[test]
    fn config_round_trips(
        seed in 0u64..1 << 40,
        epochs in 1usize..100,
        width in 1usize..64,
        regime in 0usize..6,
        sigma in 0.5f64..2.0,
    ) {
        let mut c = ExperimentConfig { seed, ..ExperimentConfig::default() };
        c.train.epochs = epochs;
        c.train.regime = Regime::ALL[regime];
        c.arch = ArchSpec::res(3, 1, 2, width);
        c.verify.sigma_scale = sigma;
        let text = c.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }
}

#[test]
fn kernel_constants_follow_depth_formulas() {
    let conv = ArchSpec::conv_gap(6, 2, 3, 4, 3);
    let k = KernelConstants::new(&conv).unwrap();
    let (s_cv, s_fc): (f64, f64) = (1.0 / 12f64.sqrt(), 0.5);
    let expect = 2.0 * s_cv.powi(2) * s_fc.powi(6) + 3.0 * s_cv.powi(4) * s_fc.powi(4);
    assert!((k.beta_cv.unwrap() - expect).abs() <= 1e-15 * expect);

    let res = ArchSpec::res(3, 2, 2, 9);
    let k = KernelConstants::new(&res).unwrap();
    let s: f64 = 1.0 / 3.0;
    for (mask, beta) in &k.beta_res {
        let depth = (mask.count_ones() as usize + 2) * 2;
        let expect = depth as f64 * s.powi(2 * (depth as i32 - 1));
        assert!((beta - expect).abs() <= 1e-15 * expect);
    }
    assert_eq!(k.beta_res.len(), 4);
}

#[test]
fn bernoulli_signs_are_balanced() {
    let mut rng = RngState::new(2024);
    let t = dualview::numerics::init_bernoulli(vec![100_000], 0.3, &mut rng).unwrap();
    let plus = t.values().iter().filter(|&&v| v > 0.0).count() as f64 / 1e5;
    assert!((0.49..=0.51).contains(&plus), "{plus}");
    assert!(t.values().iter().all(|&v| v.abs() == 0.3));
}

#[test]
fn routing_must_be_a_permutation_of_equal_layers() {
    let fc = ArchSpec::fc(2, 4, 3);
    assert!(GateRouting::permuted(vec![2, 0, 1]).validate(&fc).is_ok());
    assert!(GateRouting::permuted(vec![0, 0, 1]).validate(&fc).is_err());
    let conv = ArchSpec::conv_gap(5, 1, 2, 3, 2);
    assert!(GateRouting::permuted(vec![1, 0]).validate(&conv).is_err());
}

#[test]
fn train_reports_have_one_entry_per_epoch() {
    let data = generate_synthetic(&SyntheticSpec::Circles { noise: 0.1 }, 120, 3).unwrap();
    for regime in Regime::ALL {
        let mut c = TrainConfig::new(ArchSpec::fc(3, 3, 6).with_heads(2), regime);
        c.epochs = 3;
        let out = train(&c, &data, Some(&data)).unwrap();
        let curves = &out.report.curves;
        assert_eq!(curves.loss.len(), 3);
        assert_eq!(curves.train_accuracy.len(), 3);
        let all = curves
            .train_accuracy
            .iter()
            .chain(curves.test_accuracy.iter().flatten());
        assert!(all.copied().all(|a| (0.0..=1.0).contains(&a)));
        if let Family::Fc { .. } = c.arch.family {
            assert!(out.report.final_test_accuracy.is_some());
        }
    }
}
