use super::*;
use crate::arch::{forward_dgn, forward_relu, GateRouting, GateTensor};
use crate::numerics::{InitScheme, RngState};

fn toy_conv() -> ArchSpec {
    ArchSpec::conv_gap(4, 1, 2, 2, 1)
}

#[test]
fn counts_match_family_formulas() {
    assert_eq!(path_count(&ArchSpec::fc(3, 3, 4)), 48);
    assert_eq!(path_count(&toy_conv()), 16);
    assert_eq!(path_count(&ArchSpec::res(2, 1, 1, 2)), 12);
    for arch in [
        ArchSpec::fc(3, 3, 4),
        toy_conv(),
        ArchSpec::conv_gap(5, 2, 2, 2, 2),
        ArchSpec::res(2, 1, 1, 2),
        ArchSpec::res(3, 2, 2, 2),
    ] {
        let t = enumerate_paths(&arch).unwrap();
        assert_eq!(t.len() as u128, path_count(&arch));
    }
    assert_eq!(enumerate_paths(&toy_conv()).unwrap().bundle_count(), 4);
}

#[test]
fn budget_is_enforced() {
    let arch = ArchSpec::fc(10, 5, 64);
    match enumerate_paths(&arch) {
        Err(Error::BudgetExceeded { paths, budget }) => {
            assert_eq!(paths, 10 * 64u128.pow(4));
            assert_eq!(budget, DEFAULT_PATH_BUDGET);
        }
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn fc_order_is_lexicographic() {
    let arch = ArchSpec::fc(2, 3, 3);
    let t = enumerate_paths(&arch).unwrap();
    // path index = i0 * 9 + i1 * 3 + i2, first weight index = i1 * 2 + i0
    for p in t.iter() {
        let (i0, i1, i2) = (p.index / 9, p.index / 3 % 3, p.index % 3);
        assert_eq!(p.input, i0);
        assert_eq!(p.weights[0] as usize, i1 * 2 + i0);
        assert_eq!(p.weights[1] as usize, 6 + i2 * 3 + i1);
        assert_eq!(p.weights[2] as usize, 15 + i2);
        assert_eq!(p.gates, &[i1 as u32, 3 + i2 as u32]);
    }
}

#[test]
fn hand_enumerated_two_layer_example() {
    let arch = ArchSpec::fc(2, 2, 2);
    let t = enumerate_paths(&arch).unwrap();
    let p = ParamSet::filled(&arch, 1.0).unwrap();
    let f = forward_relu(&arch, &p, &[1.0, 1.0]).unwrap();
    let dv = dual_vectors(&t, &p, &[1.0, 1.0], &f.gates).unwrap();
    assert_eq!(dv.npf, vec![1.0; 4]);
    assert_eq!(dv.npv, vec![1.0; 4]);
    assert_eq!(dv.output(), 4.0);
    let f = forward_relu(&arch, &p, &[-1.0, -1.0]).unwrap();
    let dv = dual_vectors(&t, &p, &[-1.0, -1.0], &f.gates).unwrap();
    assert!(dv.npf.iter().all(|&v| v == 0.0));
}

#[test]
fn activity_and_value_products() {
    let arch = ArchSpec::fc(2, 3, 2);
    let t = enumerate_paths(&arch).unwrap();
    let on = GateTensor::constant(&arch, 1.0).unwrap();
    assert!(t.iter().all(|p| path_activity(&t, &on, &p).unwrap() == 1.0));
    let mut g = on.clone();
    g.layers[1].values[0] = 0.0;
    assert_eq!(path_activity(&t, &g, &t.get(0)).unwrap(), 0.0);

    let s = 0.5;
    let mut params = ParamSet::filled(&arch, s).unwrap();
    let p0 = t.get(0);
    params.set(1, 0, -s).unwrap();
    assert_eq!(path_value(&params, &p0), -s * s * s);

    let conv = toy_conv();
    let t = enumerate_paths(&conv).unwrap();
    let on = GateTensor::constant(&conv, 1.0).unwrap();
    assert!(t
        .iter()
        .all(|p| path_activity(&t, &on, &p).unwrap() == 0.25));
}

#[test]
fn constant_one_feature_is_activity() {
    let arch = ArchSpec::fc(3, 3, 3);
    let mut rng = RngState::new(4);
    let pf = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
    let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let f = forward_relu(&arch, &pf, &x).unwrap();
    let t = enumerate_paths(&arch).unwrap();
    let phi = path_features(&t, &[1.0; 3], &f.gates).unwrap();
    for p in t.iter() {
        assert_eq!(phi[p.index], path_activity(&t, &f.gates, &p).unwrap());
    }
}

#[test]
fn overlap_examples() {
    let arch = ArchSpec::fc(2, 2, 2);
    let t = enumerate_paths(&arch).unwrap();
    let on = GateTensor::constant(&arch, 1.0).unwrap();
    assert_eq!(overlap_counts(&t, &on, &on).unwrap(), vec![2, 2]);
    let mut gx = on.clone();
    gx.layers[0].values = vec![1.0, 0.0];
    assert_eq!(overlap(0, &t, &gx, &on).unwrap(), 1);
    assert_eq!(overlap(1, &t, &gx, &on).unwrap(), 1);
    let mut gy = on.clone();
    gy.layers[0].values = vec![0.0, 1.0];
    assert_eq!(overlap_counts(&t, &gx, &gy).unwrap(), vec![0, 0]);
    assert!(overlap(2, &t, &gx, &gy).is_err());

    let soft = GateTensor::constant(&arch, 0.5).unwrap();
    assert!(overlap_counts(&t, &soft, &on).is_err());
    assert_eq!(soft_overlap(&t, &soft, &on).unwrap(), vec![1.0, 1.0]);
    assert_eq!(soft_overlap(&t, &gx, &on).unwrap(), vec![1.0, 1.0]);
}

#[test]
fn bundles_share_values_and_cover_inputs() {
    let arch = ArchSpec::conv_gap(4, 2, 2, 2, 2);
    let t = enumerate_paths(&arch).unwrap();
    let bt = BundleTable::new(&t).unwrap();
    assert_eq!(bt.count() * 4, t.len());
    let mut rng = RngState::new(3);
    let params = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
    let values = path_values(&t, &params).unwrap();
    let mut seen = vec![false; t.len()];
    for b in 0..bt.count() {
        let m = bt.members(b);
        let v0 = values[m[0] as usize];
        for (i, &pi) in m.iter().enumerate() {
            assert_eq!(t.get(pi as usize).input, i);
            assert_eq!(t.get(pi as usize).weights, t.get(m[0] as usize).weights);
            assert_eq!(values[pi as usize], v0);
            assert!(!seen[pi as usize]);
            seen[pi as usize] = true;
        }
    }
    assert!(seen.into_iter().all(|s| s));
    assert!(BundleTable::new(&enumerate_paths(&ArchSpec::fc(2, 2, 2)).unwrap()).is_err());
}

#[test]
fn subfcn_examples() {
    let arch = ArchSpec::res(2, 2, 1, 2);
    let subs = enumerate_subfcns(&arch).unwrap();
    assert_eq!(subs.len(), 4);
    assert_eq!(subs[0].depth(&arch), 2);
    assert_eq!(subs[3].depth(&arch), 4);
    assert_eq!(subs[2].layers(&arch), vec![0, 2, 3]);
    let small = ArchSpec::res(2, 1, 1, 2);
    let total: u128 = enumerate_subfcns(&small)
        .unwrap()
        .iter()
        .map(|s| path_count(&s.fc_arch(&small)))
        .sum();
    assert_eq!(total, 12);
    assert!(enumerate_subfcns(&ArchSpec::fc(2, 2, 2)).is_err());
}

fn random_gates(arch: &ArchSpec, rng: &mut RngState) -> GateTensor {
    let hidden = arch
        .hidden_gate_shapes()
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|_| if rng.uniform() < 0.6 { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    GateTensor::from_hidden(arch, GateMode::Hard, hidden).unwrap()
}

#[test]
fn dual_inner_product_reproduces_forward() {
    let mut rng = RngState::new(17);
    for arch in [
        ArchSpec::fc(3, 3, 4),
        ArchSpec::conv_gap(5, 2, 2, 2, 2),
        ArchSpec::res(3, 2, 1, 3),
    ] {
        let t = enumerate_paths(&arch).unwrap();
        for _ in 0..5 {
            let pf = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
            let pv = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
            let x: Vec<f64> = (0..arch.d_in).map(|_| rng.normal()).collect();
            let f = forward_dgn(
                &arch,
                &pf,
                &pv,
                &x,
                &x,
                GateMode::Soft,
                &GateRouting::identity(),
            )
            .unwrap();
            let dv = dual_vectors(&t, &pv, &x, &f.gates).unwrap();
            assert!(
                (dv.output() - f.y()).abs() <= 1e-9 * (1.0 + f.y().abs()),
                "{}",
                arch.family_name()
            );
        }
    }
}

#[test]
fn path_gradient_matches_tape() {
    let mut rng = RngState::new(2);
    for arch in [
        ArchSpec::fc(2, 3, 3),
        ArchSpec::conv_gap(4, 1, 2, 2, 2),
        ArchSpec::res(2, 1, 1, 2),
    ] {
        let t = enumerate_paths(&arch).unwrap();
        let pv = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
        let gates = random_gates(&arch, &mut rng);
        let routing = GateRouting::identity();
        let net = crate::arch::Network::FixedGates {
            arch: &arch,
            value: &pv,
            gates: &gates,
            routing: &routing,
        };
        let x: Vec<f64> = (0..arch.d_in).map(|_| rng.normal()).collect();
        let g = crate::arch::grad(&net, crate::arch::ParamSubset::Value, &x).unwrap();
        let oracle = value_gradient(&t, &pv, &x, &gates).unwrap();
        for (a, b) in g.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn res_features_concatenate_subfcn_features() {
    let arch = ArchSpec::res(2, 2, 1, 2);
    let mut rng = RngState::new(6);
    let t = enumerate_paths(&arch).unwrap();
    let gates = random_gates(&arch, &mut rng);
    let params = ParamSet::init(&arch, InitScheme::Gaussian, &mut rng).unwrap();
    let x = [0.7, -1.3];
    let whole = dual_vectors(&t, &params, &x, &gates).unwrap();
    let mut npf = Vec::new();
    let mut npv = Vec::new();
    for sub in enumerate_subfcns(&arch).unwrap() {
        let fc = sub.fc_arch(&arch);
        let ts = enumerate_paths(&fc).unwrap();
        let dv = dual_vectors(
            &ts,
            &sub.params(&arch, &params).unwrap(),
            &x,
            &sub.gates(&arch, &gates).unwrap(),
        )
        .unwrap();
        npf.extend(dv.npf);
        npv.extend(dv.npv);
    }
    assert_eq!(whole.npf, npf);
    assert_eq!(whole.npv, npv);
}
