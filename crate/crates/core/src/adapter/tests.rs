use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::engine::{finite_difference_check, norm};

fn adapter(heads: usize, dim: usize, gate: LabelGate, layout: Layout) -> DataAdapter<f64> {
    let cfg = AdapterConfig {
        heads,
        label_gate: gate,
        layout,
        proj_dim: 3,
        ..AdapterConfig::default()
    };
    DataAdapter::new(&cfg, dim).unwrap()
}

fn set(psi: &mut ParamSet<f64>, name: &str, values: &[f64]) {
    psi.get_mut(name).unwrap().data_mut().copy_from_slice(values);
}

fn randomize(psi: &mut ParamSet<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in psi.iter_mut() {
        for v in t.data_mut() {
            *v = if name == LABEL_GAMMA {
                let m: f64 = rng.random_range(0.5..2.0);
                if rng.random_bool(0.3) { -m } else { m }
            } else {
                rng.random_range(-1.0..1.0)
            };
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

#[test]
fn sharp_gate_selects_matching_prototype() {
    let a = adapter(2, 2, LabelGate::Separate, Layout::Flat);
    let a = DataAdapter { tau: 0.01, ..a };
    let mut psi = a.init(0);
    set(&mut psi, FEATURE_PROTOTYPE, &[1.0, 0.0, 0.0, 1.0]);
    let s = a.gate_scores(&psi, &[1.0, 0.0]).unwrap();
    assert!((s[0] - 1.0).abs() < 1e-6 && s[1].abs() < 1e-6);
}

#[test]
fn warm_gate_matches_closed_form() {
    let a = adapter(2, 2, LabelGate::Separate, Layout::Flat);
    let mut psi = a.init(0);
    set(&mut psi, FEATURE_PROTOTYPE, &[1.0, 0.0, 0.0, 1.0]);
    let s = a.gate_scores(&psi, &[3.0, 0.0]).unwrap();
    // softmax([0.1, 0]) = [e^0.1, 1] / (e^0.1 + 1)
    let e = 0.1f64.exp();
    assert!((s[0] - e / (e + 1.0)).abs() < 1e-15);
    assert!((s[0] - 0.524_979_187_478_939_7).abs() < 1e-14);
    assert!((s[1] - 0.475_020_812_521_060_3).abs() < 1e-14);
}

#[test]
fn identical_prototypes_give_uniform_scores() {
    let a = adapter(4, 3, LabelGate::Separate, Layout::Flat);
    let mut psi = a.init(1);
    set(&mut psi, FEATURE_PROTOTYPE, &[0.3, -0.2, 0.9].repeat(4));
    set(&mut psi, LABEL_PROTOTYPE, &[1.0, 0.5, -0.5].repeat(4));
    for s in [
        a.gate_scores(&psi, &[1.0, 2.0, -7.0]).unwrap(),
        a.label_gate_scores(&psi, &[1.0, 2.0, -7.0]).unwrap(),
    ] {
        for v in s {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }
}

#[test]
fn identity_init_is_identity() {
    for gate in [LabelGate::Separate, LabelGate::Shared] {
        let a = adapter(8, 6, gate, Layout::TimeSeries { steps: 2 });
        let psi = a.init(3);
        let x = [0.4, -1.0, 2.0, 0.0, 3.5, -0.1];
        assert_eq!(a.adapt_feature(&psi, &x).unwrap(), x.to_vec());
        let y = a.adapt_label(&psi, &x, 0.7).unwrap();
        assert!((y - 0.7).abs() < 1e-15);
        let yhat = a.invert_prediction(&psi, &x, -1.3).unwrap();
        assert!((yhat + 1.3).abs() < 1e-15);
    }
}

#[test]
fn single_identity_head_doubles_features() {
    let a = adapter(1, 2, LabelGate::Separate, Layout::Flat);
    let mut psi = a.init(0);
    set(&mut psi, FEATURE_WEIGHT, &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(a.adapt_feature(&psi, &[1.5, -2.0]).unwrap(), vec![3.0, -4.0]);
    assert_eq!(a.label_gate_scores(&psi, &[1.5, -2.0]).unwrap(), vec![1.0]);
}

#[test]
fn label_head_arithmetic() {
    let a = adapter(1, 2, LabelGate::Separate, Layout::Flat);
    let mut psi = a.init(0);
    set(&mut psi, LABEL_GAMMA, &[2.0]);
    set(&mut psi, LABEL_BETA, &[0.5]);
    assert_eq!(a.adapt_label(&psi, &[1.0, 1.0], 1.0).unwrap(), 2.5);

    let a = adapter(2, 2, LabelGate::Separate, Layout::Flat);
    let mut psi = a.init(0);
    set(&mut psi, LABEL_PROTOTYPE, &[0.2, 0.1, 0.3, 0.2, 0.1, 0.3]);
    set(&mut psi, LABEL_GAMMA, &[1.0, 1.0]);
    set(&mut psi, LABEL_BETA, &[1.0, -1.0]);
    let z = [0.3, 0.8];
    assert_eq!(a.label_gate_scores(&psi, &z).unwrap(), vec![0.5, 0.5]);
    assert!((a.adapt_label(&psi, &z, 3.0).unwrap() - 3.0).abs() < 1e-15);
}

#[test]
fn multi_head_round_trip_is_not_identity() {
    let a = adapter(2, 2, LabelGate::Separate, Layout::Flat);
    let mut psi = a.init(0);
    set(&mut psi, LABEL_PROTOTYPE, &[0.2, 0.1, 0.3, 0.2, 0.1, 0.3]);
    set(&mut psi, LABEL_GAMMA, &[2.0, 1.0]);
    set(&mut psi, LABEL_BETA, &[0.0, 1.0]);
    let z = [1.0, -1.0];
    // H(1) = 0.5·(2·1 + 0) + 0.5·(1·1 + 1) = 2
    assert!((a.adapt_label(&psi, &z, 1.0).unwrap() - 2.0).abs() < 1e-15);
    // H⁻¹(1.5) = 0.5·(1.5/2) + 0.5·(1.5 − 1) = 0.625
    assert!((a.invert_prediction(&psi, &z, 1.5).unwrap() - 0.625).abs() < 1e-15);
    // H(3) = 5 and H⁻¹(5) = 0.5·2.5 + 0.5·4 = 3.25 ≠ 3
    let h = a.adapt_label(&psi, &z, 3.0).unwrap();
    assert!((h - 5.0).abs() < 1e-15);
    assert!((a.invert_prediction(&psi, &z, h).unwrap() - 3.25).abs() < 1e-15);
}

#[test]
fn single_head_inverse_round_trips() {
    let a = adapter(1, 3, LabelGate::Separate, Layout::Flat);
    let mut psi = a.init(0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let g: f64 = rng.random_range(1e-3..5.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        set(&mut psi, LABEL_GAMMA, &[g]);
        set(&mut psi, LABEL_BETA, &[rng.random_range(-3.0..3.0)]);
        let z = random_vec(&mut rng, 3);
        let y = rng.random_range(-3.0..3.0);
        let h = a.adapt_label(&psi, &z, y).unwrap();
        assert!((a.invert_prediction(&psi, &z, h).unwrap() - y).abs() <= 1e-12);
    }
}

#[test]
fn gamma_projection_guards_inverse() {
    let a = adapter(3, 2, LabelGate::Separate, Layout::Flat);
    let mut psi = a.init(0);
    set(&mut psi, LABEL_GAMMA, &[1e-5, -1e-6, 0.0]);
    assert!(a.invert_prediction(&psi, &[1.0, 0.0], 1.0).is_err());
    a.project_gammas(&mut psi).unwrap();
    assert_eq!(psi.get(LABEL_GAMMA).unwrap().data(), &[1e-3, -1e-3, 1e-3]);
    assert!(a.validate(&psi).is_ok());
}

#[test]
fn layout_mismatch_is_rejected() {
    let a = adapter(2, 4, LabelGate::Separate, Layout::Flat);
    let psi = a.init(0);
    assert!(a.adapt_feature(&psi, &[1.0, 2.0]).is_err());
    let cfg = AdapterConfig {
        layout: Layout::TimeSeries { steps: 3 },
        ..AdapterConfig::default()
    };
    assert!(DataAdapter::<f64>::new(&cfg, 4).is_err());
    let other = adapter(3, 4, LabelGate::Separate, Layout::Flat);
    assert!(other.adapt_feature(&psi, &[1.0, 2.0, 3.0, 4.0]).is_err());
}

#[test]
fn adaptation_displacement_is_bounded_by_largest_head() {
    let a = adapter(5, 4, LabelGate::Separate, Layout::Flat);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..20 {
        let mut psi = a.init(seed);
        randomize(&mut psi, seed);
        let x = random_vec(&mut rng, 4);
        let xt = a.adapt_feature(&psi, &x).unwrap();
        let disp: Vec<f64> = xt.iter().zip(&x).map(|(p, q)| p - q).collect();
        let w = psi.get(FEATURE_WEIGHT).unwrap().data();
        let b = psi.get(FEATURE_BIAS).unwrap().data();
        let max_head = (0..5)
            .map(|i| {
                let mut h = vec![0.0; 4];
                affine_into(&w[i * 16..(i + 1) * 16], &b[i * 4..(i + 1) * 4], &x, 4, &mut h);
                norm(&h)
            })
            .fold(0.0, f64::max);
        assert!(norm(&disp) <= max_head + 1e-12);
    }
}

#[test]
fn gate_scores_form_a_distribution() {
    let a = adapter(8, 5, LabelGate::Separate, Layout::Flat);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let psi = a.init(seed);
        let x = random_vec(&mut rng, 5);
        for s in [a.gate_scores(&psi, &x).unwrap(), a.label_gate_scores(&psi, &x).unwrap()] {
            assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn all_adapter_maps_pass_gradient_checks() {
    let configs = [
        (LabelGate::Separate, Layout::Flat, 5),
        (LabelGate::Shared, Layout::Flat, 4),
        (LabelGate::Separate, Layout::TimeSeries { steps: 3 }, 6),
        (LabelGate::Shared, Layout::TimeSeries { steps: 2 }, 6),
    ];
    for (gate, layout, dim) in configs {
        let a = adapter(3, dim, gate, layout);
        let a = DataAdapter { tau: 0.5, ..a };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..10 {
            let mut psi = a.init(seed);
            randomize(&mut psi, seed + 100);
            let x = random_vec(&mut rng, dim);
            let step = Tensor::vector(x[..a.step_dim()].to_vec());
            let full = Tensor::vector(x.clone());
            let mut xy = x.clone();
            xy.push(0.8);
            let xy = Tensor::vector(xy);
            let checks = [
                ("gate", finite_difference_check(&FeatureGateMap(&a), &psi, &step, 1e-6)),
                ("feature", finite_difference_check(&FeatureAdapterMap(&a), &psi, &full, 1e-6)),
                ("label gate", finite_difference_check(&LabelGateMap(&a), &psi, &full, 1e-6)),
                ("label", finite_difference_check(&LabelAdapterMap(&a), &psi, &xy, 1e-6)),
                ("inverse", finite_difference_check(&InversionMap(&a), &psi, &xy, 1e-6)),
                (
                    "full",
                    finite_difference_check(
                        &FullAdapterMap { adapter: &a, label: -0.4, prediction: 1.1 },
                        &psi,
                        &full,
                        1e-6,
                    ),
                ),
            ];
            for (name, err) in checks {
                assert!(err <= 1e-5, "{name} {gate:?} {layout:?} seed {seed}: {err}");
            }
        }
    }
}

#[test]
fn zero_feature_row_is_not_fatal() {
    let a = adapter(3, 4, LabelGate::Separate, Layout::Flat);
    let mut psi = a.init(2);
    randomize(&mut psi, 2);
    let x = [0.0; 4];
    let xt = a.adapt_feature(&psi, &x).unwrap();
    assert!(xt.iter().all(|v| v.is_finite()));
    let s = a.gate_scores(&psi, &x).unwrap();
    assert!(s.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}
