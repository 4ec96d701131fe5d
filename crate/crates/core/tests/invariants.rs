mod common;

use common::*;
use fluxgrad::objectives::{average_gate_fidelity, composite_state_cost, gate_infidelity};
use fluxgrad::optim::{device_step, DEVICE_RATE};
use fluxgrad::{extract_params, minimize, CMat, MinimizeOptions, ParameterSet, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pattern_params() -> ParameterSet {
    let mut g = fluxgrad::workflow::fluxonium_chain(&Default::default()).unwrap();
    g.add_pulse("q1", cos_pulse(0.2, 3.0, 0.0, 50.0, 0.0)).unwrap();
    extract_params(&g, true, true).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_fidelity_is_the_operator_basis_sum(seed in any::<u64>(), k in 1usize..4) {
        let d = 1 << k;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_unitary(&mut rng, d);
        let t = random_unitary(&mut rng, d);
        let closed = average_gate_fidelity(&u, &t).unwrap();
        prop_assert!((closed - operator_basis_fidelity(&u, &t)).abs() < 1e-12);
        prop_assert!(closed > 1.0 / (d as f64 + 1.0) - 1e-12 && closed <= 1.0 + 1e-12);
    }

    #[test]
    fn state_cost_on_a_complete_basis_is_the_trace_overlap(seed in any::<u64>(), k in 1usize..4) {
        let d = 1 << k;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_unitary(&mut rng, d);
        let t = random_unitary(&mut rng, d);
        let (cost, _) = composite_state_cost(&u, &t).unwrap();
        let want = 1.0 - ((t.adjoint() * &u).trace() / d as f64).norm_sqr();
        prop_assert!((cost - want).abs() < 1e-12);
    }

    #[test]
    fn infidelity_is_invariant_under_global_phase(seed in any::<u64>(), phi in -3.2f64..3.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_unitary(&mut rng, 4);
        let t = random_unitary(&mut rng, 4);
        let (a, _) = gate_infidelity(&u, &t).unwrap();
        let (b, _) = gate_infidelity(&(&u * C64::from_polar(1.0, phi)), &t).unwrap();
        prop_assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn device_step_is_linear_and_touches_only_energies(
        g in proptest::collection::vec(-1.0f64..1.0, 16),
        s in -2.0f64..2.0,
    ) {
        let theta = pattern_params();
        let n = theta.len();
        let g = &g[..n];
        let one = device_step(&theta, g, DEVICE_RATE).unwrap();
        let scaled: Vec<f64> = g.iter().map(|x| s * x).collect();
        let two = device_step(&theta, &scaled, DEVICE_RATE).unwrap();
        for (i, e) in theta.entries.iter().enumerate() {
            let d1 = one.entries[i].value - e.value;
            let d2 = two.entries[i].value - e.value;
            if ParameterSet::is_energy_key(&e.key) {
                prop_assert!((d1 + DEVICE_RATE * g[i]).abs() < 1e-12);
                prop_assert!((d2 - s * d1).abs() < 1e-12 * (1.0 + d1.abs()));
            } else {
                prop_assert_eq!(d1, 0.0);
                prop_assert_eq!(d2, 0.0);
            }
        }
    }

    #[test]
    fn minimize_never_ends_above_the_start(
        diag in proptest::collection::vec(0.1f64..10.0, 4),
        x0 in proptest::collection::vec(-5.0f64..5.0, 4),
        lo in -1.0f64..0.0,
    ) {
        let f = |x: &[f64]| {
            let v: f64 = x.iter().zip(&diag).map(|(x, d)| d * (x - 1.5).powi(2) + (3.0 * x).sin()).sum();
            let g = x.iter().zip(&diag).map(|(x, d)| 2.0 * d * (x - 1.5) + 3.0 * (3.0 * x).cos()).collect();
            Ok((v, g))
        };
        let opts = MinimizeOptions { bounds: Some(vec![(lo, 3.0); 4]), ..Default::default() };
        let start: Vec<f64> = x0.iter().map(|x| x.clamp(lo, 3.0)).collect();
        let f0 = f(&start).unwrap().0;
        let r = minimize(f, &x0, &opts).unwrap();
        prop_assert!(r.fun <= f0 + 1e-12);
        prop_assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.x.iter().all(|&x| (lo..=3.0).contains(&x)));
    }
}

#[test]
fn zero_gradient_device_step_is_identity() {
    let theta = pattern_params();
    let same = device_step(&theta, &vec![0.0; theta.len()], DEVICE_RATE).unwrap();
    assert_eq!(same, theta);
    let twice = device_step(&device_step(&theta, &vec![0.7; theta.len()], 0.0).unwrap(), &vec![0.7; theta.len()], 0.0).unwrap();
    assert_eq!(twice, theta);
}

#[test]
fn operator_basis_oracle_is_one_for_equal_gates() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in [2, 4, 8] {
        let u = random_unitary(&mut rng, d);
        assert!((operator_basis_fidelity(&u, &u) - 1.0).abs() < 1e-12);
        assert!((&u.adjoint() * &u - CMat::identity(d, d)).norm() < 1e-12);
    }
}

#[test]
fn device_step_in_angular_units_matches_the_ghz_rule() {
    let theta = pattern_params();
    let k = theta.position("grey.ec").unwrap();
    let mut grad = vec![0.0; theta.len()];
    // -0.4280 per GHz, expressed per rad/ns
    grad[k] = -0.4280 / TP;
    let next = device_step(&theta, &grad, DEVICE_RATE).unwrap();
    let ec_ghz = next.get("grey.ec").unwrap() / TP;
    assert!((ec_ghz - (1.0 - 0.01 * -0.4280)).abs() < 1e-12, "{ec_ghz}");
}
