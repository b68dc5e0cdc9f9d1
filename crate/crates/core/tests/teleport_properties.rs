use proptest::prelude::*;
use rand::Rng;

use seqcv::rng::stream;
use seqcv::teleport::{
    analytic_average_fidelity, equal_fidelity_n_max, equal_fidelity_plan, equal_transmissivity_max_rounds,
    equal_transmissivity_rounds_at, fidelity_from_fraction, simulate_round, SplitSchedule,
};
use seqcv::GaussianState;

#[test]
fn simulation_agrees_with_closed_form() {
    let mut rng = stream(77, 0);
    for k in 0..20 {
        let r = 1.5 * rng.random::<f64>();
        let len = rng.random_range(1..=4);
        let taus: Vec<f64> = (0..len).map(|_| 0.05 + 0.95 * rng.random::<f64>()).collect();
        let s = SplitSchedule::new(r, taus).unwrap();
        let n = rng.random_range(1..=len);
        let input = GaussianState::coherent(4.0 * rng.random::<f64>() - 2.0, 4.0 * rng.random::<f64>() - 2.0).unwrap();
        let sim = simulate_round(&s, n, &input, 100_000, 1000 + k).unwrap();
        let f = s.fidelity(n).unwrap();
        assert!((sim.estimate - f).abs() <= 4.0 * sim.stderr, "config {k}: {sim:?} vs {f}");
    }
}

#[test]
fn unentangled_simulation_is_classical() {
    let s = SplitSchedule::new(0.0, vec![0.7]).unwrap();
    let sim = simulate_round(&s, 1, &GaussianState::coherent(1.0, -2.0).unwrap(), 100_000, 4).unwrap();
    assert!((sim.estimate - 0.5).abs() <= 4.0 * sim.stderr);
}

#[test]
fn first_round_fidelity_is_monotone_in_tau() {
    for r in [0.0, 0.3, 0.8, 1.5, 3.0] {
        let mut last = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let f = fidelity_from_fraction(r, k as f64 / 1000.0);
            assert!(f >= last - 1e-15, "r={r} k={k}");
            last = f;
        }
    }
}

#[test]
fn equal_fidelity_always_dominates() {
    for f in [0.501, 0.505, 0.51, 0.55, 0.6, 0.7] {
        let n_max = equal_fidelity_n_max(f).unwrap();
        for k in 0..=60 {
            let r = 0.05 * k as f64;
            for j in 1..=200 {
                let got = equal_transmissivity_rounds_at(r, j as f64 / 200.0, f).unwrap();
                assert!(got <= n_max, "F={f} r={r} tau={}: {got} > {n_max}", j as f64 / 200.0);
            }
        }
    }
}

#[test]
fn plans_keep_every_round_nonclassical() {
    for f in [0.501, 0.52, 0.6, 0.75] {
        let plan = equal_fidelity_plan(f).unwrap();
        assert!(plan.fidelities.iter().all(|&x| x > 0.5 && x >= f - 1e-12));
        assert_eq!(plan.taus.last(), Some(&1.0));
    }
    let n = equal_transmissivity_max_rounds(0.8, 0.3).unwrap();
    let s = SplitSchedule::new(0.8, vec![0.3; n + 1]).unwrap();
    assert!((1..=n).all(|k| s.fidelity(k).unwrap() > 0.5));
    assert!(s.fidelity(n + 1).unwrap() <= 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_average_equals_closed_form(r in 0.0f64..1.5, taus in prop::collection::vec(0.0f64..=1.0, 1..6)) {
        let s = SplitSchedule::new(r, taus.clone()).unwrap();
        for n in 1..=taus.len() {
            let d = (analytic_average_fidelity(&s, n).unwrap() - s.fidelity(n).unwrap()).abs();
            prop_assert!(d <= 1e-12);
        }
    }

    #[test]
    fn fidelity_and_zeta_agree_on_classicality(r in 0.0f64..3.0, t in 0.0f64..=1.0) {
        let s = SplitSchedule::new(r, vec![t]).unwrap();
        let (f, z) = (s.fidelity(1).unwrap(), s.zeta(1).unwrap());
        prop_assume!((f - 0.5).abs() > 1e-12);
        prop_assert_eq!(f > 0.5, z < 2.0);
    }

    #[test]
    fn phase_space_route_matches_closed_zeta(r in 0.0f64..2.0, taus in prop::collection::vec(0.0f64..=1.0, 1..5)) {
        let s = SplitSchedule::new(r, taus.clone()).unwrap();
        for n in 1..=taus.len() {
            let z = s.round_state(n).unwrap().duan_zeta(0, 1).unwrap();
            prop_assert!((z - s.zeta(n).unwrap()).abs() <= 1e-10);
        }
    }
}
