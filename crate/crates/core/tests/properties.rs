mod common;

use proptest::prelude::*;
use qtraj::entanglement::{apply_local, concurrence_mixed, concurrence_pure, factored_concurrence};
use qtraj::kraus::{inefficient_photodetection_ops, photodetection_ops, povm_residual};
use qtraj::state::*;
use qtraj::trajectory::{pd_weights, trajectory_rng, Stepper};
use qtraj::{MeasurementSettings, Scheme, TwoQubitState};

fn state_from_seed(seed: u64, rank: usize) -> TwoQubitState {
    common::random_density(&mut trajectory_rng(seed, 7), rank)
}

fn scheme_of(k: usize) -> Scheme {
    [
        Scheme::Photodetection,
        Scheme::Homodyne,
        Scheme::Heterodyne,
        Scheme::MixedHetPd,
        Scheme::MixedHetDiscard,
    ][k]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bloch_round_trip(seed in any::<u64>(), rank in 1usize..=4) {
        let st = state_from_seed(seed, rank);
        let q = bloch_from_density(&st);
        let back = density_from_bloch(&q).unwrap();
        prop_assert!(max_abs(&(back.rho() - st.rho())) < 1e-12);
    }

    #[test]
    fn purity_identity(seed in any::<u64>(), rank in 1usize..=4) {
        let st = state_from_seed(seed, rank);
        let q = bloch_from_density(&st);
        prop_assert!((purity(&st) - 0.25 - q.norm_squared()).abs() < 1e-10);
    }

    #[test]
    fn concurrence_local_unitary_invariance(seed in any::<u64>(), rank in 1usize..=4) {
        let mut rng = trajectory_rng(seed, 8);
        let st = common::random_density(&mut rng, rank);
        let (ua, ub) = (common::random_su2(&mut rng), common::random_su2(&mut rng));
        let moved = TwoQubitState::new_unchecked(apply_local(st.rho(), &ua, &ub));
        let c0 = concurrence_mixed(&st).unwrap();
        prop_assert!((c0 - concurrence_mixed(&moved).unwrap()).abs() < 1e-9);
        let f0 = factored_concurrence(st.rho()).concurrence;
        prop_assert!((f0 - factored_concurrence(moved.rho()).concurrence).abs() < 1e-9);
        prop_assert!((c0 - f0).abs() < 1e-9);
    }

    #[test]
    fn pure_concurrence_routes_agree(seed in any::<u64>()) {
        let psi = common::random_pure(&mut trajectory_rng(seed, 9));
        let c = concurrence_pure(&psi);
        let st = density_from_pure(&psi);
        prop_assert!((c - concurrence_mixed(&st).unwrap()).abs() < 1e-9);
        prop_assert!((c - factored_concurrence(st.rho()).concurrence).abs() < 1e-9);
    }

    #[test]
    fn photodetection_weights_are_a_distribution(
        seed in any::<u64>(),
        rank in 1usize..=4,
        eps in 1e-5f64..0.01,
        eta3 in 0.0f64..=1.0,
        eta4 in 0.0f64..=1.0,
    ) {
        let st = state_from_seed(seed, rank);
        let s = MeasurementSettings::ideal(eps, 0.0, 0.0).with_efficiency(eta3, eta4);
        let w = pd_weights(&st, &s).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let set = inefficient_photodetection_ops(&s);
        prop_assert!(povm_residual(&set, 0).unwrap() < 1e-12);
        let ideal = photodetection_ops(&MeasurementSettings::ideal(eps, 0.0, 0.0)).unwrap();
        prop_assert!(povm_residual(&ideal, 0).unwrap() < 1e-12);
    }

    #[test]
    fn steps_keep_the_state_physical(
        seed in any::<u64>(),
        rank in 1usize..=4,
        scheme in 0usize..5,
        theta in 0.0f64..6.3,
        vartheta in 0.0f64..6.3,
        eta in 0.3f64..=1.0,
    ) {
        let scheme = scheme_of(scheme);
        let (theta, vartheta, eta) = match scheme {
            Scheme::Photodetection => (0.0, 0.0, eta),
            Scheme::Homodyne => (theta, vartheta, eta),
            Scheme::Heterodyne => (theta, vartheta, 1.0),
            _ => (0.0, 0.0, 1.0),
        };
        let dt = 2e-3;
        let s = MeasurementSettings::ideal(dt, theta, vartheta).with_efficiency(eta, eta);
        let stepper = Stepper::new(scheme, s, 1.0, dt);
        let mut rng = trajectory_rng(seed, 10);
        let mut rho = *state_from_seed(seed, rank).rho();
        for _ in 0..200 {
            rho = stepper.step(&rho, &mut rng).unwrap().0;
        }
        prop_assert!(max_abs(&(rho - rho.adjoint())) < 1e-12);
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-12);
        prop_assert!(min_eigenvalue(&rho) > -1e-9);
        let c = factored_concurrence(&rho).concurrence;
        prop_assert!((0.0..=1.0).contains(&c));
        let p = purity(&TwoQubitState::new_unchecked(rho));
        prop_assert!(p > 0.25 - 1e-12 && p < 1.0 + 1e-12);
    }
}
