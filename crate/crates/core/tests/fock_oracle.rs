//! Independent construction of every measurement operator from an explicit Fock-space
//! model: each excited qubit emits one photon into its own mode with amplitude √ε, the
//! two modes meet on a balanced beam splitter (ports 3 and 4), each port optionally
//! leaks into a lost mode, and the detected ports are projected onto Fock, quadrature
//! or coherent states.

mod common;

use std::collections::HashMap;
use std::f64::consts::PI;

use qtraj::kraus::*;
use qtraj::state::max_abs;
use qtraj::trajectory::{pd_weights, trajectory_rng};
use qtraj::{CMat4, MeasurementSettings, C64};
use rand::Rng;

/// Mode order: detected port 3, detected port 4, lost port 3, lost port 4.
type Counts = [usize; 4];

/// Output field (as a Fock-state amplitude table) for every `(input, output)` qubit pair.
struct Emission {
    amps: Vec<Vec<HashMap<Counts, C64>>>,
}

fn fact(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn emission(eps: f64, eta3: f64, eta4: f64) -> Emission {
    let s2 = 2f64.sqrt();
    // creation operator of qubit A's / B's photon as a linear form over the four modes
    let form = |sign: f64| -> [f64; 4] {
        [
            eta3.sqrt() / s2,
            sign * eta4.sqrt() / s2,
            (1.0 - eta3).sqrt() / s2,
            sign * (1.0 - eta4).sqrt() / s2,
        ]
    };
    let photon = [form(1.0), form(-1.0)];
    let mut amps = vec![vec![HashMap::new(); 4]; 4];
    // basis index = 2*(1 - eA) + (1 - eB) for {ee, eg, ge, gg}
    for input in 0..4 {
        let excited = [input < 2, input % 2 == 0];
        for emit in 0..4usize {
            let emits = [emit & 1 == 1, emit & 2 == 2];
            if (emits[0] && !excited[0]) || (emits[1] && !excited[1]) {
                continue;
            }
            let mut amp = 1.0;
            for q in 0..2 {
                if excited[q] {
                    amp *= if emits[q] {
                        eps.sqrt()
                    } else {
                        (1.0 - eps).sqrt()
                    };
                }
            }
            let final_excited = [excited[0] && !emits[0], excited[1] && !emits[1]];
            let output = 2 * usize::from(!final_excited[0]) + usize::from(!final_excited[1]);
            // expand the product of creation operators into monomials
            let mut poly: HashMap<Counts, f64> = HashMap::from([([0; 4], amp)]);
            for q in 0..2 {
                if !emits[q] {
                    continue;
                }
                let mut next = HashMap::new();
                for (n, c) in &poly {
                    for mode in 0..4 {
                        let mut m = *n;
                        m[mode] += 1;
                        *next.entry(m).or_insert(0.0) += c * photon[q][mode];
                    }
                }
                poly = next;
            }
            let table = &mut amps[input][output];
            for (n, c) in poly {
                let norm = n.iter().map(|&k| fact(k)).product::<f64>().sqrt();
                *table.entry(n).or_insert(C64::new(0.0, 0.0)) += C64::new(c * norm, 0.0);
            }
        }
    }
    Emission { amps }
}

/// `⟨outcome|n⟩` on one detected port.
type Functional = Box<dyn Fn(usize) -> C64>;

fn fock(k: usize) -> Functional {
    Box::new(move |n| C64::new(if n == k { 1.0 } else { 0.0 }, 0.0))
}

fn quadrature(x: f64, phase: f64) -> Functional {
    Box::new(move |n| {
        let g = PI.powf(-0.25) * (-x * x / 2.0).exp();
        let psi = match n {
            0 => g,
            1 => 2f64.sqrt() * x * g,
            2 => (2.0 * x * x - 1.0) / 2f64.sqrt() * g,
            _ => unreachable!(),
        };
        C64::from_polar(psi, n as f64 * phase)
    })
}

fn coherent(alpha: C64, phase: f64) -> Functional {
    Box::new(move |n| {
        let z = alpha.conj() * C64::from_polar(1.0, phase);
        z.powi(n as i32) * ((-alpha.norm_sqr() / 2.0).exp() / fact(n).sqrt())
    })
}

fn operator(em: &Emission, f3: &Functional, f4: &Functional, lost: [usize; 2]) -> CMat4 {
    let mut m = CMat4::zeros();
    for input in 0..4 {
        for output in 0..4 {
            for (n, c) in &em.amps[input][output] {
                if n[2] == lost[0] && n[3] == lost[1] {
                    m[(output, input)] += c * f3(n[0]) * f4(n[1]);
                }
            }
        }
    }
    m
}

const LOST: [[usize; 2]; 5] = [[0, 0], [1, 0], [0, 1], [2, 0], [0, 2]];

fn assert_close(a: &CMat4, b: &CMat4, what: &str) {
    let d = max_abs(&(a - b));
    assert!(d < 1e-14, "{what}: difference {d:e}\n{a}\n{b}");
}

#[test]
fn photodetection_operators_match_fock_model() {
    for eps in [1e-3, 2e-3, 0.05] {
        let em = emission(eps, 1.0, 1.0);
        let ops = photodetection_matrices(eps);
        for (k, (n3, n4)) in [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2)]
            .into_iter()
            .enumerate()
        {
            let m = operator(&em, &fock(n3), &fock(n4), [0, 0]);
            assert_close(&m, &ops[k], PD_LABELS[k]);
        }
        // the coincidence outcome cancels at the beam splitter
        let m11 = operator(&em, &fock(1), &fock(1), [0, 0]);
        assert!(max_abs(&m11) < 1e-15);
    }
}

#[test]
fn photodetection_maps_do_not_depend_on_port_phases() {
    let mut rng = trajectory_rng(31, 0);
    let eps = 2e-3;
    let em = emission(eps, 1.0, 1.0);
    for _ in 0..20 {
        let (th, vt): (f64, f64) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
        let rho = *common::random_density(&mut rng, 3).rho();
        for (k, (n3, n4)) in [(0usize, 0usize), (1, 0), (0, 1), (2, 0), (0, 2)]
            .into_iter()
            .enumerate()
        {
            // a phase shift on each port multiplies the Fock projector by e^{inφ}
            let f3: Functional =
                Box::new(move |n| fock(n3)(n) * C64::from_polar(1.0, n as f64 * th));
            let f4: Functional =
                Box::new(move |n| fock(n4)(n) * C64::from_polar(1.0, n as f64 * vt));
            let m = operator(&em, &f3, &f4, [0, 0]);
            let ours = photodetection_matrices(eps)[k];
            assert_close(
                &(m * rho * m.adjoint()),
                &(ours * rho * ours.adjoint()),
                PD_LABELS[k],
            );
        }
        let st = common::random_density(&mut rng, 4);
        let w0 = pd_weights(&st, &MeasurementSettings::ideal(eps, 0.0, 0.0)).unwrap();
        let w1 = pd_weights(&st, &MeasurementSettings::ideal(eps, th, vt)).unwrap();
        for (a, b) in w0.iter().zip(&w1) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn homodyne_operator_matches_fock_model() {
    let mut rng = trajectory_rng(32, 0);
    for _ in 0..50 {
        let eps = rng.random_range(1e-4..0.05);
        let (th, vt) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
        let (x3, x4) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let s = MeasurementSettings::ideal(eps, th, vt);
        let em = emission(eps, 1.0, 1.0);
        let m = operator(&em, &quadrature(x3, th), &quadrature(x4, vt), [0, 0]);
        assert_close(&m, &homodyne_op(&s, x3, x4), "homodyne");
    }
}

#[test]
fn heterodyne_operator_matches_fock_model() {
    let mut rng = trajectory_rng(33, 0);
    for _ in 0..50 {
        let eps = rng.random_range(1e-4..0.05);
        let (th, vt) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
        let alpha = C64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let beta = C64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let s = MeasurementSettings::ideal(eps, th, vt);
        let em = emission(eps, 1.0, 1.0);
        let m = operator(&em, &coherent(alpha, th), &coherent(beta, vt), [0, 0]);
        assert_close(&m, &heterodyne_op(&s, alpha, beta), "heterodyne");
    }
}

#[test]
fn mixed_operators_match_fock_model() {
    let mut rng = trajectory_rng(34, 0);
    for _ in 0..50 {
        let eps = rng.random_range(1e-4..0.05);
        let alpha = C64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let s = MeasurementSettings::ideal(eps, 0.0, 0.0);
        let em = emission(eps, 1.0, 1.0);
        let ours = mixed_het_pd_matrices(&s, alpha);
        for (j, op) in ours.iter().enumerate() {
            let m = operator(&em, &coherent(alpha, 0.0), &fock(j), [0, 0]);
            assert_close(&m, op, &format!("j={j}"));
        }
    }
}

#[test]
fn inefficient_photodetection_matches_fock_model() {
    for (e3, e4) in [(0.9, 0.9), (0.35, 0.75), (0.0, 1.0), (0.5, 0.0)] {
        let eps = 0.01;
        let s = MeasurementSettings::ideal(eps, 0.0, 0.0).with_efficiency(e3, e4);
        let set = inefficient_photodetection_ops(&s);
        let em = emission(eps, e3, e4);
        let mut covered = 0;
        for (n3, n4) in [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1)] {
            for lost in LOST.iter().chain(&[[1, 1]]) {
                let m = operator(&em, &fock(n3), &fock(n4), *lost);
                let label = format!("n3={n3},n4={n4};l3={},l4={}", lost[0], lost[1]);
                match set.operator(&label) {
                    Some(op) => {
                        assert_close(&m, op, &label);
                        covered += 1;
                    }
                    None => assert!(max_abs(&m) < 1e-15, "{label} missing but nonzero"),
                }
            }
        }
        assert_eq!(covered, set.operators.len());
    }
}

#[test]
fn inefficient_homodyne_matches_fock_model() {
    let mut rng = trajectory_rng(35, 0);
    for _ in 0..30 {
        let eps = rng.random_range(1e-4..0.05);
        let (th, vt) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
        let (e3, e4) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (x3, x4) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let s = MeasurementSettings::ideal(eps, th, vt).with_efficiency(e3, e4);
        let em = emission(eps, e3, e4);
        let ours = inefficient_homodyne_matrices(&s, x3, x4);
        // lost-mode outcomes are only defined up to a phase; compare the summed map
        let rho = *common::random_density(&mut rng, 4).rho();
        let mut a = CMat4::zeros();
        let mut b = CMat4::zeros();
        for (k, lost) in LOST.iter().enumerate() {
            let m = operator(&em, &quadrature(x3, th), &quadrature(x4, vt), *lost);
            a += m * rho * m.adjoint();
            b += ours[k] * rho * ours[k].adjoint();
        }
        let m = operator(&em, &quadrature(x3, th), &quadrature(x4, vt), [1, 1]);
        assert!(max_abs(&m) < 1e-15);
        assert_close(&a, &b, "inefficient homodyne map");
    }
}

#[test]
fn fock_model_is_complete_for_single_emitters() {
    // Σ over all detected and lost Fock outcomes of M†M = I
    let em = emission(0.03, 0.6, 0.8);
    let mut acc = CMat4::zeros();
    for d3 in 0..3 {
        for d4 in 0..3 {
            for lost in LOST.iter().chain(&[[1, 1]]) {
                let m = operator(&em, &fock(d3), &fock(d4), *lost);
                acc += m.adjoint() * m;
            }
        }
    }
    assert_close(&acc, &CMat4::identity(), "completeness");
}
