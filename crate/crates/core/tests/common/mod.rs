#![allow(dead_code)]

use nalgebra::Matrix2;
use qtraj::state::hermitize_normalize;
use qtraj::{CMat4, PureState, TwoQubitState, C64};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn cgauss(rng: &mut impl Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn random_pure(rng: &mut impl Rng) -> PureState {
    PureState::from_vector(qtraj::state::CVec4::from_fn(|_, _| cgauss(rng))).unwrap()
}

/// Random density matrix of the given rank (1..=4).
pub fn random_density(rng: &mut impl Rng, rank: usize) -> TwoQubitState {
    let mut rho = CMat4::zeros();
    for _ in 0..rank {
        let v = qtraj::state::CVec4::from_fn(|_, _| cgauss(rng));
        rho += v * v.adjoint();
    }
    hermitize_normalize(&mut rho);
    TwoQubitState::new(rho).unwrap()
}

/// Haar-random element of SU(2).
pub fn random_su2(rng: &mut impl Rng) -> Matrix2<C64> {
    let (a, b) = (cgauss(rng), cgauss(rng));
    let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let (a, b) = (a / n, b / n);
    Matrix2::new(a, -b.conj(), b, a.conj())
}
