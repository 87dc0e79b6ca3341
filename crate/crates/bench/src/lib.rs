//! Fixtures shared by the benchmarks.

use qtraj::state::density_from_pure;
use qtraj::trajectory::{trajectory_rng, Stepper};
use qtraj::{CMat4, MeasurementSettings, PureState, Scheme};

pub const GAMMA: f64 = 1.0;
pub const DT: f64 = 0.002;

pub fn settings(eta: f64) -> MeasurementSettings {
    MeasurementSettings::ideal(GAMMA * DT, 0.0, std::f64::consts::FRAC_PI_2)
        .with_efficiency(eta, eta)
}

/// State reached from |ee> after `steps` steps of `scheme`.
pub fn evolved(scheme: Scheme, eta: f64, steps: usize) -> CMat4 {
    let stepper = Stepper::new(scheme, settings(eta), GAMMA, DT);
    let mut rng = trajectory_rng(1, 0);
    let mut rho = *density_from_pure(&PureState::ee()).rho();
    for _ in 0..steps {
        rho = stepper.step(&rho, &mut rng).expect("step").0;
    }
    rho
}
