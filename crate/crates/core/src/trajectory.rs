//! Stochastic time stepping for every detection scheme, single trajectories and ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::entanglement::{factored_concurrence, Factored};
use crate::error::NumericalError;
use crate::kraus::{
    heterodyne_op, homodyne_op, inefficient_homodyne_matrices, inefficient_photodetection_ops,
    mixed_het_pd_matrices, photodetection_matrices, KrausSet, MeasurementSettings, PD_LABELS,
};
use crate::state::{
    bell_from_computational, bloch_from_density, density_from_pure, hermitize_normalize,
    min_eigenvalue, BellAmplitudes, BlochVector15, CMat4, PureState, TwoQubitState, C64, PSD_TOL,
};

/// Clipped weight mass above this aborts the step.
const CLIP_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Photodetection,
    Homodyne,
    Heterodyne,
    MixedHetPd,
    MixedHetDiscard,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Photodetection => "photodetection",
            Scheme::Homodyne => "homodyne",
            Scheme::Heterodyne => "heterodyne",
            Scheme::MixedHetPd => "mixed_het_pd",
            Scheme::MixedHetDiscard => "mixed_het_discard",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        [
            Scheme::Photodetection,
            Scheme::Homodyne,
            Scheme::Heterodyne,
            Scheme::MixedHetPd,
            Scheme::MixedHetDiscard,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialState {
    Pure(PureState),
    Mixed(TwoQubitState),
}

impl InitialState {
    pub fn density(&self) -> TwoQubitState {
        match self {
            InitialState::Pure(p) => density_from_pure(p),
            InitialState::Mixed(m) => *m,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryConfig {
    /// Decay rate in 1/µs.
    pub gamma: f64,
    /// Time step in µs.
    pub dt: f64,
    /// Total time in µs.
    pub t_total: f64,
    pub scheme: Scheme,
    pub theta: f64,
    pub vartheta: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub initial: InitialState,
    pub seed: u64,
    pub snapshot_stride: usize,
}

impl TrajectoryConfig {
    /// Defaults: γ = 1/µs, dt = 2 ns, T = 5 µs, θ = 0, ϑ = 90°, ideal detectors.
    pub fn new(scheme: Scheme, initial: PureState) -> Self {
        TrajectoryConfig {
            gamma: 1.0,
            dt: 0.002,
            t_total: 5.0,
            scheme,
            theta: 0.0,
            vartheta: std::f64::consts::FRAC_PI_2,
            eta3: 1.0,
            eta4: 1.0,
            initial: InitialState::Pure(initial),
            seed: 0,
            snapshot_stride: 10,
        }
    }

    pub fn with_phases(mut self, theta: f64, vartheta: f64) -> Self {
        self.theta = theta;
        self.vartheta = vartheta;
        self
    }

    pub fn with_efficiency(mut self, eta: f64) -> Self {
        self.eta3 = eta;
        self.eta4 = eta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_time(mut self, dt: f64, t_total: f64) -> Self {
        self.dt = dt;
        self.t_total = t_total;
        self
    }

    pub fn settings(&self) -> MeasurementSettings {
        MeasurementSettings {
            epsilon: self.gamma * self.dt,
            theta: self.theta,
            vartheta: self.vartheta,
            eta3: self.eta3,
            eta4: self.eta4,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_total / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), NumericalError> {
        let bad = |m: String| Err(NumericalError::Config(m));
        if !(self.gamma > 0.0 && self.dt > 0.0 && self.t_total > 0.0) {
            return bad("gamma, dt and t_total must be positive".into());
        }
        if self.gamma * self.dt > 0.01 {
            return bad(format!("gamma*dt = {} exceeds 0.01", self.gamma * self.dt));
        }
        let n = self.t_total / self.dt;
        if (n - n.round()).abs() > 1e-6 {
            return bad(format!("t_total/dt = {n} is not an integer"));
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride must be >= 1".into());
        }
        self.settings().validate()?;
        match self.scheme {
            Scheme::Heterodyne if !self.settings().is_ideal() => {
                bad("heterodyne supports ideal efficiencies only".into())
            }
            Scheme::MixedHetPd | Scheme::MixedHetDiscard => {
                if self.theta != 0.0 || self.vartheta != 0.0 {
                    bad("mixed schemes require theta = vartheta = 0".into())
                } else if !self.settings().is_ideal() {
                    bad("mixed schemes support ideal efficiencies only".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Outcome of one time step; only the fields of the active scheme exist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Photodetection {
        clicks3: u8,
        clicks4: u8,
    },
    Homodyne {
        r3: f64,
        r4: f64,
    },
    Heterodyne {
        r_i: f64,
        r_q: f64,
        r_x: f64,
        r_y: f64,
    },
    Mixed {
        j: u8,
        r_i: f64,
        r_q: f64,
    },
    MixedDiscard {
        r_i: f64,
        r_q: f64,
    },
}

impl StepOutcome {
    pub fn clicks(&self) -> u8 {
        match *self {
            StepOutcome::Photodetection { clicks3, clicks4 } => clicks3 + clicks4,
            StepOutcome::Mixed { j, .. } => j,
            _ => 0,
        }
    }

    /// Photodetection outcome label such as `"n3=1,n4=0"`.
    pub fn label(&self) -> String {
        match *self {
            StepOutcome::Photodetection { clicks3, clicks4 } => {
                format!("n3={clicks3},n4={clicks4}")
            }
            StepOutcome::Homodyne { .. } => "homodyne".into(),
            StepOutcome::Heterodyne { .. } => "heterodyne".into(),
            StepOutcome::Mixed { j, .. } => format!("j={j}"),
            StepOutcome::MixedDiscard { .. } => "discard".into(),
        }
    }
}

/// Per-step bookkeeping beyond the outcome itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub outcome: StepOutcome,
    /// Probability that any detector clicked in this step (click schemes), else 0.
    pub click_probability: f64,
    /// Readout means before sampling; unused slots are 0.
    pub means: [f64; 4],
    /// Weight mass removed by clipping.
    pub clipped: f64,
}

fn clicks_of(index: usize) -> (u8, u8) {
    [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2)][index]
}

/// `Ξ = 1 + q1/√2 + q2/√6 + 2q3/√3` and `Θ = 1/4 + q1/√2 + q2/√6 + q3/(2√3)`.
pub fn xi_theta(q: &BlochVector15) -> (f64, f64) {
    let (q1, q2, q3) = (q.get(1), q.get(2), q.get(3));
    let s2 = 2f64.sqrt();
    let s3 = 3f64.sqrt();
    let s6 = 6f64.sqrt();
    (
        1.0 + q1 / s2 + q2 / s6 + 2.0 * q3 / s3,
        0.25 + q1 / s2 + q2 / s6 + q3 / (2.0 * s3),
    )
}

/// Clips negative weights to zero and renormalizes. Returns the clipped mass.
fn clip_weights(w: &mut [f64]) -> Result<f64, NumericalError> {
    let mut clipped = 0.0;
    for x in w.iter_mut() {
        if *x < 0.0 {
            clipped -= *x;
            *x = 0.0;
        }
    }
    if clipped > CLIP_TOL {
        return Err(NumericalError::DtTooLarge(clipped));
    }
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    if clipped > 0.0 {
        log::debug!("clipped weight mass {clipped:e}");
    }
    Ok(clipped)
}

fn pd_weights_raw(q: &BlochVector15, s: &MeasurementSettings) -> [f64; 5] {
    let eps = s.epsilon;
    let (xi, th) = xi_theta(q);
    let q4 = q.get(4) / 2f64.sqrt();
    let (e3, e4) = (s.eta3, s.eta4);
    [
        1.0 - 0.5 * eps * (e3 + e4) * xi
            + eps * (e4 - e3) * q4
            + 0.5 * eps * eps * (e3 * e3 + e4 * e4) * th,
        eps * e3 * (0.5 * xi + q4) - eps * eps * e3 * e3 * th,
        eps * e4 * (0.5 * xi - q4) - eps * eps * e4 * e4 * th,
        0.5 * eps * eps * e3 * e3 * th,
        0.5 * eps * eps * e4 * e4 * th,
    ]
}

/// Photodetection weights `(w00, w10, w01, w20, w02)` from `Ξ`, `Θ` and `q4`.
///
/// With `η3 = η4 = 1` these are the ideal weights; otherwise the signal-outcome
/// weights of the inefficient model.
pub fn pd_weights(
    state: &TwoQubitState,
    s: &MeasurementSettings,
) -> Result<[f64; 5], NumericalError> {
    let mut w = pd_weights_raw(&bloch_from_density(state), s);
    clip_weights(&mut w)?;
    Ok(w)
}

/// `χ3(θ)` and `χ4(ϑ)` from the Bloch coordinates.
pub fn chi34(q: &BlochVector15, theta: f64, vartheta: f64) -> (f64, f64) {
    let g = |i| q.get(i);
    let chi3 =
        (g(11) + g(12) + g(14) + g(15)) * theta.sin() + (g(5) + g(6) + g(8) + g(9)) * theta.cos();
    let chi4 = -(g(5) - g(6) - g(8) + g(9)) * vartheta.cos()
        - (g(11) - g(12) - g(14) + g(15)) * vartheta.sin();
    (chi3, chi4)
}

/// Homodyne readout means `(√(γη3) χ3, √(γη4) χ4)`.
pub fn homodyne_means(state: &TwoQubitState, s: &MeasurementSettings, gamma: f64) -> (f64, f64) {
    let (c3, c4) = chi34(&bloch_from_density(state), s.theta, s.vartheta);
    ((gamma * s.eta3).sqrt() * c3, (gamma * s.eta4).sqrt() * c4)
}

/// `tr(ρ(σ_A + σ_B))` and `tr(ρ(σ_A - σ_B))` with σ the lowering operators.
#[inline]
fn lowering_expectations(rho: &CMat4) -> (C64, C64) {
    let a = rho[(0, 2)] + rho[(1, 3)];
    let b = rho[(0, 1)] + rho[(2, 3)];
    (a + b, a - b)
}

/// Heterodyne readout means `(r_I, r_Q, r_X, r_Y)`.
pub fn heterodyne_means(state: &TwoQubitState, s: &MeasurementSettings, gamma: f64) -> [f64; 4] {
    het_means(state.rho(), s, gamma)
}

fn het_means(rho: &CMat4, s: &MeasurementSettings, gamma: f64) -> [f64; 4] {
    let (sp, sm) = lowering_expectations(rho);
    let g = gamma.sqrt();
    let p = sp * C64::from_polar(1.0, s.theta) * g;
    let m = sm * C64::from_polar(1.0, s.vartheta) * g;
    [p.re, p.im, m.re, m.im]
}

fn hom_means(rho: &CMat4, s: &MeasurementSettings, gamma: f64) -> [f64; 2] {
    let (sp, sm) = lowering_expectations(rho);
    let k = (2.0 * gamma).sqrt();
    [
        k * s.eta3.sqrt() * (sp * C64::from_polar(1.0, s.theta)).re,
        k * s.eta4.sqrt() * (sm * C64::from_polar(1.0, s.vartheta)).re,
    ]
}

/// `ς` and `κ` of the mixed heterodyne/photodetection weights.
pub fn varsigma_kappa(q: &BlochVector15) -> (f64, f64) {
    let (s2, s3, s6) = (2f64.sqrt(), 3f64.sqrt(), 6f64.sqrt());
    let g = |i| q.get(i);
    (
        3.0 * s2 + 3.0 * g(1) + s3 * g(2) + 2.0 * s6 * g(3) - 6.0 * g(4),
        3.0 / s2 + 6.0 * g(1) + 2.0 * s3 * g(2) + s6 * g(3),
    )
}

/// Unnormalized one- and two-click weights of the mixed scheme in the closed forms
/// built from `ς` and `κ`.
pub fn mixed_click_weights_closed_form(q: &BlochVector15, gamma: f64, dt: f64) -> (f64, f64) {
    let (vs, ka) = varsigma_kappa(q);
    let (s2, s3, s6) = (2f64.sqrt(), 3f64.sqrt(), 6f64.sqrt());
    let w1 = if vs.abs() < 1e-300 {
        0.0
    } else {
        gamma * dt * vs / (6.0 * s2) * (-gamma * ka * dt / (vs * s2)).exp()
    };
    let w2 = dt * dt * gamma * gamma / 24.0
        * (3.0 + 6.0 * s2 * q.get(1) + 2.0 * s6 * q.get(2) + 2.0 * s3 * q.get(3));
    (w1, w2)
}

/// Exact probabilities of `j = 0, 1, 2` clicks at port 4 in the mixed scheme.
pub fn mixed_weights(
    state: &TwoQubitState,
    s: &MeasurementSettings,
) -> Result<[f64; 3], NumericalError> {
    mixed_weights_rho(state.rho(), s)
}

fn mixed_weights_rho(rho: &CMat4, s: &MeasurementSettings) -> Result<[f64; 3], NumericalError> {
    let w = pd_weights_raw(&bloch_from_density(&TwoQubitState::new_unchecked(*rho)), s);
    let mut m = [w[0] + w[1] + w[3], w[2], w[4]];
    clip_weights(&mut m)?;
    Ok(m)
}

/// `Σ M ρ M†` over the nonzero entries of each `M`; only the lower triangle is
/// accumulated and the upper one is filled by Hermitian symmetry.
fn sandwich_sum(rho: &CMat4, ops: &[CMat4]) -> CMat4 {
    let mut acc = CMat4::zeros();
    let mut nz = [(0usize, 0usize, C64::new(0.0, 0.0)); 16];
    for m in ops {
        let mut n = 0;
        for j in 0..4 {
            for i in 0..4 {
                let v = m[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    nz[n] = (i, j, v);
                    n += 1;
                }
            }
        }
        for &(i, j, a) in &nz[..n] {
            for &(k, l, b) in &nz[..n] {
                if k <= i {
                    acc[(i, k)] += a * rho[(j, l)] * b.conj();
                }
            }
        }
    }
    for i in 0..4 {
        for k in 0..i {
            acc[(k, i)] = acc[(i, k)].conj();
        }
        acc[(i, i)].im = 0.0;
    }
    acc
}

/// `Σ M ρ M† / tr(·)`, re-Hermitized.
pub fn kraus_update(rho: &CMat4, ops: &[CMat4], label: &str) -> Result<CMat4, NumericalError> {
    let mut out = sandwich_sum(rho, ops);
    let tr: f64 = (0..4).map(|k| out[(k, k)].re).sum();
    if !(tr > 1e-300) || !tr.is_finite() {
        return Err(NumericalError::ImpossibleOutcome {
            outcome: label.to_string(),
            trace: tr,
        });
    }
    hermitize_normalize(&mut out);
    Ok(out)
}

/// Checks positivity after an update and returns the factored concurrence.
fn certify(rho: &CMat4) -> Result<Factored, NumericalError> {
    let f = factored_concurrence(rho);
    if f.residual > PSD_TOL {
        let min = min_eigenvalue(rho);
        if min < -PSD_TOL {
            return Err(NumericalError::NegativeEigenvalue {
                min_eigenvalue: min,
            });
        }
    }
    Ok(f)
}

fn sample_index<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // round-off: fall back to the last nonzero weight
    w.iter().rposition(|x| *x > 0.0).unwrap_or(0)
}

#[inline]
fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Forced photodetection outcome (index in [`PD_LABELS`] order).
pub fn apply_pd_outcome(
    rho: &CMat4,
    s: &MeasurementSettings,
    outcome: usize,
) -> Result<CMat4, NumericalError> {
    if s.is_ideal() {
        let ops = photodetection_matrices(s.epsilon);
        kraus_update(rho, &ops[outcome..=outcome], PD_LABELS[outcome])
    } else {
        let set = inefficient_photodetection_ops(s);
        group_update(rho, &set, outcome)
    }
}

fn group_update(rho: &CMat4, set: &KrausSet, group: usize) -> Result<CMat4, NumericalError> {
    let g = &set.groups[group];
    let ops: Vec<CMat4> = g.members.iter().map(|&k| set.operators[k].1).collect();
    kraus_update(rho, &ops, &g.label)
}

/// Homodyne update for readouts `(r3, r4)`, using `X = √(dt/2) r`.
pub fn apply_homodyne_readout(
    rho: &CMat4,
    s: &MeasurementSettings,
    dt: f64,
    r3: f64,
    r4: f64,
) -> Result<CMat4, NumericalError> {
    let k = (dt / 2.0).sqrt();
    let (x3, x4) = (k * r3, k * r4);
    if s.is_ideal() {
        kraus_update(rho, &[homodyne_op(s, x3, x4)], "homodyne")
    } else {
        kraus_update(rho, &inefficient_homodyne_matrices(s, x3, x4), "homodyne")
    }
}

/// Heterodyne update with `α = √(dt/2)(r_I + i r_Q)`, `β = √(dt/2)(r_X + i r_Y)`.
pub fn apply_heterodyne_readout(
    rho: &CMat4,
    s: &MeasurementSettings,
    dt: f64,
    r: [f64; 4],
) -> Result<CMat4, NumericalError> {
    let k = (dt / 2.0).sqrt();
    let alpha = C64::new(k * r[0], k * r[1]);
    let beta = C64::new(k * r[2], k * r[3]);
    kraus_update(rho, &[heterodyne_op(s, alpha, beta)], "heterodyne")
}

/// Mixed scheme update for `j` clicks at port 4 and heterodyne readouts at port 3.
pub fn apply_mixed(
    rho: &CMat4,
    s: &MeasurementSettings,
    dt: f64,
    j: usize,
    r_i: f64,
    r_q: f64,
) -> Result<CMat4, NumericalError> {
    let k = (dt / 2.0).sqrt();
    let ops = mixed_het_pd_matrices(s, C64::new(k * r_i, k * r_q));
    kraus_update(rho, &ops[j..=j], ["j=0", "j=1", "j=2"][j])
}

/// Mixed scheme with port 4 discarded: sums over `j`.
pub fn apply_mixed_discard(
    rho: &CMat4,
    s: &MeasurementSettings,
    dt: f64,
    r_i: f64,
    r_q: f64,
) -> Result<CMat4, NumericalError> {
    let k = (dt / 2.0).sqrt();
    let ops = mixed_het_pd_matrices(s, C64::new(k * r_i, k * r_q));
    kraus_update(rho, &ops, "discard")
}

/// One stochastic step of `scheme`. Returns the new (normalized, Hermitian) matrix.
pub fn step_raw<R: Rng + ?Sized>(
    scheme: Scheme,
    rho: &CMat4,
    s: &MeasurementSettings,
    gamma: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(CMat4, StepInfo), NumericalError> {
    Stepper::new(scheme, *s, gamma, dt).step(rho, rng)
}

/// Step kernel with the outcome-independent operators built once per run.
#[derive(Clone, Debug)]
pub struct Stepper {
    scheme: Scheme,
    s: MeasurementSettings,
    gamma: f64,
    dt: f64,
    /// Photodetection outcome groups in [`PD_LABELS`] order.
    pd_groups: Vec<Vec<CMat4>>,
}

impl Stepper {
    pub fn new(scheme: Scheme, s: MeasurementSettings, gamma: f64, dt: f64) -> Self {
        let pd_groups = match scheme {
            Scheme::Photodetection if s.is_ideal() => photodetection_matrices(s.epsilon)
                .iter()
                .map(|m| vec![*m])
                .collect(),
            Scheme::Photodetection => {
                let set = inefficient_photodetection_ops(&s);
                set.groups
                    .iter()
                    .map(|g| g.members.iter().map(|&k| set.operators[k].1).collect())
                    .collect()
            }
            _ => Vec::new(),
        };
        Stepper {
            scheme,
            s,
            gamma,
            dt,
            pd_groups,
        }
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        rho: &CMat4,
        rng: &mut R,
    ) -> Result<(CMat4, StepInfo), NumericalError> {
        let (scheme, s, gamma, dt) = (self.scheme, &self.s, self.gamma, self.dt);
        let sd = 1.0 / dt.sqrt();
        match scheme {
            Scheme::Photodetection => {
                let mut w =
                    pd_weights_raw(&bloch_from_density(&TwoQubitState::new_unchecked(*rho)), s);
                let clipped = clip_weights(&mut w)?;
                let k = sample_index(&w, rng);
                let (clicks3, clicks4) = clicks_of(k);
                let out = kraus_update(rho, &self.pd_groups[k], PD_LABELS[k])?;
                Ok((
                    out,
                    StepInfo {
                        outcome: StepOutcome::Photodetection { clicks3, clicks4 },
                        click_probability: 1.0 - w[0],
                        means: [0.0; 4],
                        clipped,
                    },
                ))
            }
            Scheme::Homodyne => {
                let m = hom_means(rho, s, gamma);
                let r3 = m[0] + sd * gauss(rng);
                let r4 = m[1] + sd * gauss(rng);
                let out = apply_homodyne_readout(rho, s, dt, r3, r4)?;
                Ok((
                    out,
                    StepInfo {
                        outcome: StepOutcome::Homodyne { r3, r4 },
                        click_probability: 0.0,
                        means: [m[0], m[1], 0.0, 0.0],
                        clipped: 0.0,
                    },
                ))
            }
            Scheme::Heterodyne => {
                let m = het_means(rho, s, gamma);
                let rd: [f64; 4] = std::array::from_fn(|k| m[k] + sd * gauss(rng));
                let out = apply_heterodyne_readout(rho, s, dt, rd)?;
                Ok((
                    out,
                    StepInfo {
                        outcome: StepOutcome::Heterodyne {
                            r_i: rd[0],
                            r_q: rd[1],
                            r_x: rd[2],
                            r_y: rd[3],
                        },
                        click_probability: 0.0,
                        means: m,
                        clipped: 0.0,
                    },
                ))
            }
            Scheme::MixedHetPd => {
                let w = mixed_weights_rho(rho, s)?;
                let j = sample_index(&w, rng);
                let m = het_means(rho, s, gamma);
                let (mi, mq) = if j == 0 { (m[0], m[1]) } else { (0.0, 0.0) };
                let r_i = mi + sd * gauss(rng);
                let r_q = mq + sd * gauss(rng);
                let out = apply_mixed(rho, s, dt, j, r_i, r_q)?;
                Ok((
                    out,
                    StepInfo {
                        outcome: StepOutcome::Mixed {
                            j: j as u8,
                            r_i,
                            r_q,
                        },
                        click_probability: w[1] + w[2],
                        means: [mi, mq, 0.0, 0.0],
                        clipped: 0.0,
                    },
                ))
            }
            Scheme::MixedHetDiscard => {
                let m = het_means(rho, s, gamma);
                let r_i = m[0] + sd * gauss(rng);
                let r_q = m[1] + sd * gauss(rng);
                let out = apply_mixed_discard(rho, s, dt, r_i, r_q)?;
                Ok((
                    out,
                    StepInfo {
                        outcome: StepOutcome::MixedDiscard { r_i, r_q },
                        click_probability: 0.0,
                        means: [m[0], m[1], 0.0, 0.0],
                        clipped: 0.0,
                    },
                ))
            }
        }
    }
}

fn checked_step<R: Rng + ?Sized>(
    scheme: Scheme,
    state: &TwoQubitState,
    s: &MeasurementSettings,
    gamma: f64,
    rng: &mut R,
) -> Result<(TwoQubitState, StepOutcome), NumericalError> {
    let dt = s.epsilon / gamma;
    let (out, info) = step_raw(scheme, state.rho(), s, gamma, dt, rng)?;
    certify(&out)?;
    Ok((TwoQubitState::new_unchecked(out), info.outcome))
}

/// Photodetection step (ideal or inefficient, depending on `s`), with `γ = 1`.
pub fn pd_step<R: Rng + ?Sized>(
    state: &TwoQubitState,
    s: &MeasurementSettings,
    rng: &mut R,
) -> Result<(TwoQubitState, StepOutcome), NumericalError> {
    checked_step(Scheme::Photodetection, state, s, 1.0, rng)
}

/// Inefficient photodetection step with the grouped eleven-operator set.
pub fn inefficient_pd_step<R: Rng + ?Sized>(
    state: &TwoQubitState,
    s: &MeasurementSettings,
    rng: &mut R,
) -> Result<(TwoQubitState, StepOutcome), NumericalError> {
    checked_step(Scheme::Photodetection, state, s, 1.0, rng)
}

/// Homodyne step with `γ = 1`, so `dt = ε`.
pub fn homodyne_step<R: Rng + ?Sized>(
    state: &TwoQubitState,
    s: &MeasurementSettings,
    rng: &mut R,
) -> Result<(TwoQubitState, StepOutcome), NumericalError> {
    checked_step(Scheme::Homodyne, state, s, 1.0, rng)
}

pub fn heterodyne_step<R: Rng + ?Sized>(
    state: &TwoQubitState,
    s: &MeasurementSettings,
    rng: &mut R,
) -> Result<(TwoQubitState, StepOutcome), NumericalError> {
    checked_step(Scheme::Heterodyne, state, s, 1.0, rng)
}

pub fn mixed_step<R: Rng + ?Sized>(
    state: &TwoQubitState,
    s: &MeasurementSettings,
    rng: &mut R,
) -> Result<(TwoQubitState, StepOutcome), NumericalError> {
    checked_step(Scheme::MixedHetPd, state, s, 1.0, rng)
}

pub fn mixed_discard_step<R: Rng + ?Sized>(
    state: &TwoQubitState,
    s: &MeasurementSettings,
    rng: &mut R,
) -> Result<(TwoQubitState, StepOutcome), NumericalError> {
    checked_step(Scheme::MixedHetDiscard, state, s, 1.0, rng)
}

/// RNG stream for trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    /// Times of the `steps + 1` states, in µs.
    pub times: Vec<f64>,
    /// Outcome of each of the `steps` updates.
    pub steps: Vec<StepInfo>,
    pub concurrence: Vec<f64>,
    pub purity: Vec<f64>,
    /// Bell amplitudes when the state is pure within 1e-9.
    pub bell: Vec<Option<BellAmplitudes>>,
    /// `(step index, state)` every `snapshot_stride` steps, including step 0.
    pub snapshots: Vec<(usize, TwoQubitState)>,
    pub clip_events: usize,
}

fn purity_of(rho: &CMat4) -> f64 {
    rho.iter().map(|z| z.norm_sqr()).sum()
}

fn bell_if_pure(rho: &CMat4) -> Option<BellAmplitudes> {
    TwoQubitState::new_unchecked(*rho)
        .pure_state(1e-9)
        .map(|p| bell_from_computational(&p))
}

/// Runs one trajectory with stream 0 of `cfg.seed`.
pub fn run_trajectory(cfg: &TrajectoryConfig) -> Result<TrajectoryRecord, NumericalError> {
    run_trajectory_indexed(cfg, 0)
}

pub fn run_trajectory_indexed(
    cfg: &TrajectoryConfig,
    index: u64,
) -> Result<TrajectoryRecord, NumericalError> {
    cfg.validate()?;
    let n = cfg.steps();
    let stepper = Stepper::new(cfg.scheme, cfg.settings(), cfg.gamma, cfg.dt);
    let mut rng = trajectory_rng(cfg.seed, index);
    let mut rho = *cfg.initial.density().rho();
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(n + 1),
        steps: Vec::with_capacity(n),
        concurrence: Vec::with_capacity(n + 1),
        purity: Vec::with_capacity(n + 1),
        bell: Vec::with_capacity(n + 1),
        snapshots: Vec::new(),
        clip_events: 0,
    };
    let f = certify(&rho)?;
    rec.times.push(0.0);
    rec.concurrence.push(f.concurrence);
    rec.purity.push(purity_of(&rho));
    rec.bell.push(bell_if_pure(&rho));
    rec.snapshots.push((0, TwoQubitState::new_unchecked(rho)));
    for k in 1..=n {
        let wrap = |e| NumericalError::AtStep {
            step: k,
            source: Box::new(e),
        };
        let (out, info) = stepper.step(&rho, &mut rng).map_err(wrap)?;
        let f = certify(&out).map_err(wrap)?;
        rho = out;
        if info.clipped > 0.0 {
            rec.clip_events += 1;
        }
        rec.steps.push(info);
        rec.times.push(k as f64 * cfg.dt);
        rec.concurrence.push(f.concurrence);
        rec.purity.push(purity_of(&rho));
        rec.bell.push(bell_if_pure(&rho));
        if k % cfg.snapshot_stride == 0 {
            rec.snapshots.push((k, TwoQubitState::new_unchecked(rho)));
        }
    }
    Ok(rec)
}

/// State captured at the first step reaching the concurrence threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capture {
    pub trajectory: usize,
    pub step: usize,
    pub time: f64,
    pub concurrence: f64,
    pub state: TwoQubitState,
}

impl Capture {
    pub fn bell(&self) -> Option<BellAmplitudes> {
        bell_if_pure(self.state.rho())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSummary {
    /// Snapshot grid (every `snapshot_stride` steps), µs.
    pub times: Vec<f64>,
    pub mean_concurrence: Vec<f64>,
    pub std_concurrence: Vec<f64>,
    pub mean_purity: Vec<f64>,
    pub mean_excited_a: Vec<f64>,
    pub mean_excited_b: Vec<f64>,
    /// Largest concurrence over the ensemble at every step (length steps + 1).
    pub max_concurrence: Vec<f64>,
    /// Smallest purity over the ensemble at every step.
    pub min_purity: Vec<f64>,
    /// Largest click probability over the ensemble at every update (length steps).
    pub max_click_probability: Vec<f64>,
    /// Largest |readout mean| over the ensemble at every update.
    pub max_abs_mean: Vec<f64>,
    pub captures: Vec<Capture>,
    pub trajectories: usize,
    pub total_clicks: u64,
    pub clip_events: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleOptions {
    pub trajectories: usize,
    /// Record the first state with `C >= threshold` per trajectory.
    pub capture_threshold: Option<f64>,
}

impl EnsembleOptions {
    pub fn new(trajectories: usize) -> Self {
        EnsembleOptions {
            trajectories,
            capture_threshold: None,
        }
    }
}

/// Trajectories per work unit; fixed so results do not depend on the thread count.
const BLOCK: usize = 32;

struct Partial {
    sum_c: Vec<f64>,
    sum_c2: Vec<f64>,
    sum_p: Vec<f64>,
    sum_ea: Vec<f64>,
    sum_eb: Vec<f64>,
    max_c: Vec<f64>,
    min_p: Vec<f64>,
    max_click: Vec<f64>,
    max_mean: Vec<f64>,
    captures: Vec<Capture>,
    clicks: u64,
    clips: usize,
}

impl Partial {
    fn new(grid: usize, steps: usize) -> Self {
        Partial {
            sum_c: vec![0.0; grid],
            sum_c2: vec![0.0; grid],
            sum_p: vec![0.0; grid],
            sum_ea: vec![0.0; grid],
            sum_eb: vec![0.0; grid],
            max_c: vec![0.0; steps + 1],
            min_p: vec![f64::INFINITY; steps + 1],
            max_click: vec![0.0; steps],
            max_mean: vec![0.0; steps],
            captures: Vec::new(),
            clicks: 0,
            clips: 0,
        }
    }

    fn merge(&mut self, o: Partial) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.sum_c, &o.sum_c);
        add(&mut self.sum_c2, &o.sum_c2);
        add(&mut self.sum_p, &o.sum_p);
        add(&mut self.sum_ea, &o.sum_ea);
        add(&mut self.sum_eb, &o.sum_eb);
        let max =
            |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x = x.max(*y));
        max(&mut self.max_c, &o.max_c);
        max(&mut self.max_click, &o.max_click);
        max(&mut self.max_mean, &o.max_mean);
        self.min_p
            .iter_mut()
            .zip(&o.min_p)
            .for_each(|(x, y)| *x = x.min(*y));
        self.captures.extend(o.captures);
        self.clicks += o.clicks;
        self.clips += o.clips;
    }
}

fn accumulate(
    cfg: &TrajectoryConfig,
    index: usize,
    threshold: Option<f64>,
    part: &mut Partial,
) -> Result<(), NumericalError> {
    let n = cfg.steps();
    let stepper = Stepper::new(cfg.scheme, cfg.settings(), cfg.gamma, cfg.dt);
    let stride = cfg.snapshot_stride;
    let mut rng = trajectory_rng(cfg.seed, index as u64);
    let mut rho = *cfg.initial.density().rho();
    let mut captured = false;
    let mut f = certify(&rho)?;
    for k in 0..=n {
        if k > 0 {
            let wrap = |e| NumericalError::AtStep {
                step: k,
                source: Box::new(e),
            };
            let (out, info) = stepper.step(&rho, &mut rng).map_err(wrap)?;
            f = certify(&out).map_err(wrap)?;
            rho = out;
            part.clicks += info.outcome.clicks() as u64;
            if info.clipped > 0.0 {
                part.clips += 1;
            }
            let mm = info.means.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            part.max_click[k - 1] = part.max_click[k - 1].max(info.click_probability);
            part.max_mean[k - 1] = part.max_mean[k - 1].max(mm);
        }
        let cc = f.concurrence;
        let p = purity_of(&rho);
        part.max_c[k] = part.max_c[k].max(cc);
        part.min_p[k] = part.min_p[k].min(p);
        if k % stride == 0 {
            let g = k / stride;
            part.sum_c[g] += cc;
            part.sum_c2[g] += cc * cc;
            part.sum_p[g] += p;
            let st = TwoQubitState::new_unchecked(rho);
            part.sum_ea[g] += st.excited_a();
            part.sum_eb[g] += st.excited_b();
        }
        if let Some(th) = threshold {
            if !captured && cc >= th {
                captured = true;
                part.captures.push(Capture {
                    trajectory: index,
                    step: k,
                    time: k as f64 * cfg.dt,
                    concurrence: cc,
                    state: TwoQubitState::new_unchecked(rho),
                });
            }
        }
    }
    Ok(())
}

/// Runs `opts.trajectories` independent trajectories; trajectory `i` uses stream `i`.
/// Output is identical for any rayon thread count.
pub fn run_ensemble(
    cfg: &TrajectoryConfig,
    opts: &EnsembleOptions,
) -> Result<EnsembleSummary, NumericalError> {
    cfg.validate()?;
    if opts.trajectories == 0 {
        return Err(NumericalError::Config(
            "ensemble needs at least one trajectory".into(),
        ));
    }
    let n = cfg.steps();
    let grid = n / cfg.snapshot_stride + 1;
    let blocks = opts.trajectories.div_ceil(BLOCK);
    let parts: Vec<Result<Partial, NumericalError>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut part = Partial::new(grid, n);
            let end = ((b + 1) * BLOCK).min(opts.trajectories);
            for i in b * BLOCK..end {
                accumulate(cfg, i, opts.capture_threshold, &mut part)?;
            }
            Ok(part)
        })
        .collect();
    let mut total = Partial::new(grid, n);
    for p in parts {
        total.merge(p?);
    }
    let nt = opts.trajectories as f64;
    let mean = |v: &Vec<f64>| v.iter().map(|x| x / nt).collect::<Vec<f64>>();
    let mean_c = mean(&total.sum_c);
    let std_c = total
        .sum_c2
        .iter()
        .zip(&mean_c)
        .map(|(s2, m)| (s2 / nt - m * m).max(0.0).sqrt())
        .collect();
    Ok(EnsembleSummary {
        times: (0..grid)
            .map(|g| (g * cfg.snapshot_stride) as f64 * cfg.dt)
            .collect(),
        mean_concurrence: mean_c,
        std_concurrence: std_c,
        mean_purity: mean(&total.sum_p),
        mean_excited_a: mean(&total.sum_ea),
        mean_excited_b: mean(&total.sum_eb),
        max_concurrence: total.max_c,
        min_purity: total.min_p,
        max_click_probability: total.max_click,
        max_abs_mean: total.max_mean,
        captures: total.captures,
        trajectories: opts.trajectories,
        total_clicks: total.clicks,
        clip_events: total.clips,
    })
}

/// Runs trajectories in index order until `target` have crossed `threshold`; each
/// trajectory stops at its first crossing. Returns the first `target` captures by
/// trajectory index and the number of trajectories consumed.
pub fn capture_first_crossings(
    cfg: &TrajectoryConfig,
    target: usize,
    threshold: f64,
    max_trajectories: usize,
) -> Result<(Vec<Capture>, usize), NumericalError> {
    cfg.validate()?;
    let n = cfg.steps();
    let stepper = Stepper::new(cfg.scheme, cfg.settings(), cfg.gamma, cfg.dt);
    let run_one = |index: usize| -> Result<Option<Capture>, NumericalError> {
        let mut rng = trajectory_rng(cfg.seed, index as u64);
        let mut rho = *cfg.initial.density().rho();
        for k in 1..=n {
            let wrap = |e| NumericalError::AtStep {
                step: k,
                source: Box::new(e),
            };
            let (out, _) = stepper.step(&rho, &mut rng).map_err(wrap)?;
            let f = certify(&out).map_err(wrap)?;
            rho = out;
            if f.concurrence >= threshold {
                return Ok(Some(Capture {
                    trajectory: index,
                    step: k,
                    time: k as f64 * cfg.dt,
                    concurrence: f.concurrence,
                    state: TwoQubitState::new_unchecked(rho),
                }));
            }
        }
        Ok(None)
    };
    let mut captures = Vec::with_capacity(target);
    let mut next = 0usize;
    let batch = 4096;
    while captures.len() < target && next < max_trajectories {
        let end = (next + batch).min(max_trajectories);
        let found: Vec<Result<Option<Capture>, NumericalError>> =
            (next..end).into_par_iter().map(run_one).collect();
        for f in found {
            if let Some(c) = f? {
                if captures.len() < target {
                    captures.push(c);
                }
            }
        }
        next = end;
    }
    let used = captures.last().map(|c| c.trajectory + 1).unwrap_or(next);
    Ok((captures, used))
}

/// Sets `rho` to the unconditioned (all outcomes averaged) one-step map of the
/// inefficient photodetection model; used by tests of the η → 0 limit.
pub fn averaged_pd_map(rho: &CMat4, s: &MeasurementSettings) -> CMat4 {
    let set = inefficient_photodetection_ops(s);
    let ops: Vec<CMat4> = set.operators.iter().map(|(_, m)| *m).collect();
    sandwich_sum(rho, &ops)
}
