//! Closed-form curves, ODE bounds, which-path densities, one-step tests and the
//! Kraus/SME consistency harness.

use std::f64::consts::{FRAC_PI_2, LN_2, PI, SQRT_2};

use crate::entanglement::factored_concurrence;
use crate::error::NumericalError;
use crate::kraus::{gauss_hermite, heterodyne_op, homodyne_op, MeasurementSettings};
use crate::state::{
    bell_from_computational, density_from_pure, r, BellAmplitudes, CMat4, PureState, TwoQubitState,
    C64,
};
use crate::trajectory::{
    apply_heterodyne_readout, apply_homodyne_readout, kraus_update, Capture, Scheme,
};

/// Fixed RK4 step in units of 1/γ.
pub const RK4_STEP: f64 = 1e-4;
/// Step-doubling tolerance for every RK4 integration.
pub const RK4_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    /// `2e^{-γt}(1-e^{-γt})`
    PdEeAvg,
    /// `e^{-γt}`
    PsiDecay,
    /// `e^{-γt}(2-e^{-γt})`
    PhiDecay,
    /// `e^{-2γt}`
    PhiPlusHom,
    PureBound,
    PdEtaBound,
    HomEtaBound,
    /// `2ηe^{-γt}(1-e^{-γt})`
    PdEtaAvg,
    /// `2(2η-1)e^{-γt}(1-e^{-γt})`, floored at 0
    HomEtaAvg,
}

impl CurveKind {
    pub fn parse(s: &str) -> Option<CurveKind> {
        Some(match s {
            "pd_ee_avg" => CurveKind::PdEeAvg,
            "psi_decay" => CurveKind::PsiDecay,
            "phi_decay" => CurveKind::PhiDecay,
            "phi_plus_hom" => CurveKind::PhiPlusHom,
            "pure_bound" | "pure_hom" => CurveKind::PureBound,
            "pd_eta_bound" | "pd_eta" => CurveKind::PdEtaBound,
            "hom_eta_bound" | "hom_eta" => CurveKind::HomEtaBound,
            "pd_eta_avg" => CurveKind::PdEtaAvg,
            "hom_eta_avg" => CurveKind::HomEtaAvg,
            _ => return None,
        })
    }

    fn needs_eta(&self) -> bool {
        matches!(
            self,
            CurveKind::PdEtaBound
                | CurveKind::HomEtaBound
                | CurveKind::PdEtaAvg
                | CurveKind::HomEtaAvg
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveSpec {
    pub kind: CurveKind,
    pub gamma: f64,
    pub eta: Option<f64>,
    pub times: Vec<f64>,
}

/// Uniform grid `0, dt, ..., n dt`.
pub fn uniform_grid(t_max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t_max * k as f64 / n as f64).collect()
}

fn check_grid(times: &[f64]) -> Result<(), NumericalError> {
    if times.first() != Some(&0.0) {
        return Err(NumericalError::Config("time grid must start at 0".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(NumericalError::Config(
            "time grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

pub fn closed_form_curve(spec: &CurveSpec) -> Result<Vec<f64>, NumericalError> {
    check_grid(&spec.times)?;
    let g = spec.gamma;
    let eta = match (spec.kind.needs_eta(), spec.eta) {
        (true, None) => return Err(NumericalError::Config(format!("{:?} needs eta", spec.kind))),
        (_, e) => e.unwrap_or(1.0),
    };
    if !(0.0..=1.0).contains(&eta) {
        return Err(NumericalError::Config(format!(
            "eta = {eta} outside [0, 1]"
        )));
    }
    let f = |t: f64| {
        let x = (-g * t).exp();
        match spec.kind {
            CurveKind::PdEeAvg => 2.0 * x * (1.0 - x),
            CurveKind::PsiDecay => x,
            CurveKind::PhiDecay => x * (2.0 - x),
            CurveKind::PhiPlusHom => x * x,
            CurveKind::PdEtaAvg => 2.0 * eta * x * (1.0 - x),
            CurveKind::HomEtaAvg => (2.0 * (2.0 * eta - 1.0) * x * (1.0 - x)).max(0.0),
            CurveKind::PureBound => pure_bound_at(g, t),
            CurveKind::PdEtaBound => 1.0 / ((1.0 - eta) * (g * t).exp() + eta),
            CurveKind::HomEtaBound => unreachable!(),
        }
    };
    match spec.kind {
        CurveKind::HomEtaBound => hom_eta_bound(g, eta, &spec.times),
        _ => Ok(spec.times.iter().map(|&t| f(t)).collect()),
    }
}

/// Fixed-step RK4 sampled on `times`; each interval is split into equal substeps of
/// at most `h`.
pub fn rk4<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    y0: [f64; N],
    times: &[f64],
    h: f64,
) -> Vec<[f64; N]> {
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0;
    out.push(y);
    for w in times.windows(2) {
        let n = ((w[1] - w[0]) / h).ceil().max(1.0) as usize;
        let dt = (w[1] - w[0]) / n as f64;
        for k in 0..n {
            let t = w[0] + k as f64 * dt;
            let k1 = f(t, &y);
            let k2 = f(
                t + dt / 2.0,
                &std::array::from_fn(|i| y[i] + dt / 2.0 * k1[i]),
            );
            let k3 = f(
                t + dt / 2.0,
                &std::array::from_fn(|i| y[i] + dt / 2.0 * k2[i]),
            );
            let k4 = f(t + dt, &std::array::from_fn(|i| y[i] + dt * k3[i]));
            for i in 0..N {
                y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        out.push(y);
    }
    out
}

/// RK4 with a step-doubling audit: halves the step until two successive
/// resolutions agree to [`RK4_TOL`], at most four times.
pub fn rk4_audited<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N] + Copy,
    y0: [f64; N],
    times: &[f64],
    h: f64,
) -> Result<Vec<[f64; N]>, NumericalError> {
    let mut h = h;
    let mut coarse = rk4(f, y0, times, h);
    for _ in 0..4 {
        let fine = rk4(f, y0, times, h / 2.0);
        let diff = coarse
            .iter()
            .zip(&fine)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);
        if !diff.is_finite() {
            return Err(NumericalError::Unstable("non-finite RK4 state".into()));
        }
        if diff < RK4_TOL {
            return Ok(fine);
        }
        log::debug!("rk4 step {h:e}: doubling difference {diff:e}, halving");
        h /= 2.0;
        coarse = fine;
    }
    Err(NumericalError::Unstable(format!(
        "step doubling did not converge at h = {h:e}"
    )))
}

/// Time at which the pure homodyne bound reaches 1.
pub fn pure_bound_peak(gamma: f64) -> f64 {
    LN_2 / gamma
}

fn pure_bound_at(gamma: f64, t: f64) -> f64 {
    if t >= pure_bound_peak(gamma) {
        return 1.0;
    }
    let x = (gamma * t).exp();
    (2.0 * x - 2.0) / (2.0 - x * (2.0 - x))
}

/// Fastest concurrence rise from `|ee⟩` under ideal double homodyne detection,
/// `(2e^{γt}-2)/(2-e^{γt}(2-e^{γt}))`; capped at 1 past `t = ln2/γ`.
pub fn pure_homodyne_bound(gamma: f64, times: &[f64]) -> Vec<f64> {
    times.iter().map(|&t| pure_bound_at(gamma, t)).collect()
}

/// RK4 of `Ċ = γ(C+1)[1-C+√(1-C²)]` from `C = 0`, held at 1 once reached.
pub fn pure_bound_ode(gamma: f64, times: &[f64]) -> Result<Vec<f64>, NumericalError> {
    check_grid(times)?;
    let f = move |_t: f64, y: &[f64; 1]| {
        let c = y[0].min(1.0);
        [gamma * (c + 1.0) * (1.0 - c + (1.0 - c * c).max(0.0).sqrt())]
    };
    let ys = rk4_audited(f, [0.0], times, RK4_STEP / gamma)?;
    Ok(ys
        .iter()
        .zip(times)
        .map(|(y, &t)| {
            if t >= pure_bound_peak(gamma) {
                1.0
            } else {
                y[0].min(1.0)
            }
        })
        .collect())
}

/// Largest concurrence after the first click with detector efficiency `η`,
/// `1/((1-η)e^{γt}+η)`.
pub fn pd_eta_bound(gamma: f64, eta: f64, times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|&t| 1.0 / ((1.0 - eta) * (gamma * t).exp() + eta))
        .collect()
}

/// RK4 of `Ċ = ηγC² - γC` from `C = 1`.
pub fn pd_eta_bound_ode(gamma: f64, eta: f64, times: &[f64]) -> Result<Vec<f64>, NumericalError> {
    check_grid(times)?;
    let f = move |_t: f64, y: &[f64; 1]| [eta * gamma * y[0] * y[0] - gamma * y[0]];
    Ok(rk4_audited(f, [1.0], times, RK4_STEP / gamma)?
        .iter()
        .map(|y| y[0])
        .collect())
}

/// Coordinates `(q_a, q_b, q_4, q_5, q_7, q_8, q_10, q_11, q_14)` of the symmetric
/// manifold reached from `|ee⟩` with both readouts held at zero.
pub type HomNine = [f64; 9];

/// Right-hand side of the nine-coordinate system for readouts `r3 = r4 = 0`.
pub fn hom_nine_rhs(gamma: f64, eta: f64, q: &HomNine) -> HomNine {
    let [qa, qb, q4, q5, q7, q8, q10, q11, q14] = *q;
    let (g, e) = (gamma, eta);
    let com = e * g * SQRT_2 * q7 + 2.0 * e * g * (qa + qb);
    [
        -2.0 * g * qa + qa * com,
        g * (qa * (1.0 - e) - qb) + qb * com,
        -g * q4 + q4 * com,
        -1.5 * g * q5 + q5 * com,
        -g * q7 + e * g * SQRT_2 * (q7 * q7 - qa) + 2.0 * e * g * q7 * (qa + qb),
        g * q5 - 0.5 * g * q8 - 2.0 * e * g * q5 + q8 * com,
        -g * q10 + q10 * com,
        -1.5 * g * q11 + q11 * com,
        -g * q11 - 0.5 * g * q14 + 2.0 * e * g * q11 + q14 * com,
    ]
}

/// Reduced `(q_a, q_b, q_7)` system valid for the `|ee⟩` initial condition.
pub fn hom_reduced_rhs(gamma: f64, eta: f64, y: &[f64; 3]) -> [f64; 3] {
    let q = hom_nine_rhs(
        gamma,
        eta,
        &[y[0], y[1], 0.0, 0.0, y[2], 0.0, 0.0, 0.0, 0.0],
    );
    [q[0], q[1], q[4]]
}

/// Density matrix of the nine-coordinate manifold; remaining coordinates follow
/// from `q1 = √2 q2`, `q6 = q5`, `q9 = q8`, `q12 = -q11`, `q13 = 0`, `q15 = -q14`.
pub fn hom_nine_density(q: &HomNine) -> CMat4 {
    let [qa, qb, q4, q5, q7, q8, q10, q11, q14] = *q;
    let s = 1.0 / SQRT_2;
    let el = |sym: f64, asym: f64| C64::new(sym * s, -asym * s);
    let mut m = CMat4::zeros();
    m[(0, 0)] = r(qa);
    m[(1, 1)] = r(qb);
    m[(2, 2)] = r(qb);
    m[(3, 3)] = r(1.0 - qa - 2.0 * qb);
    // pairs (1,2),(0,1),(0,2),(0,3),(1,3),(2,3) carry q4..q9 and q10..q15
    let pairs = [
        ((1, 2), q4, q10),
        ((0, 1), q5, q11),
        ((0, 2), q5, -q11),
        ((0, 3), q7, 0.0),
        ((1, 3), q8, q14),
        ((2, 3), q8, -q14),
    ];
    for ((i, j), sym, asym) in pairs {
        m[(i, j)] = el(sym, asym);
        m[(j, i)] = el(sym, asym).conj();
    }
    m
}

/// Concurrence of `diag(q_a, q_b, q_b, 1-q_a-2q_b)` with coherence `ρ03 = q7/√2`.
pub fn reduced_concurrence(qb: f64, q7: f64) -> f64 {
    (2.0 * (q7.abs() / SQRT_2 - qb)).max(0.0)
}

/// Full nine-coordinate RK4 trajectory from an arbitrary starting point.
pub fn hom_nine_trajectory(
    gamma: f64,
    eta: f64,
    q0: HomNine,
    times: &[f64],
) -> Result<Vec<HomNine>, NumericalError> {
    check_grid(times)?;
    rk4_audited(
        move |_t, q: &HomNine| hom_nine_rhs(gamma, eta, q),
        q0,
        times,
        RK4_STEP / gamma,
    )
}

/// Concurrence bound for homodyne efficiency `η` from `|ee⟩`: the reduced system
/// is integrated, and the curve is held at its maximum after the peak.
pub fn hom_eta_bound(gamma: f64, eta: f64, times: &[f64]) -> Result<Vec<f64>, NumericalError> {
    check_grid(times)?;
    let ys = rk4_audited(
        move |_t, y: &[f64; 3]| hom_reduced_rhs(gamma, eta, y),
        [1.0, 0.0, 0.0],
        times,
        RK4_STEP / gamma,
    )?;
    let mut best = 0.0f64;
    let mut out = Vec::with_capacity(ys.len());
    for y in ys {
        if y[0] < -1e-9 || y[1] < -1e-9 || y[0] + 2.0 * y[1] > 1.0 + 1e-9 {
            return Err(NumericalError::Unstable(format!(
                "populations left [0,1]: {y:?}"
            )));
        }
        best = best.max(reduced_concurrence(y[1], y[2]));
        out.push(best);
    }
    Ok(out)
}

/// Raw (not held) reduced-system concurrence.
pub fn hom_eta_raw(gamma: f64, eta: f64, times: &[f64]) -> Result<Vec<f64>, NumericalError> {
    check_grid(times)?;
    let ys = rk4_audited(
        move |_t, y: &[f64; 3]| hom_reduced_rhs(gamma, eta, y),
        [1.0, 0.0, 0.0],
        times,
        RK4_STEP / gamma,
    )?;
    Ok(ys.iter().map(|y| reduced_concurrence(y[1], y[2])).collect())
}

/// RK4 of `dC̄/dt = -γC̄ + 2γρ_ee e^{-2γt}`.
pub fn viviescas_avg(
    rho_ee0: f64,
    c0: f64,
    gamma: f64,
    times: &[f64],
) -> Result<Vec<f64>, NumericalError> {
    check_grid(times)?;
    if !(0.0..=1.0).contains(&rho_ee0) {
        return Err(NumericalError::Config(format!(
            "rho_ee = {rho_ee0} outside [0, 1]"
        )));
    }
    let h = if gamma > 0.0 {
        RK4_STEP / gamma
    } else {
        f64::INFINITY
    };
    let f = move |t: f64, y: &[f64; 1]| {
        [-gamma * y[0] + 2.0 * gamma * rho_ee0 * (-2.0 * gamma * t).exp()]
    };
    Ok(rk4_audited(f, [c0], times, h)?
        .iter()
        .map(|y| y[0])
        .collect())
}

/// Iterates the ideal homodyne Kraus map with `r3 = r4 = 0` (θ = 0, ϑ = 90°) from
/// `|ee⟩` and returns the concurrence at each time of `times`, which must be
/// multiples of `dt`.
pub fn deterministic_homodyne_r0(
    gamma: f64,
    dt: f64,
    times: &[f64],
) -> Result<Vec<f64>, NumericalError> {
    check_grid(times)?;
    let s = MeasurementSettings::ideal(gamma * dt, 0.0, FRAC_PI_2);
    let op = homodyne_op(&s, 0.0, 0.0);
    let mut rho = *density_from_pure(&PureState::ee()).rho();
    let mut out = vec![0.0];
    let mut step = 0usize;
    for &t in &times[1..] {
        let target = (t / dt).round() as usize;
        while step < target {
            rho = kraus_update(&rho, &[op], "r=0")?;
            step += 1;
        }
        out.push(factored_concurrence(&rho).concurrence);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// Photon entering port 1 (`+`).
    Port1,
    /// Photon entering port 2 (`-`).
    Port2,
}

impl Source {
    fn sign(&self) -> f64 {
        match self {
            Source::Port1 => 1.0,
            Source::Port2 => -1.0,
        }
    }
}

/// Which-path homodyne density `e^{-X3²-X4²}(X3²+X4² ± 2X3X4 cos(θ-ϑ))/π`.
pub fn which_path_homodyne(x3: f64, x4: f64, theta: f64, vartheta: f64, source: Source) -> f64 {
    which_path_unnormalized(x3, x4, theta, vartheta, source) / PI
}

fn which_path_unnormalized(x3: f64, x4: f64, theta: f64, vartheta: f64, source: Source) -> f64 {
    (-x3 * x3 - x4 * x4).exp()
        * (x3 * x3 + x4 * x4 + source.sign() * 2.0 * x3 * x4 * (theta - vartheta).cos())
}

/// Which-path densities on a square grid, each normalized by the 2D trapezoid rule.
#[derive(Clone, Debug, PartialEq)]
pub struct WhichPathGrid {
    pub axis: Vec<f64>,
    /// Row-major `[i3 * n + i4]`.
    pub source1: Vec<f64>,
    pub source2: Vec<f64>,
}

impl WhichPathGrid {
    pub fn max_abs_diff(&self) -> f64 {
        self.source1
            .iter()
            .zip(&self.source2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn integral(&self, values: &[f64]) -> f64 {
        trapezoid_2d(&self.axis, values)
    }
}

fn trapezoid_2d(axis: &[f64], v: &[f64]) -> f64 {
    let n = axis.len();
    let h = axis[1] - axis[0];
    let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += w(i) * w(j) * v[i * n + j];
        }
    }
    s * h * h
}

/// Default grid: `[-5, 5]²` with 401 points per axis.
pub fn which_path_grid(theta: f64, vartheta: f64, half_width: f64, n: usize) -> WhichPathGrid {
    let axis: Vec<f64> = (0..n)
        .map(|k| -half_width + 2.0 * half_width * k as f64 / (n - 1) as f64)
        .collect();
    let eval = |src: Source| {
        let mut v = Vec::with_capacity(n * n);
        for &x3 in &axis {
            for &x4 in &axis {
                v.push(which_path_unnormalized(x3, x4, theta, vartheta, src));
            }
        }
        let z = trapezoid_2d(&axis, &v);
        v.iter_mut().for_each(|x| *x /= z);
        v
    };
    let source1 = eval(Source::Port1);
    let source2 = eval(Source::Port2);
    WhichPathGrid {
        axis,
        source1,
        source2,
    }
}

/// Two-mode Husimi function of the which-path photon state.
pub fn which_path_q_function(
    alpha: C64,
    beta: C64,
    theta: f64,
    vartheta: f64,
    source: Source,
) -> f64 {
    let (x3, p3, x4, p4) = (alpha.re, alpha.im, beta.re, beta.im);
    let d = theta - vartheta;
    let sg = source.sign();
    (-x3 * x3 - x4 * x4 - p3 * p3 - p4 * p4).exp() / (2.0 * PI * PI)
        * (x3 * x3
            + x4 * x4
            + p3 * p3
            + p4 * p4
            + sg * 2.0 * (x3 * x4 + p3 * p4) * d.cos()
            + sg * 2.0 * (x4 * p3 - x3 * p4) * d.sin())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OneStepReadout {
    Homodyne { x3: f64, x4: f64 },
    Heterodyne { alpha: C64, beta: C64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneStep {
    /// Concurrence of the normalized post-step state.
    pub concurrence: f64,
    /// `2|ad - bc|` of `M|ee⟩` without the Gaussian prefactor or normalization.
    pub unnormalized: f64,
}

/// Concurrence after a single measurement step from `|ee⟩`.
pub fn one_step_test(readout: OneStepReadout, theta: f64, vartheta: f64, epsilon: f64) -> OneStep {
    let s = MeasurementSettings::ideal(epsilon, theta, vartheta);
    let (op, pref) = match readout {
        OneStepReadout::Homodyne { x3, x4 } => (
            homodyne_op(&s, x3, x4),
            (-(x3 * x3 + x4 * x4) / 2.0).exp() / PI.sqrt(),
        ),
        OneStepReadout::Heterodyne { alpha, beta } => (
            heterodyne_op(&s, alpha, beta),
            (-(alpha.norm_sqr() + beta.norm_sqr()) / 2.0).exp(),
        ),
    };
    let v = op.column(0).into_owned() / r(pref);
    let unnormalized = 2.0 * (v[0] * v[3] - v[1] * v[2]).norm();
    let psi = PureState::from_vector(v).expect("M|ee> is never zero");
    OneStep {
        concurrence: crate::entanglement::concurrence_pure(&psi),
        unnormalized,
    }
}

/// Two homodyne steps (θ = 0, ϑ = 90°) from `|ee⟩` with quadratures
/// `[X3, X4, X3', X4']`, normalized with a real nonnegative `|ee⟩` amplitude.
pub fn two_step_phi_minus_drift(epsilon: f64, x: [f64; 4]) -> PureState {
    let s = MeasurementSettings::ideal(epsilon, 0.0, FRAC_PI_2);
    let m1 = homodyne_op(&s, x[0], x[1]);
    let m2 = homodyne_op(&s, x[2], x[3]);
    let v = (m2 * m1).column(0).into_owned();
    let ph = v[0].conj() / v[0].norm();
    PureState::from_vector(v * ph).expect("two-step state is never zero")
}

/// SME measurement operators: `(L3, L4)` for homodyne, `(L_I, L_Q, L_X, L_Y)` for
/// heterodyne, with phases from `s`.
pub fn sme_operators(
    scheme: Scheme,
    s: &MeasurementSettings,
    gamma: f64,
) -> Result<Vec<CMat4>, NumericalError> {
    let mut sa = CMat4::zeros();
    sa[(2, 0)] = r(1.0);
    sa[(3, 1)] = r(1.0);
    let mut sb = CMat4::zeros();
    sb[(1, 0)] = r(1.0);
    sb[(3, 2)] = r(1.0);
    let u = C64::from_polar(1.0, s.theta);
    let v = C64::from_polar(1.0, s.vartheta);
    let plus = sa + sb;
    let minus = sa - sb;
    match scheme {
        Scheme::Homodyne => {
            let k = r((gamma / 2.0).sqrt());
            Ok(vec![plus * (u * k), minus * (v * k)])
        }
        Scheme::Heterodyne => {
            let k = r(gamma.sqrt() / 2.0);
            let mi = C64::new(0.0, -1.0);
            Ok(vec![
                plus * (u * k),
                plus * (u * k * mi),
                minus * (v * k),
                minus * (v * k * mi),
            ])
        }
        other => Err(NumericalError::Config(format!(
            "no SME form for {}",
            other.name()
        ))),
    }
}

fn sme_efficiencies(scheme: Scheme, s: &MeasurementSettings) -> Vec<f64> {
    match scheme {
        Scheme::Homodyne => vec![s.eta3, s.eta4],
        _ => vec![s.eta3, s.eta3, s.eta4, s.eta4],
    }
}

/// Readout means `√η tr(ρ(L + L†))` per channel.
pub fn sme_readout_means(rho: &CMat4, ops: &[CMat4], etas: &[f64]) -> Vec<f64> {
    ops.iter()
        .zip(etas)
        .map(|(l, e)| e.sqrt() * (l * rho + rho * l.adjoint()).trace().re)
        .collect()
}

/// One Euler–Maruyama step of the Itô SME with Wiener increments `dw`.
pub fn sme_euler_step(
    rho: &CMat4,
    scheme: Scheme,
    s: &MeasurementSettings,
    gamma: f64,
    dt: f64,
    dw: &[f64],
) -> Result<CMat4, NumericalError> {
    let ops = sme_operators(scheme, s, gamma)?;
    let etas = sme_efficiencies(scheme, s);
    if dw.len() != ops.len() {
        return Err(NumericalError::Config(format!(
            "expected {} Wiener increments",
            ops.len()
        )));
    }
    let mut d = CMat4::zeros();
    for ((l, e), w) in ops.iter().zip(&etas).zip(dw) {
        let ld = l.adjoint();
        let ll = ld * l;
        d += (l * rho * ld - (ll * rho + rho * ll) * r(0.5)) * r(dt);
        let k = l * rho + rho * ld;
        let tr = k.trace();
        d += (k - rho * tr) * r(e.sqrt() * w);
    }
    Ok(rho + d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderReport {
    pub scheme: Scheme,
    pub dts: Vec<f64>,
    /// Largest entry of `E[ρ'_Kraus] - E[ρ'_SME]` over the state sample, per dt.
    pub differences: Vec<f64>,
    pub slope: f64,
    pub pass: bool,
}

/// Accepted range for the fitted log-log slope.
pub const ORDER_SLOPE_RANGE: (f64, f64) = (1.8, 2.2);

/// Compares one Kraus step against one Euler step of the Itô SME, with matched noise
/// `dW = (r - mean) dt`. Both updates are averaged over the noise with tensor
/// Gauss–Hermite quadrature; the averaged difference should scale as `dt²`.
/// `corrupt` doubles the readout scaling inside the Kraus operator (negative control).
pub fn kraus_sme_order_test(
    scheme: Scheme,
    s: &MeasurementSettings,
    gamma: f64,
    states: &[TwoQubitState],
    dts: &[f64],
    corrupt: bool,
) -> Result<OrderReport, NumericalError> {
    if dts.len() < 2 || states.is_empty() {
        return Err(NumericalError::Config(
            "need at least two dt values and one state".into(),
        ));
    }
    let (dims, order) = match scheme {
        Scheme::Homodyne => (2, 12),
        Scheme::Heterodyne => (4, 6),
        other => {
            return Err(NumericalError::Config(format!(
                "no SME form for {}",
                other.name()
            )))
        }
    };
    let (nodes, weights) = gauss_hermite(order);
    // physicists' nodes: z = √2 x has unit variance, weights sum to √π
    let nodes: Vec<f64> = nodes.iter().map(|x| x * SQRT_2).collect();
    let wsum: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / wsum).collect();
    let mut differences = Vec::with_capacity(dts.len());
    for &dt in dts {
        let st = MeasurementSettings {
            epsilon: gamma * dt,
            ..*s
        };
        let ops = sme_operators(scheme, &st, gamma)?;
        let mut worst = 0.0f64;
        for state in states {
            let rho = state.rho();
            let means = sme_readout_means(rho, &ops, &sme_efficiencies(scheme, &st));
            let mut ek = CMat4::zeros();
            let mut es = CMat4::zeros();
            let total = order.pow(dims as u32);
            for flat in 0..total {
                let mut idx = flat;
                let mut w = 1.0;
                let mut dw = [0.0; 4];
                let mut rd = [0.0; 4];
                for k in 0..dims {
                    let i = idx % order;
                    idx /= order;
                    w *= weights[i];
                    dw[k] = nodes[i] * dt.sqrt();
                    rd[k] = means[k] + dw[k] / dt;
                }
                let kdt = if corrupt { 4.0 * dt } else { dt };
                let kraus = match scheme {
                    Scheme::Homodyne => apply_homodyne_readout(rho, &st, kdt, rd[0], rd[1])?,
                    _ => apply_heterodyne_readout(rho, &st, kdt, rd)?,
                };
                ek += kraus * r(w);
                es += sme_euler_step(rho, scheme, &st, gamma, dt, &dw[..dims])? * r(w);
            }
            worst = worst.max((ek - es).iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        differences.push(worst);
    }
    let slope = log_log_slope(dts, &differences);
    let pass = slope >= ORDER_SLOPE_RANGE.0 && slope <= ORDER_SLOPE_RANGE.1;
    Ok(OrderReport {
        scheme,
        dts: dts.to_vec(),
        differences,
        slope,
        pass,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges spanning `[-1, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize) -> Self {
        Histogram {
            edges: (0..=bins)
                .map(|k| -1.0 + 2.0 * k as f64 / bins as f64)
                .collect(),
            counts: vec![0; bins],
        }
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let n = self.counts.len();
        (((x + 1.0) / 2.0 * n as f64).floor().max(0.0) as usize).min(n - 1)
    }

    pub fn add(&mut self, x: f64) {
        let b = self.bin_of(x);
        self.counts[b] += 1;
    }

    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.counts.iter().enumerate() {
            if *c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxConcStats {
    pub count: usize,
    pub bell: Vec<BellAmplitudes>,
    pub max_abs_a: f64,
    /// Captures with `|A| >= 0.02`.
    pub a_violations: usize,
    /// Largest imaginary part of `B` or `C`, or real part of `D`.
    pub max_phase_error: f64,
    /// Largest `|B² + C² + E² - 1|`.
    pub max_norm_error: f64,
    pub hist_b: Histogram,
    pub hist_c: Histogram,
    pub hist_e: Histogram,
    /// Joint `(C, E)` counts, row-major over C bins.
    pub joint_ce: Vec<u64>,
    pub skew_c: f64,
    pub skew_e: f64,
    pub mean_b: f64,
}

impl MaxConcStats {
    /// Whether the mode of the B-marginal lies in the bin containing 1.
    pub fn b_mode_at_one(&self) -> bool {
        self.hist_b.mode() == self.hist_b.bin_of(1.0)
    }
}

/// Sample skewness.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Bell-amplitude statistics of captured high-concurrence states.
pub fn max_conc_state_stats(
    captures: &[Capture],
    bins: usize,
) -> Result<MaxConcStats, NumericalError> {
    let mut bell = Vec::with_capacity(captures.len());
    for c in captures {
        let psi = c.state.pure_state(1e-6).ok_or_else(|| {
            NumericalError::Config(format!(
                "captured state of trajectory {} is not pure",
                c.trajectory
            ))
        })?;
        bell.push(bell_from_computational(&psi));
    }
    let mut st = MaxConcStats {
        count: bell.len(),
        bell: Vec::new(),
        max_abs_a: 0.0,
        a_violations: 0,
        max_phase_error: 0.0,
        max_norm_error: 0.0,
        hist_b: Histogram::new(bins),
        hist_c: Histogram::new(bins),
        hist_e: Histogram::new(bins),
        joint_ce: vec![0; bins * bins],
        skew_c: 0.0,
        skew_e: 0.0,
        mean_b: 0.0,
    };
    let (mut cs, mut es) = (Vec::new(), Vec::new());
    for b in &bell {
        let a = b.a.norm();
        st.max_abs_a = st.max_abs_a.max(a);
        if a >= 0.02 {
            st.a_violations += 1;
        }
        st.max_phase_error = st
            .max_phase_error
            .max(b.b.im.abs())
            .max(b.c.im.abs())
            .max(b.d.re.abs());
        let (bb, cc, ee) = (b.b.re, b.c.re, b.e());
        st.max_norm_error = st
            .max_norm_error
            .max((bb * bb + cc * cc + ee * ee - 1.0).abs());
        st.hist_b.add(bb);
        st.hist_c.add(cc);
        st.hist_e.add(ee);
        let (ic, ie) = (st.hist_c.bin_of(cc), st.hist_e.bin_of(ee));
        st.joint_ce[ic * bins + ie] += 1;
        st.mean_b += bb;
        cs.push(cc);
        es.push(ee);
    }
    if !bell.is_empty() {
        st.mean_b /= bell.len() as f64;
        st.skew_c = skewness(&cs);
        st.skew_e = skewness(&es);
    }
    st.bell = bell;
    Ok(st)
}
