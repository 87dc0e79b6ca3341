//! Measurement operators for every detection scheme.
//!
//! Rows and columns follow the `{ee, eg, ge, gg}` ordering; `ε = γ dt`.
//! Port 3 carries `(σ_A + σ_B)` with phase `θ`, port 4 carries `(σ_A - σ_B)`
//! with phase `ϑ`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::KrausError;
use crate::state::{c, r, CMat4, C64};

pub const LABEL_00: &str = "n3=0,n4=0";
pub const LABEL_10: &str = "n3=1,n4=0";
pub const LABEL_01: &str = "n3=0,n4=1";
pub const LABEL_20: &str = "n3=2,n4=0";
pub const LABEL_02: &str = "n3=0,n4=2";
/// Signal-outcome labels in the order used by weights and sampling.
pub const PD_LABELS: [&str; 5] = [LABEL_00, LABEL_10, LABEL_01, LABEL_20, LABEL_02];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementSettings {
    pub epsilon: f64,
    pub theta: f64,
    pub vartheta: f64,
    pub eta3: f64,
    pub eta4: f64,
}

impl MeasurementSettings {
    pub fn ideal(epsilon: f64, theta: f64, vartheta: f64) -> Self {
        MeasurementSettings {
            epsilon,
            theta,
            vartheta,
            eta3: 1.0,
            eta4: 1.0,
        }
    }

    pub fn with_efficiency(mut self, eta3: f64, eta4: f64) -> Self {
        self.eta3 = eta3;
        self.eta4 = eta4;
        self
    }

    pub fn is_ideal(&self) -> bool {
        self.eta3 == 1.0 && self.eta4 == 1.0
    }

    pub fn validate(&self) -> Result<(), KrausError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(KrausError::Settings(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        for (name, eta) in [("eta3", self.eta3), ("eta4", self.eta4)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(KrausError::Settings(format!(
                    "{name} = {eta} outside [0, 1]"
                )));
            }
        }
        if !(self.theta.is_finite() && self.vartheta.is_finite()) {
            return Err(KrausError::Settings("non-finite phase".into()));
        }
        if self.epsilon > 0.01 {
            log::warn!(
                "epsilon = {} exceeds 0.01; O(dt^2) terms are no longer small",
                self.epsilon
            );
        }
        Ok(())
    }
}

/// Continuous measurement families; their operators depend on real readout coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContinuousFamily {
    /// Coordinates `(X3, X4)`.
    Homodyne(MeasurementSettings),
    /// Coordinates `(X3, X4)`, five operators.
    InefficientHomodyne(MeasurementSettings),
    /// Coordinates `(Re α, Im α, Re β, Im β)`.
    Heterodyne(MeasurementSettings),
    /// Coordinates `(Re α, Im α)`, three operators `j = 0, 1, 2`.
    MixedHetPd(MeasurementSettings),
}

impl ContinuousFamily {
    pub fn dims(&self) -> usize {
        match self {
            ContinuousFamily::Homodyne(_) | ContinuousFamily::InefficientHomodyne(_) => 2,
            ContinuousFamily::Heterodyne(_) => 4,
            ContinuousFamily::MixedHetPd(_) => 2,
        }
    }

    /// Measure normalization: `1` for quadratures, `1/π` per coherent-state mode.
    pub fn measure_factor(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            ContinuousFamily::Homodyne(_) | ContinuousFamily::InefficientHomodyne(_) => 1.0,
            ContinuousFamily::Heterodyne(_) => 1.0 / (PI * PI),
            ContinuousFamily::MixedHetPd(_) => 1.0 / PI,
        }
    }

    pub fn operators_at(&self, x: &[f64]) -> Vec<CMat4> {
        match self {
            ContinuousFamily::Homodyne(s) => vec![homodyne_op(s, x[0], x[1])],
            ContinuousFamily::InefficientHomodyne(s) => {
                inefficient_homodyne_matrices(s, x[0], x[1]).to_vec()
            }
            ContinuousFamily::Heterodyne(s) => {
                vec![heterodyne_op(s, c(x[0], x[1]), c(x[2], x[3]))]
            }
            ContinuousFamily::MixedHetPd(s) => mixed_het_pd_matrices(s, c(x[0], x[1])).to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Measure {
    Discrete,
    Continuous2D(ContinuousFamily),
}

/// An outcome group lists operators whose updates are summed (lost-mode outcomes).
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeGroup {
    pub label: String,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KrausSet {
    pub label: String,
    pub operators: Vec<(String, CMat4)>,
    pub groups: Vec<OutcomeGroup>,
    pub measure: Measure,
}

impl KrausSet {
    fn discrete(label: &str, operators: Vec<(String, CMat4)>) -> Self {
        let groups = operators
            .iter()
            .enumerate()
            .map(|(i, (l, _))| OutcomeGroup {
                label: l.clone(),
                members: vec![i],
            })
            .collect();
        KrausSet {
            label: label.to_string(),
            operators,
            groups,
            measure: Measure::Discrete,
        }
    }

    pub fn operator(&self, label: &str) -> Option<&CMat4> {
        self.operators
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, m)| m)
    }

    pub fn continuous(label: &str, family: ContinuousFamily) -> Self {
        KrausSet {
            label: label.to_string(),
            operators: Vec::new(),
            groups: Vec::new(),
            measure: Measure::Continuous2D(family),
        }
    }
}

#[inline]
fn expi(phi: f64) -> C64 {
    C64::from_polar(1.0, phi)
}

fn ensure_ideal(s: &MeasurementSettings) -> Result<(), KrausError> {
    if s.is_ideal() {
        Ok(())
    } else {
        Err(KrausError::NeedsInefficient(s.eta3, s.eta4))
    }
}

/// Diagonal no-emission part `diag(1-ε, √(1-ε), √(1-ε), 1)`.
#[inline]
pub fn no_emission(eps: f64) -> CMat4 {
    let s = (1.0 - eps).sqrt();
    CMat4::from_diagonal(&nalgebra::Vector4::new(r(1.0 - eps), r(s), r(s), r(1.0)))
}

/// The five ideal photodetection operators in [`PD_LABELS`] order.
pub fn photodetection_matrices(eps: f64) -> [CMat4; 5] {
    let a = (eps * (1.0 - eps) / 2.0).sqrt();
    let b = (eps / 2.0).sqrt();
    let m00 = no_emission(eps);
    let mut m10 = CMat4::zeros();
    m10[(1, 0)] = r(a);
    m10[(2, 0)] = r(a);
    m10[(3, 1)] = r(b);
    m10[(3, 2)] = r(b);
    let mut m01 = CMat4::zeros();
    m01[(1, 0)] = r(-a);
    m01[(2, 0)] = r(a);
    m01[(3, 1)] = r(b);
    m01[(3, 2)] = r(-b);
    let mut m20 = CMat4::zeros();
    m20[(3, 0)] = r(eps / 2f64.sqrt());
    let mut m02 = CMat4::zeros();
    m02[(3, 0)] = r(-eps / 2f64.sqrt());
    [m00, m10, m01, m20, m02]
}

pub fn photodetection_ops(s: &MeasurementSettings) -> Result<KrausSet, KrausError> {
    ensure_ideal(s)?;
    let ops = photodetection_matrices(s.epsilon);
    Ok(KrausSet::discrete(
        "photodetection",
        PD_LABELS
            .iter()
            .zip(ops)
            .map(|(l, m)| (l.to_string(), m))
            .collect(),
    ))
}

/// Ideal homodyne operator for quadrature outcomes `(X3, X4)`.
pub fn homodyne_op(s: &MeasurementSettings, x3: f64, x4: f64) -> CMat4 {
    let eps = s.epsilon;
    let u = expi(s.theta);
    let v = expi(s.vartheta);
    let pref = (-(x3 * x3 + x4 * x4) / 2.0).exp() / std::f64::consts::PI.sqrt();
    let a = (eps * (1.0 - eps)).sqrt();
    let se = eps.sqrt();
    let p = u * x3 + v * x4;
    let m = u * x3 - v * x4;
    let mut op = no_emission(eps);
    op[(1, 0)] = m * a;
    op[(2, 0)] = p * a;
    op[(3, 0)] = (u * u * (x3 * x3 - 0.5) - v * v * (x4 * x4 - 0.5)) * eps;
    op[(3, 1)] = p * se;
    op[(3, 2)] = m * se;
    op * r(pref)
}

/// Ideal heterodyne operator for coherent-state outcomes `(α, β)` at ports 3 and 4.
pub fn heterodyne_op(s: &MeasurementSettings, alpha: C64, beta: C64) -> CMat4 {
    let eps = s.epsilon;
    let au = alpha.conj() * expi(s.theta);
    let bv = beta.conj() * expi(s.vartheta);
    let pref = (-(alpha.norm_sqr() + beta.norm_sqr()) / 2.0).exp();
    let a = (eps * (1.0 - eps) / 2.0).sqrt();
    let h = (eps / 2.0).sqrt();
    let mut op = no_emission(eps);
    op[(1, 0)] = (au - bv) * a;
    op[(2, 0)] = (au + bv) * a;
    op[(3, 0)] = (au * au - bv * bv) * (eps / 2.0);
    op[(3, 1)] = (au + bv) * h;
    op[(3, 2)] = (au - bv) * h;
    op * r(pref)
}

/// Heterodyne at port 3 with outcome `α`, photodetection at port 4 with `j` clicks.
pub fn mixed_het_pd_matrices(s: &MeasurementSettings, alpha: C64) -> [CMat4; 3] {
    let eps = s.epsilon;
    let ac = alpha.conj();
    let pref = (-alpha.norm_sqr() / 2.0).exp();
    let a = (eps * (1.0 - eps) / 2.0).sqrt();
    let h = (eps / 2.0).sqrt();
    let mut m0 = no_emission(eps);
    m0[(1, 0)] = ac * a;
    m0[(2, 0)] = ac * a;
    m0[(3, 0)] = ac * ac * (eps / 2.0);
    m0[(3, 1)] = ac * h;
    m0[(3, 2)] = ac * h;
    let mut m1 = CMat4::zeros();
    m1[(1, 0)] = r(-a);
    m1[(2, 0)] = r(a);
    m1[(3, 1)] = r(h);
    m1[(3, 2)] = r(-h);
    let mut m2 = CMat4::zeros();
    m2[(3, 0)] = r(-eps / 2f64.sqrt());
    [m0 * r(pref), m1 * r(pref), m2 * r(pref)]
}

pub fn mixed_het_pd_ops(s: &MeasurementSettings, alpha: C64) -> Result<KrausSet, KrausError> {
    ensure_ideal(s)?;
    if s.theta != 0.0 || s.vartheta != 0.0 {
        return Err(KrausError::Settings(
            "mixed heterodyne/photodetection requires theta = vartheta = 0".into(),
        ));
    }
    let ops = mixed_het_pd_matrices(s, alpha);
    Ok(KrausSet {
        label: "mixed_het_pd".into(),
        operators: ops
            .iter()
            .enumerate()
            .map(|(j, m)| (format!("j={j}"), *m))
            .collect(),
        groups: (0..3)
            .map(|j| OutcomeGroup {
                label: format!("j={j}"),
                members: vec![j],
            })
            .collect(),
        measure: Measure::Continuous2D(ContinuousFamily::MixedHetPd(*s)),
    })
}

/// Inefficient photodetection: eleven operators labelled by signal and lost counts,
/// grouped by the signal outcome.
pub fn inefficient_photodetection_ops(s: &MeasurementSettings) -> KrausSet {
    let eps = s.epsilon;
    let (e3, e4) = (s.eta3, s.eta4);
    let a = (eps * (1.0 - eps) / 2.0).sqrt();
    let h = (eps / 2.0).sqrt();
    let one_photon = |port3: bool, w: f64| {
        let sg = if port3 { 1.0 } else { -1.0 };
        let mut m = CMat4::zeros();
        m[(1, 0)] = r(sg * a * w);
        m[(2, 0)] = r(a * w);
        m[(3, 1)] = r(h * w);
        m[(3, 2)] = r(sg * h * w);
        m
    };
    let corner = |v: f64| {
        let mut m = CMat4::zeros();
        m[(3, 0)] = r(v);
        m
    };
    let s2 = 2f64.sqrt();
    // labels: signal (n3, n4) then lost (l3, l4)
    let ops: Vec<(&str, CMat4)> = vec![
        ("n3=0,n4=0;l3=0,l4=0", no_emission(eps)),
        ("n3=0,n4=0;l3=1,l4=0", one_photon(true, (1.0 - e3).sqrt())),
        ("n3=0,n4=0;l3=0,l4=1", one_photon(false, (1.0 - e4).sqrt())),
        ("n3=0,n4=0;l3=2,l4=0", corner(eps * (1.0 - e3) / s2)),
        ("n3=0,n4=0;l3=0,l4=2", corner(-eps * (1.0 - e4) / s2)),
        ("n3=1,n4=0;l3=0,l4=0", one_photon(true, e3.sqrt())),
        (
            "n3=1,n4=0;l3=1,l4=0",
            corner(eps * (e3 * (1.0 - e3)).sqrt()),
        ),
        ("n3=0,n4=1;l3=0,l4=0", one_photon(false, e4.sqrt())),
        (
            "n3=0,n4=1;l3=0,l4=1",
            corner(-eps * (e4 * (1.0 - e4)).sqrt()),
        ),
        ("n3=2,n4=0;l3=0,l4=0", corner(eps * e3 / s2)),
        ("n3=0,n4=2;l3=0,l4=0", corner(-eps * e4 / s2)),
    ];
    let groups = PD_LABELS
        .iter()
        .map(|g| OutcomeGroup {
            label: g.to_string(),
            members: ops
                .iter()
                .enumerate()
                .filter(|(_, (l, _))| l.starts_with(&format!("{g};")))
                .map(|(i, _)| i)
                .collect(),
        })
        .collect();
    KrausSet {
        label: "inefficient_photodetection".into(),
        operators: ops.into_iter().map(|(l, m)| (l.to_string(), m)).collect(),
        groups,
        measure: Measure::Discrete,
    }
}

/// Inefficient homodyne: `M_X00, M_X10, M_X01, M_X20, M_X02` (lost-mode Fock outcomes).
pub fn inefficient_homodyne_matrices(s: &MeasurementSettings, x3: f64, x4: f64) -> [CMat4; 5] {
    let eps = s.epsilon;
    let (e3, e4) = (s.eta3, s.eta4);
    let u = expi(s.theta);
    let v = expi(s.vartheta);
    let pref = r((-(x3 * x3 + x4 * x4) / 2.0).exp() / std::f64::consts::PI.sqrt());
    let a = (eps * (1.0 - eps)).sqrt();
    let se = eps.sqrt();
    let p = u * (e3.sqrt() * x3) + v * (e4.sqrt() * x4);
    let m = u * (e3.sqrt() * x3) - v * (e4.sqrt() * x4);
    let mut m00 = no_emission(eps);
    m00[(1, 0)] = m * a;
    m00[(2, 0)] = p * a;
    m00[(3, 0)] = (u * u * (e3 * (x3 * x3 - 0.5)) - v * v * (e4 * (x4 * x4 - 0.5))) * eps;
    m00[(3, 1)] = p * se;
    m00[(3, 2)] = m * se;

    let l3 = (eps * (1.0 - eps) * (1.0 - e3) / 2.0).sqrt();
    let k3 = (eps * (1.0 - e3) / 2.0).sqrt();
    let mut m10 = CMat4::zeros();
    m10[(1, 0)] = r(l3);
    m10[(2, 0)] = r(l3);
    m10[(3, 0)] = u * (eps * x3 * (2.0 * e3 * (1.0 - e3)).sqrt());
    m10[(3, 1)] = r(k3);
    m10[(3, 2)] = r(k3);

    let l4 = (eps * (1.0 - eps) * (1.0 - e4) / 2.0).sqrt();
    let k4 = (eps * (1.0 - e4) / 2.0).sqrt();
    let mut m01 = CMat4::zeros();
    m01[(1, 0)] = r(-l4);
    m01[(2, 0)] = r(l4);
    m01[(3, 0)] = -v * (eps * x4 * (2.0 * e4 * (1.0 - e4)).sqrt());
    m01[(3, 1)] = r(k4);
    m01[(3, 2)] = r(-k4);

    let mut m20 = CMat4::zeros();
    m20[(3, 0)] = r(eps * (1.0 - e3) / 2f64.sqrt());
    let mut m02 = CMat4::zeros();
    m02[(3, 0)] = r(-eps * (1.0 - e4) / 2f64.sqrt());
    [m00 * pref, m10 * pref, m01 * pref, m20 * pref, m02 * pref]
}

pub fn inefficient_homodyne_ops(s: &MeasurementSettings, x3: f64, x4: f64) -> KrausSet {
    let labels = [
        "l3=0,l4=0",
        "l3=1,l4=0",
        "l3=0,l4=1",
        "l3=2,l4=0",
        "l3=0,l4=2",
    ];
    let ops = inefficient_homodyne_matrices(s, x3, x4);
    KrausSet {
        label: "inefficient_homodyne".into(),
        operators: labels
            .iter()
            .zip(ops)
            .map(|(l, m)| (l.to_string(), m))
            .collect(),
        groups: vec![OutcomeGroup {
            label: "lost-summed".into(),
            members: (0..5).collect(),
        }],
        measure: Measure::Continuous2D(ContinuousFamily::InefficientHomodyne(*s)),
    }
}

/// Gauss–Hermite nodes and weights for `∫ e^{-x²} f(x) dx` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Sum of `M†M` integrated over the readout space of a continuous family.
pub fn integrated_effect(family: &ContinuousFamily, order: usize) -> CMat4 {
    let (x, w) = gauss_hermite(order);
    let d = family.dims();
    let mut acc = CMat4::zeros();
    let mut idx = vec![0usize; d];
    let total = order.pow(d as u32);
    let mut pt = vec![0.0; d];
    for _ in 0..total {
        let mut weight = 1.0;
        let mut r2 = 0.0;
        for k in 0..d {
            pt[k] = x[idx[k]];
            weight *= w[idx[k]];
            r2 += pt[k] * pt[k];
        }
        // the operators carry e^{-|x|²/2}; undo the Gauss-Hermite weight
        let scale = weight * r2.exp();
        for m in family.operators_at(&pt) {
            acc += m.adjoint() * m * r(scale);
        }
        for k in 0..d {
            idx[k] += 1;
            if idx[k] < order {
                break;
            }
            idx[k] = 0;
        }
    }
    acc * r(family.measure_factor())
}

/// `‖Σ M†M - c I‖_max` with `c` fitted as the mean diagonal (`c = 1` for discrete sets).
pub fn povm_residual(set: &KrausSet, quad_order: usize) -> Result<f64, KrausError> {
    let effect = match &set.measure {
        Measure::Discrete => {
            let mut acc = CMat4::zeros();
            for (_, m) in &set.operators {
                acc += m.adjoint() * m;
            }
            return Ok(crate::state::max_abs(&(acc - CMat4::identity())));
        }
        Measure::Continuous2D(f) => {
            if quad_order < 20 {
                return Err(KrausError::QuadratureOrder(quad_order));
            }
            integrated_effect(f, quad_order)
        }
    };
    let cfit = effect.trace().re / 4.0;
    Ok(crate::state::max_abs(
        &(effect - CMat4::identity() * r(cfit)),
    ))
}

/// Like [`povm_residual`] but fails above `1e-6`.
pub fn povm_check(set: &KrausSet, quad_order: usize) -> Result<f64, KrausError> {
    let res = povm_residual(set, quad_order)?;
    if res > 1e-6 {
        return Err(KrausError::PovmFailed {
            family: set.label.clone(),
            residual: res,
        });
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entanglement::concurrence_pure;
    use crate::state::PureState;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn apply(m: &CMat4, psi: &PureState) -> PureState {
        PureState::from_vector(m * psi.amplitudes()).unwrap()
    }

    fn same_ray(a: &PureState, b: &PureState) -> bool {
        (a.amplitudes().dotc(b.amplitudes()).norm() - 1.0).abs() < 1e-12
    }

    #[test]
    fn photodetection_jumps() {
        let s = MeasurementSettings::ideal(0.005, 0.0, 0.0);
        let set = photodetection_ops(&s).unwrap();
        let m10 = set.operator(LABEL_10).unwrap();
        let m01 = set.operator(LABEL_01).unwrap();
        let m00 = set.operator(LABEL_00).unwrap();
        assert!(same_ray(
            &apply(m10, &PureState::ee()),
            &PureState::psi_plus()
        ));
        let out = apply(m01, &PureState::ee());
        assert!((out.amplitudes() + PureState::psi_minus().amplitudes()).norm() < 1e-12);
        assert_eq!(
            m00 * PureState::gg().amplitudes(),
            *PureState::gg().amplitudes()
        );
    }

    #[test]
    fn photodetection_needs_ideal() {
        let s = MeasurementSettings::ideal(0.005, 0.0, 0.0).with_efficiency(0.9, 1.0);
        assert!(matches!(
            photodetection_ops(&s),
            Err(KrausError::NeedsInefficient(..))
        ));
    }

    #[test]
    fn photodetection_complete() {
        for eps in [1e-4, 0.002, 0.005, 0.01] {
            let set = photodetection_ops(&MeasurementSettings::ideal(eps, 0.3, 1.1)).unwrap();
            assert!(povm_residual(&set, 0).unwrap() < 1e-14);
        }
    }

    #[test]
    fn homodyne_gg_element_at_origin() {
        let eps = 0.01;
        let s = MeasurementSettings::ideal(eps, 0.0, FRAC_PI_2);
        let m = homodyne_op(&s, 0.0, 0.0) * r(std::f64::consts::PI.sqrt());
        assert_abs_diff_eq!(m[(3, 0)].re, -eps, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(3, 0)].im, 0.0, epsilon = 1e-15);
        let s = MeasurementSettings::ideal(eps, 0.4, 0.4);
        let m = homodyne_op(&s, 0.0, 0.0);
        for (i, j) in [(1, 0), (2, 0), (3, 1), (3, 2)] {
            assert_eq!(m[(i, j)].norm(), 0.0);
        }
    }

    #[test]
    fn homodyne_one_step_independent_of_record() {
        // 2|ad - bc| of the unnormalized state, Gaussian prefactor removed
        let eps = 0.01;
        for (th, vt) in [(0.0, FRAC_PI_2), (0.3, 1.1), (0.5, 0.5)] {
            let s = MeasurementSettings::ideal(eps, th, vt);
            let want = eps * (1.0 - eps) * (expi(2.0 * vt) - expi(2.0 * th)).norm();
            for (x3, x4) in [(0.0, 0.0), (1.5, 0.2), (-2.0, 2.0), (0.7, 0.7)] {
                let pref = (-(x3 * x3 + x4 * x4) / 2.0f64).exp() / std::f64::consts::PI.sqrt();
                let v = homodyne_op(&s, x3, x4) * PureState::ee().amplitudes() / r(pref);
                let cc = 2.0 * (v[0] * v[3] - v[1] * v[2]).norm();
                assert_abs_diff_eq!(cc, want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn heterodyne_zero_readout_is_diagonal() {
        let s = MeasurementSettings::ideal(0.01, 0.7, -0.2);
        let m = heterodyne_op(&s, r(0.0), r(0.0));
        assert_eq!(m, no_emission(0.01));
    }

    #[test]
    fn heterodyne_one_step_separable() {
        let s = MeasurementSettings::ideal(0.01, 0.3, 1.9);
        for (a, b) in [(c(0.3, -0.1), c(1.0, 0.5)), (c(-2.0, 0.0), c(0.0, 0.1))] {
            let cc = concurrence_pure(&apply(&heterodyne_op(&s, a, b), &PureState::ee()));
            assert!(cc < 1e-14, "{cc}");
        }
    }

    #[test]
    fn mixed_operators() {
        let s = MeasurementSettings::ideal(0.01, 0.0, 0.0);
        let alpha = c(0.4, -0.3);
        let [m0, m1, m2] = mixed_het_pd_matrices(&s, alpha);
        let psi = PureState::psi_plus();
        assert!((m1 * psi.amplitudes()).norm() < 1e-16);
        let out = m2 * PureState::ee().amplitudes();
        let want = -0.01 * 2f64.sqrt() / 2.0 * (-alpha.norm_sqr() / 2.0).exp();
        assert_abs_diff_eq!(out[3].re, want, epsilon = 1e-16);
        let m0z = mixed_het_pd_matrices(&s, r(0.0))[0];
        assert_eq!(m0z, no_emission(0.01));
        assert!(m0[(1, 0)].norm() > 0.0);
        let bad = MeasurementSettings::ideal(0.01, 0.1, 0.0);
        assert!(mixed_het_pd_ops(&bad, alpha).is_err());
    }

    #[test]
    fn inefficient_pd_limits_and_completeness() {
        let s = MeasurementSettings::ideal(0.004, 0.0, 0.0);
        let set = inefficient_photodetection_ops(&s);
        let sizes: Vec<usize> = set.groups.iter().map(|g| g.members.len()).collect();
        assert_eq!(sizes, vec![5, 2, 2, 1, 1]);
        let ideal = photodetection_matrices(0.004);
        for (g, want) in set.groups.iter().zip(ideal.iter()) {
            assert!((set.operators[g.members[0]].1 - want).norm() < 1e-16);
            for &k in &g.members[1..] {
                assert!(set.operators[k].1.norm() < 1e-16);
            }
        }
        for (e3, e4) in [(0.9, 0.9), (0.3, 0.75), (0.0, 0.0), (1.0, 0.5)] {
            let set = inefficient_photodetection_ops(&s.with_efficiency(e3, e4));
            assert!(povm_residual(&set, 0).unwrap() < 1e-12);
        }
    }

    #[test]
    fn inefficient_homodyne_limit() {
        let s = MeasurementSettings::ideal(0.005, 0.2, 1.3);
        let ops = inefficient_homodyne_matrices(&s, 0.4, -0.9);
        assert!((ops[0] - homodyne_op(&s, 0.4, -0.9)).norm() < 1e-16);
        for m in &ops[1..] {
            assert!(m.norm() < 1e-16);
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(40);
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        let sp = std::f64::consts::PI.sqrt();
        assert_abs_diff_eq!(m0, sp, epsilon = 1e-13);
        assert_abs_diff_eq!(m2, sp / 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(m4, 3.0 * sp / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn continuous_families_complete() {
        let s = MeasurementSettings::ideal(0.005, 0.3, 1.7);
        let fams = [
            ContinuousFamily::Homodyne(s),
            ContinuousFamily::InefficientHomodyne(s.with_efficiency(0.6, 0.85)),
            ContinuousFamily::MixedHetPd(MeasurementSettings::ideal(0.005, 0.0, 0.0)),
        ];
        for f in fams {
            let set = KrausSet::continuous("f", f);
            let res = povm_check(&set, 40).unwrap();
            assert!(res < 1e-8, "{f:?}: {res}");
            let e = integrated_effect(&f, 40);
            assert_abs_diff_eq!(e.trace().re, 4.0, epsilon = 1e-10);
        }
        assert!(matches!(
            povm_residual(
                &KrausSet::continuous("h", ContinuousFamily::Homodyne(s)),
                10
            ),
            Err(KrausError::QuadratureOrder(10))
        ));
    }

    #[test]
    fn heterodyne_complete() {
        let s = MeasurementSettings::ideal(0.005, 0.3, 1.7);
        let set = KrausSet::continuous("het", ContinuousFamily::Heterodyne(s));
        assert!(povm_residual(&set, 20).unwrap() < 1e-8);
    }

    #[test]
    fn corrupted_set_fails() {
        let mut set = photodetection_ops(&MeasurementSettings::ideal(0.005, 0.0, 0.0)).unwrap();
        set.operators[0].1[(0, 0)] *= r(1.01);
        assert!(povm_residual(&set, 0).unwrap() > 1e-3);
        assert!(matches!(
            povm_check(&set, 0),
            Err(KrausError::PovmFailed { .. })
        ));
    }
}
