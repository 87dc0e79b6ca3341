//! Two-qubit state representations.
//!
//! Basis ordering is fixed everywhere as `{|ee>, |eg>, |ge>, |gg>}` (indices 0..4),
//! with qubit A the left factor and qubit B the right factor.

use std::sync::OnceLock;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::StateError;

pub type C64 = Complex64;
pub type CMat4 = Matrix4<C64>;
pub type CVec4 = Vector4<C64>;

pub const EE: usize = 0;
pub const EG: usize = 1;
pub const GE: usize = 2;
pub const GG: usize = 3;

const NORM_TOL: f64 = 1e-12;
/// Most negative eigenvalue tolerated before a state is flagged.
pub const PSD_TOL: f64 = 1e-9;

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub(crate) fn r(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Normalized pure state with amplitudes `(a, b, c, d)` on `|ee>, |eg>, |ge>, |gg>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureState {
    amp: CVec4,
}

impl PureState {
    /// Builds a state and normalizes it. Fails on a zero vector.
    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Result<Self, StateError> {
        Self::from_vector(CVec4::new(a, b, c, d))
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Result<Self, StateError> {
        Self::new(r(a), r(b), r(c), r(d))
    }

    pub fn from_vector(v: CVec4) -> Result<Self, StateError> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(StateError::Normalization(n));
        }
        Ok(PureState { amp: v / r(n) })
    }

    /// Accepts a vector that must already be normalized.
    pub fn normalized(v: CVec4) -> Result<Self, StateError> {
        let n2 = v.norm_squared();
        if (n2 - 1.0).abs() > NORM_TOL {
            return Err(StateError::Normalization(n2.sqrt()));
        }
        Ok(PureState { amp: v })
    }

    pub fn amplitudes(&self) -> &CVec4 {
        &self.amp
    }

    pub fn a(&self) -> C64 {
        self.amp[EE]
    }
    pub fn b(&self) -> C64 {
        self.amp[EG]
    }
    pub fn c(&self) -> C64 {
        self.amp[GE]
    }
    pub fn d(&self) -> C64 {
        self.amp[GG]
    }

    pub fn ee() -> Self {
        basis(EE)
    }
    pub fn eg() -> Self {
        basis(EG)
    }
    pub fn ge() -> Self {
        basis(GE)
    }
    pub fn gg() -> Self {
        basis(GG)
    }
    pub fn phi_plus() -> Self {
        Self::from_real(1.0, 0.0, 0.0, 1.0).unwrap()
    }
    pub fn phi_minus() -> Self {
        Self::from_real(1.0, 0.0, 0.0, -1.0).unwrap()
    }
    pub fn psi_plus() -> Self {
        Self::from_real(0.0, 1.0, 1.0, 0.0).unwrap()
    }
    pub fn psi_minus() -> Self {
        Self::from_real(0.0, 1.0, -1.0, 0.0).unwrap()
    }

    /// Product state `(x_a|e> + y_a|g>) ⊗ (x_b|e> + y_b|g>)`.
    pub fn product(qa: [C64; 2], qb: [C64; 2]) -> Result<Self, StateError> {
        Self::new(qa[0] * qb[0], qa[0] * qb[1], qa[1] * qb[0], qa[1] * qb[1])
    }
}

fn basis(i: usize) -> PureState {
    let mut v = CVec4::zeros();
    v[i] = r(1.0);
    PureState { amp: v }
}

/// Density matrix of the two-qubit system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoQubitState {
    rho: CMat4,
}

impl TwoQubitState {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(rho: CMat4) -> Result<Self, StateError> {
        let herm = max_abs(&(rho - rho.adjoint()));
        if herm > 1e-12 {
            return Err(StateError::NotHermitian(herm));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(StateError::Trace(tr.re));
        }
        let min = min_eigenvalue(&rho);
        if min < -PSD_TOL {
            return Err(StateError::NotPositive(min));
        }
        Ok(TwoQubitState { rho })
    }

    /// Wraps a matrix without checks. Callers must guarantee the invariants.
    pub fn new_unchecked(rho: CMat4) -> Self {
        TwoQubitState { rho }
    }

    pub fn rho(&self) -> &CMat4 {
        &self.rho
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitState {
            rho: CMat4::identity() * r(0.25),
        }
    }

    /// Population of `|e>` for qubit A.
    pub fn excited_a(&self) -> f64 {
        self.rho[(EE, EE)].re + self.rho[(EG, EG)].re
    }

    /// Population of `|e>` for qubit B.
    pub fn excited_b(&self) -> f64 {
        self.rho[(EE, EE)].re + self.rho[(GE, GE)].re
    }

    /// Recovers a state vector when the density matrix is pure within `tol`.
    /// The global phase makes the `|ee>` amplitude real and nonnegative
    /// whenever it is nonzero.
    pub fn pure_state(&self, tol: f64) -> Option<PureState> {
        if purity(self) < 1.0 - tol {
            return None;
        }
        let rho = &self.rho;
        let mut j = EE;
        if rho[(EE, EE)].re < 1e-6 {
            for k in 1..4 {
                if rho[(k, k)].re > rho[(j, j)].re {
                    j = k;
                }
            }
        }
        let s = rho[(j, j)].re.sqrt();
        PureState::from_vector(rho.column(j).into_owned() / r(s)).ok()
    }
}

/// 15 generalized Bloch coordinates `q_i = tr(Γ_i ρ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochVector15 {
    pub q: [f64; 15],
}

impl BlochVector15 {
    pub fn zeros() -> Self {
        BlochVector15 { q: [0.0; 15] }
    }

    /// Coordinate `q_i` with the 1-based index used in the formulas.
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.q[i - 1]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        self.q[i - 1] = v;
    }

    /// Population of `|ee>`.
    pub fn q_a(&self) -> f64 {
        0.25 + self.get(1) / 2f64.sqrt() + self.get(2) / 6f64.sqrt() + self.get(3) / 12f64.sqrt()
    }

    /// Population of `|eg>` (and `|ge>` on the symmetric manifold).
    pub fn q_b(&self) -> f64 {
        0.25 + self.get(2) / 6f64.sqrt() + self.get(3) / 12f64.sqrt() - self.get(1) / 2f64.sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.q.iter().map(|x| x * x).sum()
    }
}

/// Amplitudes on `|Φ+>, |Φ->, |Ψ+>, |Ψ->`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BellAmplitudes {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl BellAmplitudes {
    /// Real form `B|Φ-> + C|Ψ+> + iE|Ψ->`.
    pub fn from_bce(b: f64, c: f64, e: f64) -> Self {
        BellAmplitudes {
            a: r(0.0),
            b: r(b),
            c: r(c),
            d: C64::new(0.0, e),
        }
    }

    /// `E` with `D = iE`.
    pub fn e(&self) -> f64 {
        self.d.im
    }

    pub fn norm_squared(&self) -> f64 {
        self.a.norm_sqr() + self.b.norm_sqr() + self.c.norm_sqr() + self.d.norm_sqr()
    }

    pub fn to_vector(&self) -> CVec4 {
        CVec4::new(self.a, self.b, self.c, self.d)
    }
}

/// Index pairs carried by the symmetric (Γ4..Γ9) and antisymmetric (Γ10..Γ15) matrices.
pub const GM_PAIRS: [(usize, usize); 6] = [(1, 2), (0, 1), (0, 2), (0, 3), (1, 3), (2, 3)];

/// The 15 generalized Gell-Mann matrices normalized to `tr(Γ_i Γ_j) = δ_ij`.
pub fn gell_mann() -> &'static [CMat4; 15] {
    static GM: OnceLock<[CMat4; 15]> = OnceLock::new();
    GM.get_or_init(|| {
        let mut g = [CMat4::zeros(); 15];
        let s2 = 2f64.sqrt();
        let d1 = [1.0, -1.0, 0.0, 0.0];
        let d2 = [1.0, 1.0, -2.0, 0.0];
        let d3 = [1.0, 1.0, 1.0, -3.0];
        for k in 0..4 {
            g[0][(k, k)] = r(d1[k] / s2);
            g[1][(k, k)] = r(d2[k] / 6f64.sqrt());
            g[2][(k, k)] = r(d3[k] / 12f64.sqrt());
        }
        for (n, &(i, j)) in GM_PAIRS.iter().enumerate() {
            g[3 + n][(i, j)] = r(1.0 / s2);
            g[3 + n][(j, i)] = r(1.0 / s2);
            g[9 + n][(i, j)] = c(0.0, -1.0 / s2);
            g[9 + n][(j, i)] = c(0.0, 1.0 / s2);
        }
        g
    })
}

/// Fixed unitary taking computational amplitudes to Bell amplitudes.
pub fn bell_unitary() -> CMat4 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    CMat4::new(
        r(h),
        r(0.0),
        r(0.0),
        r(h),
        r(h),
        r(0.0),
        r(0.0),
        r(-h),
        r(0.0),
        r(h),
        r(h),
        r(0.0),
        r(0.0),
        r(h),
        r(-h),
        r(0.0),
    )
}

pub fn density_from_pure(psi: &PureState) -> TwoQubitState {
    let v = psi.amplitudes();
    TwoQubitState {
        rho: v * v.adjoint(),
    }
}

pub fn bloch_from_density(state: &TwoQubitState) -> BlochVector15 {
    let rho = state.rho();
    let s2 = 2f64.sqrt();
    let mut q = [0.0; 15];
    let p: [f64; 4] = std::array::from_fn(|k| rho[(k, k)].re);
    q[0] = (p[0] - p[1]) / s2;
    q[1] = (p[0] + p[1] - 2.0 * p[2]) / 6f64.sqrt();
    q[2] = (p[0] + p[1] + p[2] - 3.0 * p[3]) / 12f64.sqrt();
    for (n, &(i, j)) in GM_PAIRS.iter().enumerate() {
        // tr(Γ ρ) for the symmetric and antisymmetric pair (i, j)
        let z = rho[(i, j)];
        q[3 + n] = s2 * z.re;
        q[9 + n] = -s2 * z.im;
    }
    BlochVector15 { q }
}

/// Builds `I/4 + Σ q_i Γ_i`, flagging coordinates that give a nonphysical matrix.
pub fn density_from_bloch(q: &BlochVector15) -> Result<TwoQubitState, StateError> {
    let rho = density_from_bloch_unchecked(q);
    let min = min_eigenvalue(&rho);
    if min < -PSD_TOL {
        return Err(StateError::NotPositive(min));
    }
    Ok(TwoQubitState { rho })
}

pub fn density_from_bloch_unchecked(q: &BlochVector15) -> CMat4 {
    let g = gell_mann();
    let mut rho = CMat4::identity() * r(0.25);
    for (qi, gi) in q.q.iter().zip(g.iter()) {
        rho += gi * r(*qi);
    }
    rho
}

pub fn bell_from_computational(psi: &PureState) -> BellAmplitudes {
    let v = bell_unitary() * psi.amplitudes();
    BellAmplitudes {
        a: v[0],
        b: v[1],
        c: v[2],
        d: v[3],
    }
}

pub fn computational_from_bell(bell: &BellAmplitudes) -> CVec4 {
    bell_unitary().adjoint() * bell.to_vector()
}

/// `tr(ρ²)`.
pub fn purity(state: &TwoQubitState) -> f64 {
    state.rho().iter().map(|z| z.norm_sqr()).sum()
}

/// Re-Hermitizes and renormalizes the trace in place. Returns the trace before
/// renormalization.
#[inline]
pub fn hermitize_normalize(rho: &mut CMat4) -> f64 {
    let tr: f64 = (0..4).map(|k| rho[(k, k)].re).sum();
    let inv = 1.0 / tr;
    for i in 0..4 {
        rho[(i, i)] = r(rho[(i, i)].re * inv);
        for j in (i + 1)..4 {
            let z = (rho[(i, j)] + rho[(j, i)].conj()) * (0.5 * inv);
            rho[(i, j)] = z;
            rho[(j, i)] = z.conj();
        }
    }
    tr
}

pub fn max_abs(m: &CMat4) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: &CMat4) -> f64 {
    let h = (m + m.adjoint()) * r(0.5);
    h.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
