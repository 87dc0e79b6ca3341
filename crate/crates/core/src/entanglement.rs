//! Concurrence and Bell-state utilities.

use nalgebra::Matrix2;

use crate::error::EntanglementError;
use crate::state::{r, BellAmplitudes, CMat4, PureState, TwoQubitState, C64};

/// `σ_y ⊗ σ_y` in the `{ee, eg, ge, gg}` basis (real).
fn sigma_yy() -> CMat4 {
    let mut y = CMat4::zeros();
    y[(0, 3)] = r(-1.0);
    y[(1, 2)] = r(1.0);
    y[(2, 1)] = r(1.0);
    y[(3, 0)] = r(-1.0);
    y
}

/// Spin-flipped state `(σ_y⊗σ_y) ρ* (σ_y⊗σ_y)`.
pub fn spin_flip(rho: &CMat4) -> CMat4 {
    let y = sigma_yy();
    y * rho.conjugate() * y
}

/// Square roots of the eigenvalues of `ρ ρ̃`, sorted descending.
///
/// Computed as the singular values of `Wᵀ(σ_y⊗σ_y)W` with `ρ = WW†` from the
/// eigendecomposition of `ρ`; this avoids the square root of round-off that the
/// product form suffers on rank-deficient states.
pub fn concurrence_lambdas(state: &TwoQubitState) -> Result<[f64; 4], EntanglementError> {
    let rho = state.rho();
    let eig = rho.symmetric_eigen();
    let mut w = eig.eigenvectors;
    for k in 0..4 {
        let s = eig.eigenvalues[k].max(0.0).sqrt();
        for i in 0..4 {
            w[(i, k)] *= s;
        }
    }
    let tau = w.transpose() * sigma_yy() * w;
    let sv = tau
        .try_svd(false, false, 1e-15, 10_000)
        .ok_or_else(|| EntanglementError::NoConvergence(format!("{rho:?}")))?
        .singular_values;
    let mut l = [sv[0], sv[1], sv[2], sv[3]];
    l.sort_by(|a, b| b.total_cmp(a));
    Ok(l)
}

/// Wootters concurrence from the eigenvalues of the non-Hermitian product.
pub fn concurrence_mixed(state: &TwoQubitState) -> Result<f64, EntanglementError> {
    let l = concurrence_lambdas(state)?;
    Ok((l[0] - l[1] - l[2] - l[3]).clamp(0.0, 1.0))
}

/// `2|ad - bc|`.
pub fn concurrence_pure(psi: &PureState) -> f64 {
    (2.0 * (psi.a() * psi.d() - psi.b() * psi.c()).norm()).min(1.0)
}

/// `|A² - B² - C² + D²|`.
pub fn concurrence_bell(bell: &BellAmplitudes) -> f64 {
    (bell.a * bell.a - bell.b * bell.b - bell.c * bell.c + bell.d * bell.d)
        .norm()
        .min(1.0)
}

/// Single-qubit unitary on qubit B taking `B|Φ-> + C|Ψ+> + iE|Ψ->` to `|Φ->`.
pub fn disentangling_local_unitary(
    bell: &BellAmplitudes,
) -> Result<Matrix2<C64>, EntanglementError> {
    const TOL: f64 = 1e-10;
    let real = bell.b.im.abs() < TOL && bell.c.im.abs() < TOL && bell.d.re.abs() < TOL;
    if bell.a.norm() > TOL || !real || (bell.norm_squared() - 1.0).abs() > 1e-9 {
        return Err(EntanglementError::Domain(format!("{bell:?}")));
    }
    let (b, cc, e) = (bell.b.re, bell.c.re, bell.e());
    Ok(Matrix2::new(
        r(b),
        C64::new(cc, -e),
        C64::new(-cc, -e),
        r(b),
    ))
}

/// Applies `I ⊗ U` to a pure state.
pub fn apply_on_b(psi: &PureState, u: &Matrix2<C64>) -> PureState {
    let v = psi.amplitudes();
    let mut out = *v;
    for qa in 0..2 {
        for qb in 0..2 {
            out[2 * qa + qb] = u[(qb, 0)] * v[2 * qa] + u[(qb, 1)] * v[2 * qa + 1];
        }
    }
    PureState::from_vector(out).expect("unitary preserves the norm")
}

/// Applies `U_A ⊗ U_B` to a density matrix.
pub fn apply_local(rho: &CMat4, ua: &Matrix2<C64>, ub: &Matrix2<C64>) -> CMat4 {
    let u = ua.kronecker(ub);
    u * rho * u.adjoint()
}

/// Output of [`factored_concurrence`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factored {
    pub concurrence: f64,
    /// Numerical rank found by the pivoted factorization.
    pub rank: usize,
    /// Frobenius norm of the unfactored remainder; bounds how far the smallest
    /// eigenvalue can sit below zero.
    pub residual: f64,
}

/// Concurrence via a pivoted Cholesky factor `ρ = W W†`.
///
/// The square roots of the eigenvalues of `ρ ρ̃` are the singular values of
/// `τ = Wᵀ (σ_y⊗σ_y) W`, which is at most rank × rank. Rank one and two have closed
/// forms, so pure and rank-two states avoid any eigen-solver.
pub fn factored_concurrence(rho: &CMat4) -> Factored {
    let scale = (0..4).map(|k| rho[(k, k)].re).sum::<f64>().max(1e-300);
    let tol = 1e-13 * scale;
    let mut a = *rho;
    let mut w = [[C64::new(0.0, 0.0); 4]; 4];
    let mut used = [false; 4];
    let mut k = 0;
    while k < 4 {
        let mut p = usize::MAX;
        let mut best = tol;
        for i in 0..4 {
            if !used[i] && a[(i, i)].re > best {
                best = a[(i, i)].re;
                p = i;
            }
        }
        if p == usize::MAX {
            break;
        }
        let inv = 1.0 / best.sqrt();
        let mut col = [C64::new(0.0, 0.0); 4];
        for i in 0..4 {
            if !used[i] {
                col[i] = a[(i, p)] * inv;
            }
        }
        for i in 0..4 {
            if used[i] {
                continue;
            }
            for j in 0..4 {
                if !used[j] {
                    a[(i, j)] -= col[i] * col[j].conj();
                }
            }
        }
        used[p] = true;
        w[k] = col;
        k += 1;
    }
    let mut residual = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            if !used[i] && !used[j] {
                residual += a[(i, j)].norm_sqr();
            }
        }
    }
    let residual = residual.sqrt();

    // τ_mn = w_mᵀ Y w_n with Y = σ_y⊗σ_y
    let yy = |u: &[C64; 4], v: &[C64; 4]| -> C64 {
        -(u[0] * v[3] + u[3] * v[0]) + u[1] * v[2] + u[2] * v[1]
    };
    let concurrence = match k {
        0 => 0.0,
        1 => yy(&w[0], &w[0]).norm() / scale,
        2 => {
            let t00 = yy(&w[0], &w[0]);
            let t01 = yy(&w[0], &w[1]);
            let t11 = yy(&w[1], &w[1]);
            let fro = t00.norm_sqr() + 2.0 * t01.norm_sqr() + t11.norm_sqr();
            let det = (t00 * t11 - t01 * t01).norm();
            (fro - 2.0 * det).max(0.0).sqrt() / scale
        }
        _ => {
            let mut t = CMat4::zeros();
            for m in 0..k {
                for n in m..k {
                    let z = yy(&w[m], &w[n]);
                    t[(m, n)] = z;
                    t[(n, m)] = z;
                }
            }
            let h = t.adjoint() * t;
            // exact zero test: s1 - s2 - s3 - s4 <= x - sqrt(F² - x²) for any x >= s1,
            // with x from the Gershgorin bound on τ†τ
            let fro2: f64 = (0..4).map(|i| h[(i, i)].re).sum();
            let row = (0..4)
                .map(|i| (0..4).map(|j| h[(i, j)].norm()).sum::<f64>())
                .fold(0.0, f64::max);
            let x = row.min(fro2).sqrt();
            if x - (fro2 - x * x).max(0.0).sqrt() <= 0.0 {
                return Factored {
                    concurrence: 0.0,
                    rank: k,
                    residual,
                };
            }
            let mut ev: Vec<f64> = h
                .symmetric_eigenvalues()
                .iter()
                .map(|x| x.max(0.0).sqrt())
                .collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            (ev[0] - ev[1] - ev[2] - ev[3]).max(0.0) / scale
        }
    };
    Factored {
        concurrence: concurrence.min(1.0),
        rank: k,
        residual,
    }
}
