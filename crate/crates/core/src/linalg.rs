//! Small dense linear algebra helpers shared by the solver modules.
//!
//! Systems here have at most four equations, so everything is sized for
//! tiny dense matrices: closed-form eigenvalues for `n ≤ 2`, a capped QR
//! iteration (real Schur form) for `n ∈ {3, 4}`, and inverse iteration for
//! eigenvectors.  Eigenvectors are returned unit length with a fixed,
//! deterministic orientation so downstream curve continuations never see a
//! sign flip between two calls at nearby states.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

/// Iteration cap of the QR (Francis) eigenvalue fallback for `n ≥ 3`.
pub const MAX_QR_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    /// A matrix expected to have a real spectrum has a conjugate pair.
    #[error("complex eigenvalue pair detected (max |Im| = {max_imag:.3e})")]
    ComplexEigenvalues { max_imag: f64 },
    /// The QR iteration did not converge within [`MAX_QR_ITER`] sweeps.
    #[error("eigenvalue iteration failed to converge")]
    IterationLimit,
    /// A linear solve met a numerically singular matrix.
    #[error("singular matrix in linear solve")]
    SingularMatrix,
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    a.clone().lu().solve(b).ok_or(LinalgError::SingularMatrix)
}

/// Inverse of a small matrix.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    a.clone().try_inverse().ok_or(LinalgError::SingularMatrix)
}

/// Eigenvalues of a general real matrix, possibly complex.
pub fn complex_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, LinalgError> {
    let n = a.nrows();
    match n {
        1 => Ok(vec![Complex::new(a[(0, 0)], 0.0)]),
        2 => {
            let (tr, det) = (a[(0, 0)] + a[(1, 1)], a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]);
            let mid = 0.5 * tr;
            let disc = mid * mid - det;
            if disc >= 0.0 {
                let r = disc.sqrt();
                Ok(vec![Complex::new(mid - r, 0.0), Complex::new(mid + r, 0.0)])
            } else {
                let r = (-disc).sqrt();
                Ok(vec![Complex::new(mid, -r), Complex::new(mid, r)])
            }
        }
        _ => {
            let schur = nalgebra::linalg::Schur::try_new(a.clone(), 1e-14, MAX_QR_ITER)
                .ok_or(LinalgError::IterationLimit)?;
            let mut vals: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
            vals.sort_by(|x, y| {
                x.re.partial_cmp(&y.re).unwrap().then(x.im.partial_cmp(&y.im).unwrap())
            });
            Ok(vals)
        }
    }
}

/// Real eigenvalues of `a`, sorted ascending.
///
/// Fails with [`LinalgError::ComplexEigenvalues`] if any eigenvalue has an
/// imaginary part exceeding `tol_imag · max(1, ‖a‖)`.
pub fn real_eigenvalues(a: &DMatrix<f64>, tol_imag: f64) -> Result<Vec<f64>, LinalgError> {
    let scale = a.norm().max(1.0);
    let vals = complex_eigenvalues(a)?;
    let max_imag = vals.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_imag > tol_imag * scale {
        return Err(LinalgError::ComplexEigenvalues { max_imag });
    }
    let mut re: Vec<f64> = vals.iter().map(|z| z.re).collect();
    re.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(re)
}

/// Unit right eigenvector for the (simple, real) eigenvalue `lambda`.
///
/// Inverse iteration on a slightly shifted matrix from a deterministic
/// start vector; the shift keeps the solve well-posed while the eigenvalue
/// direction still dominates after a few sweeps.
pub fn right_eigenvector(
    a: &DMatrix<f64>,
    lambda: f64,
    tol_residual: f64,
) -> Result<DVector<f64>, LinalgError> {
    let n = a.nrows();
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let scale = a.norm().max(1.0);
    let mut shift = 1e-11 * scale;
    'attempt: for _ in 0..6 {
        let shifted = a - DMatrix::identity(n, n) * (lambda + shift);
        let lu = shifted.full_piv_lu();
        // Deterministic start: skewed weights avoid accidental orthogonality
        // to the target direction for the bundled systems.
        let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.31 * i as f64);
        v /= v.norm();
        for _ in 0..8 {
            let Some(next) = lu.solve(&v) else {
                shift *= 10.0;
                continue 'attempt;
            };
            let norm = next.norm();
            if !norm.is_finite() || norm == 0.0 {
                shift *= 10.0;
                continue 'attempt;
            }
            v = next / norm;
            let residual = (a * &v - &v * lambda).norm();
            if residual <= tol_residual * scale {
                return Ok(orient(polish_eigenvector(a, lambda, v, scale)));
            }
        }
        shift *= 10.0;
    }
    Err(LinalgError::IterationLimit)
}

/// Two extra inverse-iteration sweeps with a near-zero shift.
///
/// The main loop stops at `tol_residual`, which leaves a contamination of
/// the order of its working shift; driving the shift to the round-off
/// floor removes it.  Keeps the best iterate in case the nearly singular
/// solve misbehaves.
fn polish_eigenvector(
    a: &DMatrix<f64>,
    lambda: f64,
    mut v: DVector<f64>,
    scale: f64,
) -> DVector<f64> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * (lambda + 1e-14 * scale);
    let lu = shifted.full_piv_lu();
    let mut best = v.clone();
    let mut best_res = (a * &v - &v * lambda).norm();
    for _ in 0..2 {
        let Some(next) = lu.solve(&v) else { break };
        let norm = next.norm();
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        v = next / norm;
        let res = (a * &v - &v * lambda).norm();
        if res < best_res {
            best_res = res;
            best = v.clone();
        }
    }
    best
}

/// Fixes the sign of a unit vector deterministically: the component of
/// largest magnitude (ties broken by the lowest index) is made nonnegative.
pub fn orient(mut v: DVector<f64>) -> DVector<f64> {
    let mut idx = 0;
    let mut best = v[0].abs();
    for i in 1..v.len() {
        if v[i].abs() > best {
            best = v[i].abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.neg_mut();
    }
    v
}

/// Symmetric part `(M + Mᵀ)/2`.
pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = nalgebra::linalg::SymmetricEigen::new(symmetric_part(m));
    sym.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Central finite-difference Jacobian of `f` at `u` with step `h` per
/// component (scaled by `max(1, |u_j|)`).
pub fn fd_jacobian(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = u.len();
    let m = f(u).len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let hj = h * u[j].abs().max(1.0);
        let mut up = u.clone();
        let mut dn = u.clone();
        up[j] += hj;
        dn[j] -= hj;
        let col = (f(&up) - f(&dn)) / (2.0 * hj);
        jac.set_column(j, &col);
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat())
    }

    #[test]
    fn eigen_of_diagonal_matrix() {
        let a = mat(&[&[-1.0, 0.0], &[0.0, 1.0]]);
        let vals = real_eigenvalues(&a, 1e-12).unwrap();
        assert_eq!(vals, vec![-1.0, 1.0]);
        let v = right_eigenvector(&a, 1.0, 1e-12).unwrap();
        assert!((v[0].abs()) < 1e-10 && (v[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn complex_pair_is_reported() {
        let a = mat(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let err = real_eigenvalues(&a, 1e-12).unwrap_err();
        assert!(matches!(err, LinalgError::ComplexEigenvalues { .. }));
    }

    #[test]
    fn qr_path_handles_three_by_three() {
        // Companion-style matrix with eigenvalues 1, 2, 3.
        let a = mat(&[&[0.0, 0.0, 6.0], &[1.0, 0.0, -11.0], &[0.0, 1.0, 6.0]]);
        let vals = real_eigenvalues(&a, 1e-8).unwrap();
        for (got, want) in vals.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        for &l in &vals {
            let v = right_eigenvector(&a, l, 1e-9).unwrap();
            assert!((&a * &v - &v * l).norm() < 1e-8);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orientation_is_deterministic_and_flips_negative_leaders() {
        let v = orient(DVector::from_vec(vec![0.3, -0.9, 0.1]));
        assert!(v[1] > 0.0);
        // Tie on magnitude: lowest index wins.
        let w = orient(DVector::from_vec(vec![-0.5, 0.5]));
        assert!(w[0] > 0.0);
    }

    #[test]
    fn min_symmetric_eigenvalue_of_indefinite_matrix() {
        let m = mat(&[&[2.0, 1.0], &[1.0, 2.0]]);
        assert!((min_symmetric_eigenvalue(&m) - 1.0).abs() < 1e-12);
        let neg = mat(&[&[-1.0, 0.0], &[0.0, 3.0]]);
        assert!((min_symmetric_eigenvalue(&neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn fd_jacobian_matches_analytic_on_quadratic_map() {
        let f = |u: &DVector<f64>| {
            DVector::from_vec(vec![u[0] * u[0] + u[1], u[0] * u[1]])
        };
        let u = DVector::from_vec(vec![0.7, -0.3]);
        let jac = fd_jacobian(&f, &u, 1e-6);
        let exact = mat(&[&[1.4, 1.0], &[-0.3, 0.7]]);
        assert!((jac - exact).norm() < 1e-8);
    }
}
