//! Small dense complex linear-algebra helpers.
//!
//! Density operators are column-vectorized: entry `rho[(i, j)]` lives at
//! index `i + d * j`. With that convention `vec(X rho Y) = (Y^T kron X) vec(rho)`.

use nalgebra::DMatrix;

use crate::{CMatrix, CVector, C64};

pub(crate) fn vectorize(m: &CMatrix) -> CVector {
    let d = m.nrows();
    CVector::from_iterator(d * m.ncols(), m.iter().copied())
}

pub(crate) fn unvectorize(v: &CVector, d: usize) -> CMatrix {
    CMatrix::from_iterator(d, d, v.iter().copied())
}

/// Superoperator of `rho -> U rho U^dagger`.
pub(crate) fn conjugation(u: &CMatrix) -> CMatrix {
    u.map(|z| z.conj()).kronecker(u)
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub(crate) fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().copied().sum()
}

/// `Tr[E rho]` for an operator `E` and a vectorized `rho`.
pub(crate) fn expectation(effect: &CMatrix, rho_vec: &CVector) -> f64 {
    let d = effect.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..d {
        for i in 0..d {
            acc += effect[(j, i)] * rho_vec[i + d * j];
        }
    }
    acc.re
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub(crate) fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(h);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

/// Principal fractional power of a unitary matrix, computed from a complex
/// Schur decomposition (diagonal for normal matrices).
pub(crate) fn unitary_power(u: &CMatrix, eps: f64) -> CMatrix {
    let schur = nalgebra::Schur::new(u.clone());
    let (q, t) = schur.unpack();
    let d = u.nrows();
    let mut diag = CMatrix::zeros(d, d);
    for k in 0..d {
        let lambda = t[(k, k)];
        let theta = lambda.arg();
        diag[(k, k)] = C64::from_polar(lambda.norm().powf(eps), eps * theta);
    }
    &q * diag * q.adjoint()
}

/// Real-valued `DMatrix` from a complex one, for places that only need norms.
#[allow(dead_code)]
pub(crate) fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Build a square complex matrix from row-major entries.
pub(crate) fn from_rows(d: usize, entries: &[C64]) -> CMatrix {
    CMatrix::from_row_slice(d, d, entries)
}
