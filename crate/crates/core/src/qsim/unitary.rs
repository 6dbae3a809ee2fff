use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{validation, Result};
use crate::linalg::{self, c};
use crate::{CMatrix, C64};

const UNITARITY_TOL: f64 = 1e-12;
const PHASE_ENTRY_TOL: f64 = 1e-9;

/// A `d x d` unitary matrix.
#[derive(Clone, Debug)]
pub struct Unitary {
    matrix: CMatrix,
}

impl Unitary {
    /// Validating constructor: rejects non-square or non-unitary input.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return validation(format!(
                "unitary must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            ));
        }
        let d = matrix.nrows();
        let err = linalg::max_abs(&(matrix.adjoint() * &matrix - linalg::identity(d)));
        if err > UNITARITY_TOL * 10.0_f64.max(d as f64) {
            return validation(format!("matrix is not unitary (|U†U - I| = {err:e})"));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn new_unchecked(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    pub fn identity(d: usize) -> Self {
        Self { matrix: linalg::identity(d) }
    }

    pub fn pauli_x() -> Self {
        Self::new_unchecked(linalg::from_rows(2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]))
    }

    pub fn pauli_y() -> Self {
        Self::new_unchecked(linalg::from_rows(2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]))
    }

    pub fn pauli_z() -> Self {
        Self::new_unchecked(linalg::from_rows(2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]))
    }

    pub fn hadamard() -> Self {
        let v = FRAC_1_SQRT_2;
        Self::new_unchecked(linalg::from_rows(2, &[c(v, 0.), c(v, 0.), c(v, 0.), c(-v, 0.)]))
    }

    /// Phase gate `sqrt(Z) = diag(1, i)`.
    pub fn sqrt_z() -> Self {
        Self::new_unchecked(linalg::from_rows(2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 1.)]))
    }

    /// `exp(-i theta Z / 2)`.
    pub fn rz(theta: f64) -> Self {
        let h = theta / 2.0;
        Self::new_unchecked(linalg::from_rows(
            2,
            &[C64::from_polar(1.0, -h), c(0., 0.), c(0., 0.), C64::from_polar(1.0, h)],
        ))
    }

    /// `exp(-i theta (n . sigma) / 2)` for a unit axis `n`.
    pub fn rotation(axis: [f64; 3], theta: f64) -> Result<Self> {
        let norm = (axis[0].powi(2) + axis[1].powi(2) + axis[2].powi(2)).sqrt();
        if norm <= 0.0 {
            return validation("rotation axis must be nonzero");
        }
        let [nx, ny, nz] = axis.map(|a| a / norm);
        let (s, co) = (theta / 2.0).sin_cos();
        Ok(Self::new_unchecked(linalg::from_rows(
            2,
            &[c(co, -s * nz), c(-s * ny, -s * nx), c(s * ny, -s * nx), c(co, s * nz)],
        )))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn mul(&self, rhs: &Unitary) -> Unitary {
        Unitary::new_unchecked(&self.matrix * &rhs.matrix)
    }

    pub fn adjoint(&self) -> Unitary {
        Unitary::new_unchecked(self.matrix.adjoint())
    }

    /// Fractional power `U^eps`.
    ///
    /// Qubit gates are first brought into SU(2) with a non-negative real trace,
    /// so the power is the rotation by `eps` times the minimal rotation angle
    /// about the gate's axis independent of the stored global phase. Other
    /// dimensions use the principal branch.
    pub fn power(&self, eps: f64) -> Unitary {
        if self.dim() == 2 {
            let det = self.matrix.determinant();
            let mut m = &self.matrix * C64::from_polar(1.0, -det.arg() / 2.0);
            if linalg::trace(&m).re < 0.0 {
                m *= c(-1.0, 0.0);
            }
            return Unitary::new_unchecked(linalg::unitary_power(&m, eps));
        }
        Unitary::new_unchecked(linalg::unitary_power(&self.matrix, eps))
    }

    /// Global-phase canonical form: the first entry (row-major) with
    /// non-negligible magnitude is made real and positive.
    pub fn canonical(&self) -> Unitary {
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                let z = self.matrix[(i, j)];
                if z.norm() > PHASE_ENTRY_TOL {
                    let phase = z.conj() / z.norm();
                    return Unitary::new_unchecked(&self.matrix * phase);
                }
            }
        }
        self.clone()
    }

    /// Equality modulo global phase.
    pub fn approx_eq_up_to_phase(&self, other: &Unitary, tol: f64) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        linalg::max_abs(&(self.canonical().matrix - other.canonical().matrix)) < tol
    }

    /// Diagonal in the computational basis (a z-rotation up to phase).
    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.matrix[(i, j)].norm() < tol))
    }

    /// Block-diagonal embedding `U (+) I` into a larger space.
    pub fn embed(&self, total_dim: usize) -> Result<Unitary> {
        let d = self.dim();
        if total_dim < d {
            return validation(format!("cannot embed dim {d} into dim {total_dim}"));
        }
        let mut m = linalg::identity(total_dim);
        m.view_mut((0, 0), (d, d)).copy_from(&self.matrix);
        Ok(Unitary::new_unchecked(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_unitary() {
        let m = linalg::from_rows(2, &[c(1., 0.), c(1., 0.), c(0., 0.), c(1., 0.)]);
        assert!(Unitary::new(m).is_err());
    }

    #[test]
    fn standard_gates_are_unitary() {
        for u in [
            Unitary::pauli_x(),
            Unitary::pauli_y(),
            Unitary::pauli_z(),
            Unitary::hadamard(),
            Unitary::sqrt_z(),
            Unitary::rz(0.3),
        ] {
            assert!(Unitary::new(u.matrix().clone()).is_ok());
        }
    }

    #[test]
    fn phase_equivalence() {
        let z = Unitary::pauli_z();
        let iz = Unitary::new_unchecked(z.matrix() * c(0.0, 1.0));
        assert!(z.approx_eq_up_to_phase(&iz, 1e-12));
        assert!(!z.approx_eq_up_to_phase(&Unitary::pauli_x(), 1e-12));
        assert!(Unitary::rz(0.7).approx_eq_up_to_phase(&Unitary::rotation([0., 0., 1.], 0.7).unwrap(), 1e-12));
    }

    #[test]
    fn embedding_is_block_diagonal() {
        let x3 = Unitary::pauli_x().embed(3).unwrap();
        assert_eq!(x3.dim(), 3);
        assert_eq!(x3.matrix()[(2, 2)], c(1.0, 0.0));
        assert_eq!(x3.matrix()[(0, 1)], c(1.0, 0.0));
    }
}
