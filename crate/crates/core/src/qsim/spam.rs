use crate::error::{validation, Result};
use crate::linalg::{self, c};
use crate::CMatrix;

const SPAM_TOL: f64 = 1e-12;

/// Preparation `rho` and two-outcome measurement effect `E`.
#[derive(Clone, Debug)]
pub struct SpamConfig {
    rho: CMatrix,
    effect: CMatrix,
}

impl SpamConfig {
    pub fn new(rho: CMatrix, effect: CMatrix) -> Result<Self> {
        let d = rho.nrows();
        if rho.ncols() != d || effect.nrows() != d || effect.ncols() != d {
            return validation("SPAM operators must be square with one shared dimension");
        }
        if linalg::max_abs(&(&rho - rho.adjoint())) > SPAM_TOL
            || linalg::max_abs(&(&effect - effect.adjoint())) > SPAM_TOL
        {
            return validation("SPAM operators must be Hermitian");
        }
        let tr = linalg::trace(&rho);
        if (tr.re - 1.0).abs() > SPAM_TOL || tr.im.abs() > SPAM_TOL {
            return validation(format!("Tr[rho] = {} differs from 1", tr.re));
        }
        if linalg::hermitian_eigenvalues(&rho)[0] < -SPAM_TOL {
            return validation("rho is not positive semidefinite");
        }
        let eig = linalg::hermitian_eigenvalues(&effect);
        if eig[0] < -SPAM_TOL || eig[d - 1] > 1.0 + SPAM_TOL {
            return validation("effect eigenvalues must lie in [0, 1]");
        }
        Ok(Self { rho, effect })
    }

    /// `rho = |k><k|`, `E = scale |m><m|` on `d` levels.
    pub fn basis(d: usize, prep: usize, meas: usize, scale: f64) -> Result<Self> {
        if prep >= d || meas >= d {
            return validation("basis index out of range");
        }
        Self::new(projector(d, prep), projector(d, meas) * c(scale, 0.0))
    }

    /// Ideal `|0><0|` preparation and measurement.
    pub fn ideal(d: usize) -> Self {
        Self::basis(d, 0, 0, 1.0).expect("ideal SPAM is valid")
    }

    /// `rho = weight |k><k| + (1 - weight) |leak><leak|`.
    pub fn mixed_prep(d: usize, k: usize, weight: f64, leak: usize, effect: CMatrix) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return validation("preparation weight must lie in [0, 1]");
        }
        let rho = projector(d, k) * c(weight, 0.0) + projector(d, leak) * c(1.0 - weight, 0.0);
        Self::new(rho, effect)
    }

    pub fn rho(&self) -> &CMatrix {
        &self.rho
    }

    pub fn effect(&self) -> &CMatrix {
        &self.effect
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    /// `Tr[E rho]`.
    pub fn ideal_survival(&self) -> f64 {
        linalg::trace(&(&self.effect * &self.rho)).re
    }
}

/// `|k><k|` on `d` levels.
pub fn projector(d: usize, k: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(k, k)] = c(1.0, 0.0);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        assert!(SpamConfig::basis(2, 0, 0, 0.99).is_ok());
        assert!(SpamConfig::basis(2, 0, 0, 1.2).is_err());
        let bad_rho = projector(2, 0) * c(0.9, 0.0);
        assert!(SpamConfig::new(bad_rho, projector(2, 0)).is_err());
        let s = SpamConfig::basis(2, 0, 0, 0.99).unwrap();
        assert!((s.ideal_survival() - 0.99).abs() < 1e-15);
    }
}
