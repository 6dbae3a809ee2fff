use rand::Rng;
use rand_distr::StandardNormal;

use super::Unitary;
use crate::error::{validation, Error, Result};
use crate::linalg::{self, c};
use crate::{CMatrix, CVector, C64};

/// Trace-preservation tolerance used by [`Channel::check_cptp`].
pub const TRACE_TOL: f64 = 1e-10;
/// Smallest admissible Choi eigenvalue.
pub const CHOI_TOL: f64 = -1e-10;

/// A CPTP map stored as a `d^2 x d^2` superoperator on column-vectorized
/// density operators.
#[derive(Clone, Debug)]
pub struct Channel {
    superop: CMatrix,
    dim: usize,
}

/// Constructor selector for the built-in channel families.
#[derive(Clone, Debug)]
pub enum ChannelKind {
    /// `(1 - s) rho + s Tr[rho] I / d`.
    Depolarizing(f64),
    /// `(1 - s) rho + s Z rho Z` (qubit).
    Dephasing(f64),
    /// Conjugation by a unitary.
    Unitary(Unitary),
    /// Transverse overrotation: identity when the gate is a z-rotation
    /// (unless `z_exempt` is false), else conjugation by `U^eps`.
    Overrotation { gate: Unitary, eps: f64, z_exempt: bool },
    /// `Tr[rho] (p1 |psi><psi| + p2 I / d) + (1 - p1 - p2) rho`.
    ResetMixture { p1: f64, p2: f64, psi: Vec<C64> },
    /// Depolarizing leakage extension of a computational-subspace channel
    /// onto `X1 (+) X2` with leakage `l1` and seepage `l2`.
    Dle { base: Box<Channel>, l1: f64, l2: f64, d2: usize },
}

impl Channel {
    /// Wraps a raw superoperator after checking it is CPTP.
    pub fn from_superop(superop: CMatrix) -> Result<Self> {
        let n = superop.nrows();
        let dim = (n as f64).sqrt().round() as usize;
        if dim * dim != n || superop.ncols() != n {
            return validation(format!("superoperator shape {}x{} is not d^2 x d^2", n, superop.ncols()));
        }
        let ch = Self { superop, dim };
        ch.check_cptp()?;
        Ok(ch)
    }

    /// Channel from Kraus operators `rho -> sum_k K rho K^dagger`.
    pub fn from_kraus(kraus: &[CMatrix]) -> Result<Self> {
        let Some(first) = kraus.first() else {
            return validation("Kraus list is empty");
        };
        let d = first.nrows();
        let mut s = CMatrix::zeros(d * d, d * d);
        for k in kraus {
            if k.nrows() != d || k.ncols() != d {
                return validation("Kraus operators must share one square shape");
            }
            s += linalg::conjugation(k);
        }
        Self::from_superop(s)
    }

    pub fn new(kind: ChannelKind) -> Result<Self> {
        match kind {
            ChannelKind::Depolarizing(s) => Self::depolarizing(2, s),
            ChannelKind::Dephasing(s) => Self::dephasing(s),
            ChannelKind::Unitary(u) => Ok(Self::unitary(&u)),
            ChannelKind::Overrotation { gate, eps, z_exempt } => Self::overrotation(&gate, eps, z_exempt),
            ChannelKind::ResetMixture { p1, p2, psi } => Self::reset_mixture(p1, p2, &psi),
            ChannelKind::Dle { base, l1, l2, d2 } => Self::dle(&base, l1, l2, d2),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self { superop: linalg::identity(d * d), dim: d }
    }

    pub fn depolarizing(d: usize, s: f64) -> Result<Self> {
        check_unit("depolarizing strength", s)?;
        let mut total = linalg::identity(d * d) * c(1.0 - s, 0.0);
        // rho -> Tr[rho] I/d
        let mut replace = CMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                replace[(i + d * i, j + d * j)] = c(1.0 / d as f64, 0.0);
            }
        }
        total += replace * c(s, 0.0);
        Ok(Self { superop: total, dim: d })
    }

    pub fn dephasing(s: f64) -> Result<Self> {
        check_unit("dephasing strength", s)?;
        let z = Unitary::pauli_z();
        let superop = linalg::identity(4) * c(1.0 - s, 0.0) + linalg::conjugation(z.matrix()) * c(s, 0.0);
        Ok(Self { superop, dim: 2 })
    }

    pub fn unitary(u: &Unitary) -> Self {
        Self { superop: linalg::conjugation(u.matrix()), dim: u.dim() }
    }

    pub fn overrotation(gate: &Unitary, eps: f64, z_exempt: bool) -> Result<Self> {
        if !eps.is_finite() {
            return validation("overrotation amount must be finite");
        }
        if z_exempt && gate.is_diagonal(1e-12) {
            return Ok(Self::identity(gate.dim()));
        }
        Ok(Self::unitary(&gate.power(eps)))
    }

    pub fn reset_mixture(p1: f64, p2: f64, psi: &[C64]) -> Result<Self> {
        check_unit("p1", p1)?;
        check_unit("p2", p2)?;
        if p1 + p2 > 1.0 + 1e-15 {
            return validation(format!("p1 + p2 = {} exceeds 1", p1 + p2));
        }
        let d = psi.len();
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if d == 0 || (norm - 1.0).abs() > 1e-12 {
            return validation("reset state must be a normalized, nonempty vector");
        }
        let psi_v = CVector::from_column_slice(psi);
        let target = &psi_v * psi_v.adjoint() * c(p1, 0.0) + linalg::identity(d) * c(p2 / d as f64, 0.0);
        let target_vec = linalg::vectorize(&target);
        let mut superop = linalg::identity(d * d) * c(1.0 - p1 - p2, 0.0);
        for j in 0..d {
            let col = j + d * j;
            for r in 0..d * d {
                superop[(r, col)] += target_vec[r];
            }
        }
        Ok(Self { superop, dim: d })
    }

    /// Depolarizing leakage extension on `X1 (+) X2` with `dim X1 = base.dim()`:
    ///
    /// `rho -> (1 - L1) E(P1 rho P1) + L1 Tr[P1 rho] I2/d2
    ///         + L2 Tr[P2 rho] I1/d1 + (1 - L2) Tr[P2 rho] I2/d2`.
    ///
    /// Coherences between the two blocks are discarded.
    pub fn dle(base: &Channel, l1: f64, l2: f64, d2: usize) -> Result<Self> {
        if l1 < 0.0 || l2 < 0.0 || l1 + l2 > 1.0 {
            return validation(format!("DLE needs L1, L2 >= 0 and L1 + L2 <= 1 (got {l1}, {l2})"));
        }
        if d2 == 0 {
            return validation("DLE needs a nonempty leakage subspace");
        }
        let d1 = base.dim;
        let d = d1 + d2;
        let mut s = CMatrix::zeros(d * d, d * d);
        // computational block through the base channel
        for j1 in 0..d1 {
            for i1 in 0..d1 {
                let src = i1 + d1 * j1;
                for j2 in 0..d1 {
                    for i2 in 0..d1 {
                        let dst_small = i2 + d1 * j2;
                        s[(i2 + d * j2, i1 + d * j1)] = base.superop[(dst_small, src)] * (1.0 - l1);
                    }
                }
            }
        }
        for k in 0..d {
            let src = k + d * k;
            if k < d1 {
                for m in d1..d {
                    s[(m + d * m, src)] += c(l1 / d2 as f64, 0.0);
                }
            } else {
                for m in 0..d1 {
                    s[(m + d * m, src)] += c(l2 / d1 as f64, 0.0);
                }
                for m in d1..d {
                    s[(m + d * m, src)] += c((1.0 - l2) / d2 as f64, 0.0);
                }
            }
        }
        Ok(Self { superop: s, dim: d })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn superop(&self) -> &CMatrix {
        &self.superop
    }

    /// `self` after `first`: the map `rho -> self(first(rho))`.
    pub fn after(&self, first: &Channel) -> Channel {
        Channel { superop: &self.superop * &first.superop, dim: self.dim }
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        linalg::unvectorize(&(&self.superop * linalg::vectorize(rho)), self.dim)
    }

    /// Choi matrix `sum_ij |i><j| (x) Lambda(|i><j|)`.
    pub fn choi(&self) -> CMatrix {
        let d = self.dim;
        let mut j = CMatrix::zeros(d * d, d * d);
        for a in 0..d {
            for b in 0..d {
                let col = self.superop.column(a + d * b);
                for r in 0..d {
                    for s in 0..d {
                        j[(a * d + r, b * d + s)] = col[r + d * s];
                    }
                }
            }
        }
        j
    }

    /// Checks complete positivity via the Choi spectrum and trace
    /// preservation via `vec(I)^dagger S = vec(I)^dagger`.
    pub fn check_cptp(&self) -> Result<()> {
        let d = self.dim;
        let mut tp_err: f64 = 0.0;
        for col in 0..d * d {
            let mut tr = c(0.0, 0.0);
            for i in 0..d {
                tr += self.superop[(i + d * i, col)];
            }
            let (i, j) = (col % d, col / d);
            let expect = if i == j { 1.0 } else { 0.0 };
            tp_err = tp_err.max((tr - c(expect, 0.0)).norm());
        }
        if tp_err > TRACE_TOL {
            return Err(Error::Validation(format!("channel is not trace preserving (error {tp_err:e})")));
        }
        let min_eig = linalg::hermitian_eigenvalues(&self.choi())[0];
        if min_eig < CHOI_TOL {
            return Err(Error::Validation(format!(
                "channel is not completely positive (min Choi eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    /// Average gate fidelity over pure states in the first `d1` levels,
    /// `(Tr[P1 L(P1)] + sum_ab <b|L(|b><a|)|a>) / (d1 (d1 + 1))`.
    pub fn average_fidelity_on(&self, d1: usize) -> f64 {
        let d = self.dim;
        let entry = |out_i: usize, out_j: usize, in_i: usize, in_j: usize| {
            self.superop[(out_i + d * out_j, in_i + d * in_j)]
        };
        let mut acc = c(0.0, 0.0);
        for a in 0..d1 {
            for b in 0..d1 {
                acc += entry(a, a, b, b);
                acc += entry(b, a, b, a);
            }
        }
        acc.re / (d1 * (d1 + 1)) as f64
    }

    pub fn average_fidelity(&self) -> f64 {
        self.average_fidelity_on(self.dim)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return validation(format!("{name} must lie in [0, 1], got {v}"));
    }
    Ok(())
}

/// Haar-like random density operator (Ginibre ensemble), for property tests.
pub fn random_density<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_fn(d, d, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let rho = &g * g.adjoint();
    let tr = linalg::trace(&rho);
    rho / tr
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ket0() -> CMatrix {
        linalg::from_rows(2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)])
    }

    #[test]
    fn depolarizing_limits() {
        let id = Channel::depolarizing(2, 0.0).unwrap();
        let rho = ket0();
        assert!(linalg::max_abs(&(id.apply(&rho) - &rho)) < 1e-15);
        let full = Channel::depolarizing(2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_density(2, &mut rng);
        let out = full.apply(&r);
        assert!(linalg::max_abs(&(out - linalg::identity(2) * c(0.5, 0.0))) < 1e-14);
    }

    #[test]
    fn constructors_are_cptp() {
        let psi = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let chans = vec![
            Channel::depolarizing(2, 0.3).unwrap(),
            Channel::dephasing(0.2).unwrap(),
            Channel::unitary(&Unitary::hadamard()),
            Channel::overrotation(&Unitary::hadamard(), 0.11132, true).unwrap(),
            Channel::reset_mixture(0.9, 0.001, &psi).unwrap(),
            Channel::dle(&Channel::dephasing(0.003).unwrap(), 0.001, 0.0015, 1).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for ch in chans {
            ch.check_cptp().unwrap();
            for _ in 0..100 {
                let rho = random_density(ch.dim(), &mut rng);
                let tr = linalg::trace(&ch.apply(&rho));
                assert!((tr.re - 1.0).abs() < TRACE_TOL && tr.im.abs() < TRACE_TOL);
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(Channel::depolarizing(2, 1.5).is_err());
        assert!(Channel::dephasing(-0.1).is_err());
        assert!(Channel::reset_mixture(0.7, 0.5, &[c(1., 0.), c(0., 0.)]).is_err());
        assert!(Channel::reset_mixture(0.1, 0.1, &[c(1., 0.), c(1., 0.)]).is_err());
        assert!(Channel::dle(&Channel::identity(2), 0.6, 0.6, 1).is_err());
        // amplitude-damping-like non-TP map
        let bad = linalg::identity(4) * c(0.5, 0.0);
        assert!(Channel::from_superop(bad).is_err());
    }

    #[test]
    fn overrotation_exempts_z_rotations() {
        let ch = Channel::overrotation(&Unitary::sqrt_z(), 0.3, true).unwrap();
        assert!(linalg::max_abs(&(ch.superop() - linalg::identity(4))) < 1e-15);
        let ch = Channel::overrotation(&Unitary::sqrt_z(), 0.3, false).unwrap();
        assert!(linalg::max_abs(&(ch.superop() - linalg::identity(4))) > 1e-3);
    }

    #[test]
    fn fidelity_of_lrb_noise() {
        let rot = Channel::unitary(&Unitary::rz(0.1f64.to_radians()));
        let base = Channel::dephasing(0.003).unwrap().after(&rot);
        let dle = Channel::dle(&base, 0.001, 0.0015, 1).unwrap();
        let f = dle.average_fidelity_on(2);
        assert!((f - 0.997001).abs() < 5e-7, "F = {f}");
    }

    #[test]
    fn depolarizing_fidelity() {
        let ch = Channel::depolarizing(2, 0.0002).unwrap();
        assert!((ch.average_fidelity() - (0.9998 + 0.0002 / 2.0)).abs() < 1e-14);
    }
}
