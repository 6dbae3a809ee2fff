//! Closed-form tying functions with gradients in the constrained parameters.

use crate::error::{Error, Result};

/// Threshold on `L1 + L2` below which LRB is considered leakage-free.
pub const LEAKAGE_EPS: f64 = 1e-12;

/// Behaviour of the LRB tying function as `L1 + L2 -> 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LeakageLimit {
    /// Return [`Error::DegenerateLeakage`].
    #[default]
    Error,
    /// Use the symmetric limit `(A + B) / 2` for the offset.
    Symmetric,
}

fn check_moment(t: u32, want: u32) -> Result<()> {
    if t == want {
        Ok(())
    } else {
        Err(Error::UnsupportedMoment(t))
    }
}

fn pow_and_deriv(base: f64, m: f64) -> (f64, f64) {
    if m == 0.0 {
        return (1.0, 0.0);
    }
    let v = base.powf(m);
    let dv = if base == 0.0 {
        if m == 1.0 { 1.0 } else { 0.0 }
    } else {
        m * v / base
    };
    (v, dv)
}

/// Standard RB: `(A - B) p^M + B`.
pub fn tying_rb(t: u32, m: u64, p: f64, a: f64, b: f64) -> Result<f64> {
    check_moment(t, 1)?;
    Ok((a - b) * p.powf(m as f64) + b)
}

/// Value and gradient in `(p, A, B)`.
pub fn tying_rb_grad(m: u64, p: f64, a: f64, b: f64) -> (f64, [f64; 3]) {
    let (pm, dpm) = pow_and_deriv(p, m as f64);
    ((a - b) * pm + b, [(a - b) * dpm, pm, 1.0 - pm])
}

/// Interleaved RB: `(A - B) p_e^M + B` with `p_e = p0` for the reference
/// experiment and `p_r` for the interleaved one.
pub fn tying_irb(t: u32, m: u64, interleaved: bool, p0: f64, p_r: f64, a: f64, b: f64) -> Result<f64> {
    tying_rb(t, m, if interleaved { p_r } else { p0 }, a, b)
}

/// Unitarity second moment: `A + B u^(M-1)`.
pub fn tying_unitarity(t: u32, m: u64, u: f64, a: f64, b: f64) -> Result<f64> {
    check_moment(t, 2)?;
    if m < 1 {
        return Err(Error::Validation("unitarity requires M >= 1".into()));
    }
    Ok(a + b * u.powf((m - 1) as f64))
}

/// Value and gradient in `(u, A, B)`.
pub fn tying_unitarity_grad(m: u64, u: f64, a: f64, b: f64) -> (f64, [f64; 3]) {
    let (um, dum) = pow_and_deriv(u, m.saturating_sub(1) as f64);
    (a + b * um, [b * dum, 1.0, um])
}

/// Dihedral: `A + B_e p_e^M`.
pub fn tying_dihedral(t: u32, m: u64, p_e: f64, a: f64, b_e: f64) -> Result<f64> {
    check_moment(t, 1)?;
    Ok(a + b_e * p_e.powf(m as f64))
}

/// Value and gradient in `(p_e, A, B_e)`.
pub fn tying_dihedral_grad(m: u64, p_e: f64, a: f64, b_e: f64) -> (f64, [f64; 3]) {
    let (pm, dpm) = pow_and_deriv(p_e, m as f64);
    (a + b_e * pm, [b_e * dpm, 1.0, pm])
}

/// Parameters entering one LRB experiment `(λ, i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrbTerms {
    pub l1: f64,
    pub l2: f64,
    pub mu1: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub p: f64,
}

/// Gradient of the LRB tying function, one entry per [`LrbTerms`] field.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LrbGrad {
    pub l1: f64,
    pub l2: f64,
    pub mu1: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub p: f64,
}

/// `λ1 = 1 - L1 - L2`.
pub fn lambda1(l1: f64, l2: f64) -> f64 {
    1.0 - l1 - l2
}

/// `λ2 = μ1 (1 - L1)`.
pub fn lambda2(l1: f64, mu1: f64) -> f64 {
    mu1 * (1.0 - l1)
}

/// Average gate fidelity on the computational subspace implied by
/// `λ2 = (d1 F - (1 - L1)) / (d1 - 1)`.
pub fn lrb_fidelity(l1: f64, mu1: f64, d1: usize) -> f64 {
    let d1 = d1 as f64;
    (lambda2(l1, mu1) * (d1 - 1.0) + 1.0 - l1) / d1
}

/// Inverse of [`lrb_fidelity`]: `μ1` from `(L1, F)`.
pub fn lrb_mu1_from_fidelity(l1: f64, f: f64, d1: usize) -> f64 {
    let d1 = d1 as f64;
    (d1 * f - (1.0 - l1)) / ((d1 - 1.0) * (1.0 - l1))
}

/// LRB tying function
/// `(L2 A + L1 B)/(L1+L2) + (L1/(L1+L2) - p)(A - B) λ1^M + (1 - p)(C - A) λ2^M`.
pub fn tying_lrb(t: u32, m: u64, x: &LrbTerms, limit: LeakageLimit) -> Result<f64> {
    check_moment(t, 1)?;
    Ok(tying_lrb_grad(m, x, limit)?.0)
}

/// Value and gradient of [`tying_lrb`].
pub fn tying_lrb_grad(m: u64, x: &LrbTerms, limit: LeakageLimit) -> Result<(f64, LrbGrad)> {
    let s = x.l1 + x.l2;
    let mf = m as f64;
    let (l1m, dl1m) = pow_and_deriv(lambda1(x.l1, x.l2), mf);
    let (l2m, dl2m) = pow_and_deriv(lambda2(x.l1, x.mu1), mf);
    let mut g = LrbGrad::default();
    let (offset, c1) = if s > LEAKAGE_EPS {
        let s2 = s * s;
        g.l1 += x.l2 * (x.b - x.a) / s2;
        g.l2 += x.l1 * (x.a - x.b) / s2;
        g.a += x.l2 / s;
        g.b += x.l1 / s;
        // coefficient c1 = L1/S - p
        g.l1 += x.l2 / s2 * (x.a - x.b) * l1m;
        g.l2 -= x.l1 / s2 * (x.a - x.b) * l1m;
        ((x.l2 * x.a + x.l1 * x.b) / s, x.l1 / s - x.p)
    } else {
        match limit {
            LeakageLimit::Error => return Err(Error::DegenerateLeakage(s)),
            LeakageLimit::Symmetric => {
                g.a += 0.5;
                g.b += 0.5;
                (0.5 * (x.a + x.b), 0.5 - x.p)
            }
        }
    };
    let amb = x.a - x.b;
    let cma = x.c - x.a;
    let value = offset + c1 * amb * l1m + (1.0 - x.p) * cma * l2m;

    g.a += c1 * l1m - (1.0 - x.p) * l2m;
    g.b -= c1 * l1m;
    g.c += (1.0 - x.p) * l2m;
    g.p -= amb * l1m + cma * l2m;
    // dλ1/dL = -1 for both leakage rates
    let dterm1 = c1 * amb * dl1m;
    g.l1 -= dterm1;
    g.l2 -= dterm1;
    let dterm2 = (1.0 - x.p) * cma * dl2m;
    g.l1 -= dterm2 * x.mu1;
    g.mu1 += dterm2 * (1.0 - x.l1);
    Ok((value, g))
}
