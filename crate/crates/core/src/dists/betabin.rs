use statrs::function::factorial::ln_binomial;

use super::BetaParams;
use crate::error::{Error, Result};

/// `log BetaBinom(Q | N, α, β)` as finite sums of logs (exact for integer
/// counts, no gamma-function cancellation).
pub fn beta_binomial_logpmf_ab(q: u64, n: u64, a: f64, b: f64) -> f64 {
    let mut v = ln_binomial(n, q);
    for j in 0..q {
        v += (a + j as f64).ln();
    }
    for j in 0..n - q {
        v += (b + j as f64).ln();
    }
    for j in 0..n {
        v -= (a + b + j as f64).ln();
    }
    v
}

/// Value and gradient in `(α, β)`.
pub fn beta_binomial_logpmf_ab_grad(q: u64, n: u64, a: f64, b: f64) -> (f64, f64, f64) {
    let mut v = ln_binomial(n, q);
    let (mut da, mut db) = (0.0, 0.0);
    for j in 0..q {
        let x = a + j as f64;
        v += x.ln();
        da += 1.0 / x;
    }
    for j in 0..n - q {
        let x = b + j as f64;
        v += x.ln();
        db += 1.0 / x;
    }
    let mut dc = 0.0;
    for j in 0..n {
        let x = a + b + j as f64;
        v -= x.ln();
        dc += 1.0 / x;
    }
    (v, da - dc, db - dc)
}

fn check_counts(q: u64, n: u64) -> Result<()> {
    if q > n {
        return Err(Error::Domain(format!("Q = {q} exceeds N = {n}")));
    }
    Ok(())
}

fn check_mu_t(mu: f64, t: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 1.0) || !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("(μ, t) = ({mu}, {t}) outside (0, 1)²")));
    }
    Ok(())
}

/// `log BetaBinom(Q | N, μ, t)` with `α = μ(1/t - 1)`, `β = (1-μ)(1/t - 1)`.
pub fn beta_binomial_logpmf(q: u64, n: u64, mu: f64, t: f64) -> Result<f64> {
    check_counts(q, n)?;
    check_mu_t(mu, t)?;
    let s = 1.0 / t - 1.0;
    Ok(beta_binomial_logpmf_ab(q, n, mu * s, (1.0 - mu) * s))
}

/// Value and gradient in `(μ, t)`.
pub fn beta_binomial_logpmf_grad(q: u64, n: u64, mu: f64, t: f64) -> (f64, f64, f64) {
    let s = 1.0 / t - 1.0;
    let (v, da, db) = beta_binomial_logpmf_ab_grad(q, n, mu * s, (1.0 - mu) * s);
    let dmu = s * (da - db);
    let ds = mu * da + (1.0 - mu) * db;
    (v, dmu, -ds / (t * t))
}

/// Value, gradient and Hessian of the log pmf in `(μ, t)`.
pub fn beta_binomial_logpmf_hessian(q: u64, n: u64, mu: f64, t: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let s = 1.0 / t - 1.0;
    let (a, b) = (mu * s, (1.0 - mu) * s);
    let mut v = ln_binomial(n, q);
    let (mut a1, mut a2, mut b1, mut b2, mut c1, mut c2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..q {
        let x = a + j as f64;
        v += x.ln();
        a1 += 1.0 / x;
        a2 += 1.0 / (x * x);
    }
    for j in 0..n - q {
        let x = b + j as f64;
        v += x.ln();
        b1 += 1.0 / x;
        b2 += 1.0 / (x * x);
    }
    for j in 0..n {
        let x = a + b + j as f64;
        v -= x.ln();
        c1 += 1.0 / x;
        c2 += 1.0 / (x * x);
    }
    let (la, lb) = (a1 - c1, b1 - c1);
    let (laa, lbb, lab) = (c2 - a2, c2 - b2, c2);
    let lmu = s * (la - lb);
    let ls = mu * la + (1.0 - mu) * lb;
    let lmumu = s * s * (laa - 2.0 * lab + lbb);
    let lmus = (la - lb) + s * (mu * laa + (1.0 - 2.0 * mu) * lab - (1.0 - mu) * lbb);
    let lss = mu * mu * laa + 2.0 * mu * (1.0 - mu) * lab + (1.0 - mu) * (1.0 - mu) * lbb;
    let st = -1.0 / (t * t);
    let stt = 2.0 / (t * t * t);
    let lt = ls * st;
    let ltt = lss * st * st + ls * stt;
    let lmut = lmus * st;
    (v, [lmu, lt], [[lmumu, lmut], [lmut, ltt]])
}

/// Stirling numbers of the second kind `S(k, j)` for `k <= 4`.
const STIRLING2: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 1.0, 0.0, 0.0],
    [0.0, 1.0, 3.0, 1.0, 0.0],
    [0.0, 1.0, 7.0, 6.0, 1.0],
];

/// Raw beta moments `E[q^j]`, `j = 0..=4`, from `(μ, μ₂)`, including the
/// degenerate endpoints `μ₂ = μ²` (point mass) and `μ₂ = μ` (Bernoulli).
pub fn beta_raw_moments(mu: f64, mu2: f64) -> [f64; 5] {
    let var = mu2 - mu * mu;
    if var <= 0.0 {
        return [1.0, mu, mu * mu, mu.powi(3), mu.powi(4)];
    }
    if mu2 >= mu {
        return [1.0, mu, mu, mu, mu];
    }
    BetaParams { view: super::BetaView::MeanSecond, a: mu, b: mu2 }.raw_moments()
}

/// `E[Q^k]` for `Q ~ BetaBinom(N, μ, μ₂)` and `k <= 4`, from the binomial
/// factorial moments `E[Q (Q-1) ... (Q-j+1) | q] = N^(j) q^j`.
pub fn beta_binomial_moment(k: u32, n: u64, mu: f64, mu2: f64) -> Result<f64> {
    if k > 4 {
        return Err(Error::UnsupportedMoment(k));
    }
    if !(0.0..=1.0).contains(&mu) || mu2 < mu * mu - 1e-15 || mu2 > mu + 1e-15 {
        return Err(Error::Domain(format!("(μ, μ₂) = ({mu}, {mu2}) outside the moment box")));
    }
    let m = beta_raw_moments(mu, mu2);
    let nf = n as f64;
    let mut falling = 1.0;
    let mut total = 0.0;
    for j in 0..=k as usize {
        if j > 0 {
            falling *= nf - (j as f64 - 1.0);
        }
        total += STIRLING2[k as usize][j] * falling * m[j];
    }
    Ok(total)
}
