use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::PosteriorChains;

/// Convergence diagnostics of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    /// Rank-normalized split R-hat (max of bulk and folded); omitted for a
    /// single chain.
    pub r_hat: Option<f64>,
    /// Bulk effective sample size; omitted when degenerate.
    pub ess: Option<f64>,
    /// All draws identical.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub chains: usize,
    pub draws_per_chain: usize,
    pub divergences: usize,
    pub divergence_fraction: f64,
    pub params: Vec<ParamDiagnostics>,
    pub notices: Vec<String>,
}

/// R-hat and ESS for every parameter, plus divergence counts.
pub fn diagnostics(chains: &PosteriorChains) -> Diagnostics {
    let mut notices = chains.warnings.clone();
    if chains.chains() < 2 {
        notices.push("single chain: R-hat omitted".into());
    }
    let params = chains
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let x = chains.param(k);
            let degenerate = is_constant(&x);
            ParamDiagnostics {
                name: name.clone(),
                r_hat: if chains.chains() >= 2 && !degenerate { split_rhat(&x) } else { None },
                ess: if degenerate { None } else { ess(&x) },
                degenerate,
            }
        })
        .collect::<Vec<_>>();
    let degenerate: Vec<&str> = params.iter().filter(|p| p.degenerate).map(|p| p.name.as_str()).collect();
    if !degenerate.is_empty() {
        notices.push(format!("degenerate (constant) draws: {}", degenerate.join(", ")));
    }
    Diagnostics {
        chains: chains.chains(),
        draws_per_chain: chains.draws.first().map_or(0, |c| c.len()),
        divergences: chains.divergences(),
        divergence_fraction: chains.divergence_fraction(),
        params,
        notices,
    }
}

fn is_constant(x: &[Vec<f64>]) -> bool {
    let first = x.iter().flatten().next().copied();
    match first {
        Some(f) => x.iter().flatten().all(|v| *v == f || (v.is_nan() && f.is_nan())),
        None => true,
    }
}

fn split(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * x.len());
    for c in x {
        let h = c.len() / 2;
        out.push(c[..h].to_vec());
        out.push(c[c.len() - h..].to_vec());
    }
    out
}

/// Normal scores of pooled average ranks.
fn rank_normalize(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (c, chain) in x.iter().enumerate() {
        for (i, v) in chain.iter().enumerate() {
            all.push((*v, c, i));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out: Vec<Vec<f64>> = x.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = 0.5 * (i + j) as f64 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for a in &all[i..=j] {
            out[a.1][a.2] = z;
        }
        i = j + 1;
    }
    out
}

fn mean_var(c: &[f64]) -> (f64, f64) {
    let n = c.len() as f64;
    let m = c.iter().sum::<f64>() / n;
    (m, c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn basic_rhat(x: &[Vec<f64>]) -> Option<f64> {
    let m = x.len() as f64;
    let n = x.first()?.len() as f64;
    if m < 2.0 || n < 2.0 {
        return None;
    }
    let stats: Vec<(f64, f64)> = x.iter().map(|c| mean_var(c)).collect();
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = n / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if w <= 0.0 {
        return None;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Rank-normalized split R-hat, the larger of the bulk and folded values.
pub fn split_rhat(x: &[Vec<f64>]) -> Option<f64> {
    let s = split(x);
    let bulk = basic_rhat(&rank_normalize(&s))?;
    let mut pooled: Vec<f64> = s.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let med = super::quantile(&pooled, 0.5);
    let folded: Vec<Vec<f64>> = s.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = basic_rhat(&rank_normalize(&folded)).unwrap_or(bulk);
    Some(bulk.max(tail))
}

fn autocovariance(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let (m, _) = mean_var(c);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..size).map(|i| Complex::new(if i < n { c[i] - m } else { 0.0 }, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    (0..n).map(|t| buf[t].re / (size as f64 * n as f64)).collect()
}

/// Bulk effective sample size of rank-normalized split chains, with
/// Geyer's initial monotone sequence truncation.
pub fn ess(x: &[Vec<f64>]) -> Option<f64> {
    let s = rank_normalize(&split(x));
    let m = s.len();
    let n = s.first()?.len();
    if n < 4 {
        return None;
    }
    let acov: Vec<Vec<f64>> = s.iter().map(|c| autocovariance(c)).collect();
    let nf = n as f64;
    let means: Vec<f64> = s.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let b = if m > 1 { nf / (m as f64 - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    if var_plus <= 0.0 {
        return None;
    }
    let rho = |t: usize| -> f64 {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };
    let mut tau = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        pair = pair.min(prev);
        prev = pair;
        tau += pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * tau).max(1.0 / (m as f64 * nf).log10().max(1.0));
    Some(m as f64 * nf / tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    fn wrap(x: Vec<Vec<f64>>) -> PosteriorChains {
        PosteriorChains {
            names: vec!["x".into()],
            draws: x.into_iter().map(|c| c.into_iter().map(|v| vec![v]).collect()).collect(),
            stats: Vec::new(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn independent_draws_are_converged() {
        let x = iid(4, 1000, 1);
        let r = split_rhat(&x).unwrap();
        assert!((0.99..=1.01).contains(&r), "{r}");
        let e = ess(&x).unwrap();
        assert!(e > 3000.0 && e < 5000.0, "{e}");
    }

    #[test]
    fn stuck_chain_is_flagged() {
        let mut x = iid(4, 500, 2);
        for v in x[3].iter_mut() {
            *v = 3.0 + 0.01 * *v;
        }
        assert!(split_rhat(&x).unwrap() > 1.1);
    }

    #[test]
    fn autocorrelated_chain_has_small_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = vec![vec![0.0; 4000]];
        for t in 1..4000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[0][t] = 0.9 * x[0][t - 1] + z;
        }
        // AR(1) with φ = 0.9: ESS ≈ n (1 - φ) / (1 + φ)
        let e = ess(&x).unwrap();
        assert!(e > 100.0 && e < 400.0, "{e}");
    }

    #[test]
    fn constant_and_single_chains() {
        let d = diagnostics(&wrap(vec![vec![1.0; 100], vec![1.0; 100]]));
        assert!(d.params[0].degenerate && d.params[0].ess.is_none() && d.params[0].r_hat.is_none());
        let d = diagnostics(&wrap(iid(1, 400, 3)));
        assert!(d.params[0].r_hat.is_none() && d.params[0].ess.is_some());
        assert!(d.notices.iter().any(|n| n.contains("single chain")));
    }
}
