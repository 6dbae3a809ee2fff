use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_from_starts, likelihood_model, FitResult};
use crate::error::{validation, Result};
use crate::protocols::ProtocolSpec;
use crate::qsim::{group_by_cell, DatasetRecord};
use crate::sampler::quantile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapKind {
    /// Resample records with replacement within each `(M, e)` cell.
    Nonparametric,
    /// Draw `q ~ Beta(μ, t)` then `Q ~ Binomial(N, q)` from the fitted cells.
    Parametric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub alpha_levels: Vec<f64>,
    pub max_iters: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { replicates: 600, seed: 0, alpha_levels: vec![0.5, 0.95], max_iters: 5000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// `(level, lower, upper)` percentile intervals.
    pub intervals: Vec<(f64, f64, f64)>,
    /// `(α, p_α)` with a fraction `α` of replicates above `p_α`.
    pub lower_bounds: Vec<(f64, f64)>,
}

impl BootstrapSummary {
    pub fn lower_bound(&self, alpha: f64) -> Option<f64> {
        self.lower_bounds.iter().find(|(a, _)| (a - alpha).abs() < 1e-12).map(|(_, v)| *v)
    }

    pub fn interval(&self, level: f64) -> Option<(f64, f64)> {
        self.intervals.iter().find(|(a, _, _)| (a - level).abs() < 1e-12).map(|(_, l, u)| (*l, *u))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub kind: BootstrapKind,
    pub replicates: usize,
    pub failed: usize,
    /// Tying values of each successful refit.
    pub draws: Vec<Vec<f64>>,
    pub params: Vec<BootstrapSummary>,
}

/// Resamples the data, refits the MLE from the full-data optimum and
/// summarizes the refitted tying values.
pub fn bootstrap(protocol: &ProtocolSpec, data: &[DatasetRecord], fit: &FitResult, kind: BootstrapKind, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    if opts.replicates == 0 {
        return validation("bootstrap needs at least one replicate");
    }
    let groups: Vec<Vec<usize>> = group_by_cell(data).into_values().collect();
    if kind == BootstrapKind::Parametric && groups.len() != fit.cells.len() {
        return validation("fit does not match the dataset cells");
    }
    let results: Vec<Option<Vec<f64>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(r as u64 + 1);
            let sample = resample(data, &groups, fit, kind, &mut rng)?;
            let model = likelihood_model(protocol, &sample).ok()?;
            fit_from_starts(&model, vec![fit.unconstrained.clone()], opts.max_iters).ok().map(|f| f.estimates)
        })
        .collect();
    let draws: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let failed = opts.replicates - draws.len();
    let params = fit
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut x: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            x.sort_by(f64::total_cmp);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let sd = if x.len() > 1 { (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            BootstrapSummary {
                name: name.clone(),
                mean,
                sd,
                intervals: opts.alpha_levels.iter().map(|&a| (a, quantile(&x, 0.5 * (1.0 - a)), quantile(&x, 0.5 * (1.0 + a)))).collect(),
                lower_bounds: opts.alpha_levels.iter().map(|&a| (a, quantile(&x, 1.0 - a))).collect(),
            }
        })
        .collect();
    Ok(BootstrapResult { kind, replicates: opts.replicates, failed, draws, params })
}

fn resample(data: &[DatasetRecord], groups: &[Vec<usize>], fit: &FitResult, kind: BootstrapKind, rng: &mut ChaCha8Rng) -> Option<Vec<DatasetRecord>> {
    let mut out = Vec::with_capacity(data.len());
    for (g, idx) in groups.iter().enumerate() {
        for (slot, _) in idx.iter().enumerate() {
            let rec = match kind {
                BootstrapKind::Nonparametric => DatasetRecord { i: slot as u32, ..data[idx[rng.random_range(0..idx.len())]].clone() },
                BootstrapKind::Parametric => {
                    let orig = &data[idx[slot]];
                    let (n, _) = orig.counts()?;
                    let c = &fit.cells[g];
                    let q = beta_draw(c.mean, c.nuisance, rng)?;
                    let k = Binomial::new(n, q).ok()?.sample(rng);
                    DatasetRecord::binomial(orig.m, orig.e.clone(), orig.i, n, k).ok()?
                }
            };
            out.push(rec);
        }
    }
    Some(out)
}

/// `Beta(μ, t)` in the mean/overdispersion form `a = μ(1/t - 1)`.
fn beta_draw(mu: f64, t: f64, rng: &mut ChaCha8Rng) -> Option<f64> {
    let mu = mu.clamp(1e-12, 1.0 - 1e-12);
    let t = t.clamp(1e-12, 1.0 - 1e-12);
    let s = 1.0 / t - 1.0;
    Some(Beta::new(mu * s, (1.0 - mu) * s).ok()?.sample(rng).clamp(0.0, 1.0))
}
