//! Metropolis–Hastings and NUTS samplers, chain diagnostics and summaries.

mod diagnostics;
mod io;
mod mh;
mod nuts;
mod summary;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use diagnostics::{diagnostics, ess, split_rhat, Diagnostics, ParamDiagnostics};
pub use io::{read_chains_csv, write_chains_csv};
pub use mh::{metropolis_hastings, mh_chain};
pub use nuts::{hmc_nuts, leapfrog_energy_error};
pub use summary::{quantile, summarize, ParamSummary, Summary};

use crate::error::{Error, Result};

/// A differentiable log density on `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Value and gradient (written into `grad`); `-∞` outside the support.
    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, u: &[f64]) -> f64 {
        let mut g = vec![0.0; u.len()];
        self.log_density_grad(u, &mut g)
    }
}

/// A log density whose draws are reported in constrained coordinates.
pub trait PosteriorModel: LogDensity {
    fn param_names(&self) -> Vec<String>;
    fn constrain(&self, u: &[f64]) -> Vec<f64>;
    /// Starting point; the sampler retries on a non-finite density.
    fn initial_point(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
    /// Column of the headline parameter, if any.
    fn primary_index(&self) -> Option<usize> {
        None
    }
}

/// Sampler settings shared by MH and NUTS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub keep: usize,
    pub seed: u64,
    /// Keep every `thin`-th draw after warmup.
    pub thin: usize,
    /// Random-walk proposal standard deviation (adapted during MH warmup).
    pub mh_scale: f64,
    /// Initial NUTS step size; found heuristically when `None`.
    pub step_size: Option<f64>,
    pub max_depth: usize,
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            keep: 1000,
            seed: 0,
            thin: 1,
            mh_scale: 0.1,
            step_size: None,
            max_depth: 10,
            target_accept: 0.8,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.chains >= 1
            && self.keep >= 1
            && self.thin >= 1
            && self.target_accept > 0.0
            && self.target_accept < 1.0
            && self.mh_scale > 0.0
            && self.max_depth >= 1
            && self.step_size.is_none_or(|e| e > 0.0 && e.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid sampler configuration {self:?}")))
        }
    }

    /// Independent RNG stream for chain `c`.
    pub(crate) fn chain_rng(&self, c: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(c as u64 + 1);
        rng
    }
}

/// Per-chain sampler statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    /// Mean acceptance statistic after warmup.
    pub accept: f64,
    pub divergences: usize,
    /// Final step size (NUTS) or proposal scale (MH).
    pub step_size: f64,
    pub mean_tree_depth: f64,
    pub max_depth_hits: usize,
}

/// Post-warmup draws in constrained coordinates, `draws[chain][draw][param]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChains {
    pub names: Vec<String>,
    pub draws: Vec<Vec<Vec<f64>>>,
    pub stats: Vec<ChainStats>,
    pub warnings: Vec<String>,
}

impl PosteriorChains {
    pub fn chains(&self) -> usize {
        self.draws.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draws of one parameter, chain by chain.
    pub fn param(&self, k: usize) -> Vec<Vec<f64>> {
        self.draws.iter().map(|c| c.iter().map(|d| d[k]).collect()).collect()
    }

    /// All draws of one parameter pooled across chains.
    pub fn pooled(&self, k: usize) -> Vec<f64> {
        self.draws.iter().flat_map(|c| c.iter().map(move |d| d[k])).collect()
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences).sum()
    }

    /// Fraction of post-warmup transitions that diverged.
    pub fn divergence_fraction(&self) -> f64 {
        let n: usize = self.draws.iter().map(|c| c.len()).sum();
        if n == 0 {
            0.0
        } else {
            self.divergences() as f64 / n as f64
        }
    }
}

/// Finds a starting point with finite density; up to 100 tries.
pub(crate) fn find_initial<M: PosteriorModel + ?Sized>(model: &M, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut g = vec![0.0; model.dim()];
    for _ in 0..100 {
        let u = model.initial_point(rng);
        let v = model.log_density_grad(&u, &mut g);
        if v.is_finite() && g.iter().all(|x| x.is_finite()) {
            return Ok(u);
        }
    }
    Err(Error::Sampler("no finite log density found in 100 initialization attempts".into()))
}
