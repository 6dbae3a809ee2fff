use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{find_initial, ChainStats, PosteriorChains, PosteriorModel, SamplerConfig};
use crate::error::Result;

/// Runs `steps` Metropolis–Hastings transitions with a symmetric proposal.
/// Returns the visited states and the acceptance rate.
pub fn mh_chain<S, R, F, P>(init: S, logp: F, mut propose: P, steps: usize, rng: &mut R) -> (Vec<S>, f64)
where
    S: Clone,
    R: Rng + ?Sized,
    F: Fn(&S) -> f64,
    P: FnMut(&S, &mut R) -> S,
{
    let mut x = init;
    let mut lx = logp(&x);
    let mut out = Vec::with_capacity(steps);
    let mut accepted = 0usize;
    for _ in 0..steps {
        let y = propose(&x, rng);
        let ly = logp(&y);
        let r: f64 = rng.random();
        if ly.is_finite() && r.ln() <= ly - lx {
            x = y;
            lx = ly;
            accepted += 1;
        }
        out.push(x.clone());
    }
    (out, accepted as f64 / steps.max(1) as f64)
}

/// Gaussian random-walk Metropolis–Hastings; chains run in parallel. During
/// warmup the proposal scale is adapted towards 25% acceptance.
pub fn metropolis_hastings<M: PosteriorModel + ?Sized>(model: &M, config: &SamplerConfig) -> Result<PosteriorChains> {
    config.validate()?;
    let results: Result<Vec<(Vec<Vec<f64>>, ChainStats)>> =
        (0..config.chains).into_par_iter().map(|c| run_chain(model, config, c)).collect();
    let (draws, stats): (Vec<_>, Vec<_>) = results?.into_iter().unzip();
    Ok(PosteriorChains { names: model.param_names(), draws, stats, warnings: Vec::new() })
}

fn run_chain<M: PosteriorModel + ?Sized>(model: &M, config: &SamplerConfig, c: usize) -> Result<(Vec<Vec<f64>>, ChainStats)> {
    let mut rng = config.chain_rng(c);
    let mut x = find_initial(model, &mut rng)?;
    let mut lx = model.log_density(&x);
    let dim = x.len();
    let mut scale = config.mh_scale;
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(config.keep);
    let total = config.warmup + config.keep * config.thin;
    let mut y = vec![0.0; dim];
    for it in 0..total {
        for k in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            y[k] = x[k] + scale * z;
        }
        let ly = model.log_density(&y);
        let r: f64 = rng.random();
        let acc = ly.is_finite() && r.ln() <= ly - lx;
        if acc {
            x.copy_from_slice(&y);
            lx = ly;
        }
        if it < config.warmup {
            // Robbins–Monro on log scale
            let a = if acc { 1.0 } else { 0.0 };
            scale *= ((a - 0.25) / (1.0 + it as f64).powf(0.6)).exp();
        } else {
            accepted += usize::from(acc);
            if (it - config.warmup) % config.thin == config.thin - 1 {
                draws.push(model.constrain(&x));
            }
        }
    }
    let kept = (total - config.warmup).max(1);
    let stats = ChainStats { accept: accepted as f64 / kept as f64, step_size: scale, ..Default::default() };
    Ok((draws, stats))
}
