//! Frequentist baselines: beta-binomial maximum likelihood, bootstrap
//! intervals refitted on resampled data, and weighted least squares on cell
//! means.

mod bootstrap;
mod optimize;

pub use bootstrap::{bootstrap, BootstrapKind, BootstrapOptions, BootstrapResult, BootstrapSummary};
pub use optimize::GRAD_TOL;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bayes::{HierarchicalModel, ObservationKind, Priors, SurvivalLayer, Transform};
use crate::error::{validation, Error, Result};
use crate::protocols::{LeakageLimit, ProtocolSpec};
use crate::qsim::{group_by_cell, DatasetRecord, Experiment};
use crate::sampler::PosteriorModel;
use optimize::{maximize, Outcome};

/// Constrained values closer than this to a bound are flagged.
/// Largest unconstrained tying magnitude kept by least squares.
const SATURATION: f64 = 20.0;

pub const BOUNDARY_TOL: f64 = 1e-6;

/// Per-cell nuisance estimate: `t` for first-moment protocols, the
/// first-moment fraction `c` for second-moment ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    #[serde(rename = "M")]
    pub m: u64,
    pub e: Experiment,
    pub mean: f64,
    pub nuisance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// Delta-method standard errors from the observed information.
    pub std_errors: Option<Vec<f64>>,
    pub cells: Vec<CellEstimate>,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub converged: bool,
    pub iterations: u64,
    pub grad_norm: f64,
    /// Parameters within [`BOUNDARY_TOL`] of their domain boundary.
    pub boundary: Vec<String>,
    pub starts: usize,
    pub failed_starts: usize,
    /// Optimum in unconstrained coordinates (tying, then cell nuisances).
    pub unconstrained: Vec<f64>,
}

impl FitResult {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.estimates[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleOptions {
    pub starts: usize,
    pub seed: u64,
    pub max_iters: u64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { starts: 8, seed: 0, max_iters: 5000 }
    }
}

/// The marginal beta model in likelihood-only mode.
pub(crate) fn likelihood_model(protocol: &ProtocolSpec, data: &[DatasetRecord]) -> Result<HierarchicalModel> {
    let t = vec![Transform::default(); protocol.num_params()];
    let priors = Priors::defaults(protocol);
    HierarchicalModel::new(protocol.clone(), data, SurvivalLayer::Beta, ObservationKind::Binomial, priors, t, true)
}

/// Beta-binomial MLE with the default options; `init` seeds one start.
pub fn mle_fit(protocol: &ProtocolSpec, data: &[DatasetRecord], init: Option<&[f64]>) -> Result<FitResult> {
    mle_fit_with(protocol, data, init, &MleOptions::default())
}

/// Multi-start BFGS maximization of the beta-binomial likelihood over
/// unconstrained coordinates. Starts are `init` (if given), the WLSF
/// solution (if it exists), the transformed prior mean and random points.
pub fn mle_fit_with(protocol: &ProtocolSpec, data: &[DatasetRecord], init: Option<&[f64]>, opts: &MleOptions) -> Result<FitResult> {
    if data.is_empty() {
        return validation("MLE needs a nonempty dataset");
    }
    if opts.starts == 0 {
        return validation("MLE needs at least one start");
    }
    let model = likelihood_model(protocol, data)?;
    let dim = model.layout().dim;
    let nt = model.layout().tying;
    let mut starts = Vec::new();
    if let Some(x) = init {
        if x.len() != nt {
            return validation(format!("initial point has {} values for {nt} parameters", x.len()));
        }
        starts.push(model.unconstrain_tying(x));
    }
    if let Ok(w) = wlsf_fit(protocol, data) {
        starts.push(w.unconstrained);
    }
    starts.push(model.prior_mean_point());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while starts.len() < opts.starts {
        starts.push((0..dim).map(|k| if k < nt { 1.5 } else { 1.0 } * rng.sample::<f64, _>(StandardNormal)).collect());
    }
    starts.truncate(opts.starts.max(1));
    fit_from_starts(&model, starts, opts.max_iters)
}

pub(crate) fn fit_from_starts(model: &HierarchicalModel, starts: Vec<Vec<f64>>, max_iters: u64) -> Result<FitResult> {
    let n = starts.len();
    let mut best: Option<Outcome> = None;
    let mut trace = Vec::new();
    let mut failed = 0;
    for (s, u0) in starts.into_iter().enumerate() {
        match maximize(|u, g| model.log_posterior_grad(u, g), u0, max_iters) {
            Ok(o) if o.converged && o.value.is_finite() => {
                if best.as_ref().is_none_or(|b| o.value > b.value) {
                    best = Some(o);
                }
            }
            Ok(o) => {
                failed += 1;
                trace.push(format!("start {s}: stopped after {} iterations with |grad| = {:e}", o.iterations, o.grad_norm));
            }
            Err(e) => {
                failed += 1;
                trace.push(format!("start {s}: {e}"));
            }
        }
    }
    let best = best.ok_or_else(|| Error::Optimizer(format!("all {n} starts failed to converge: {}", trace.join("; "))))?;
    Ok(result_from(model, "mle", best, n, failed, None))
}

fn result_from(model: &HierarchicalModel, method: &str, o: Outcome, starts: usize, failed: usize, ll: Option<f64>) -> FitResult {
    let protocol = model.protocol();
    let nt = model.layout().tying;
    let estimates = model.tying_values(&o.u);
    let all_names = model.param_names();
    let constrained = model.constrain(&o.u);
    let mut boundary = Vec::new();
    for k in 0..nt {
        let x = model.transforms()[k].forward(o.u[k]).x;
        if !(BOUNDARY_TOL..=1.0 - BOUNDARY_TOL).contains(&x) {
            boundary.push(all_names[k].clone());
        }
    }
    let cells: Vec<CellEstimate> = model
        .cells()
        .into_iter()
        .enumerate()
        .map(|(c, (m, e))| {
            let nuisance = constrained[nt + 2 * c + 1];
            if !(BOUNDARY_TOL..=1.0 - BOUNDARY_TOL).contains(&nuisance) {
                boundary.push(all_names[nt + 2 * c + 1].clone());
            }
            CellEstimate { m, e, mean: constrained[nt + 2 * c], nuisance }
        })
        .collect();
    let std_errors = if method == "mle" { std_errors(model, &o.u) } else { None };
    FitResult {
        method: method.into(),
        names: protocol.param_names().to_vec(),
        estimates,
        std_errors,
        cells,
        log_likelihood: ll.unwrap_or(o.value),
        initial_log_likelihood: o.initial_value,
        converged: o.converged,
        iterations: o.iterations,
        grad_norm: o.grad_norm,
        boundary,
        starts,
        failed_starts: failed,
        unconstrained: o.u,
    }
}

/// Standard errors of the tying values from the inverse observed
/// information in `u`, mapped by the Jacobian of `u -> x`.
fn std_errors(model: &HierarchicalModel, u: &[f64]) -> Option<Vec<f64>> {
    let n = u.len();
    let nt = model.layout().tying;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut w = u.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for j in 0..n {
        let step = 1e-5 * (1.0 + u[j].abs());
        w[j] = u[j] + step;
        model.log_posterior_grad(&w, &mut gp);
        w[j] = u[j] - step;
        model.log_posterior_grad(&w, &mut gm);
        w[j] = u[j];
        for i in 0..n {
            h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    // nuisances pinned at a boundary are flat in u and carry no information
    let keep: Vec<usize> = (0..n).filter(|&j| j < nt || h[(j, j)] > 1e-8).collect();
    let h = h.select_rows(&keep).select_columns(&keep);
    let cov = h.cholesky()?.inverse();
    let mut jac = DMatrix::<f64>::zeros(nt, nt);
    for j in 0..nt {
        let step = 1e-6 * (1.0 + u[j].abs());
        w[j] = u[j] + step;
        let xp = model.tying_values(&w);
        w[j] = u[j] - step;
        let xm = model.tying_values(&w);
        w[j] = u[j];
        for i in 0..nt {
            jac[(i, j)] = (xp[i] - xm[i]) / (2.0 * step);
        }
    }
    let cx = &jac * cov.view((0, 0), (nt, nt)) * jac.transpose();
    let se: Vec<f64> = (0..nt).map(|k| cx[(k, k)].max(0.0).sqrt()).collect();
    se.iter().all(|s| s.is_finite()).then_some(se)
}

/// Per-record unbiased estimate of the tied moment: `Q/N` for the first
/// moment and `Q(Q-1)/(N(N-1))` for the second.
fn moment_estimate(order: u32, n: u64, q: u64) -> Result<f64> {
    let (nf, qf) = (n as f64, q as f64);
    match order {
        1 => Ok(qf / nf),
        2 if n >= 2 => Ok(qf * (qf - 1.0) / (nf * (nf - 1.0))),
        2 => validation("second-moment least squares needs N >= 2"),
        t => Err(Error::UnsupportedMoment(t)),
    }
}

/// Weighted least-squares fit of cell-mean moment estimates to the tying
/// function, weights `1 / Var(mean)` from sample variances. Zero-variance
/// cells get the largest variance of the other cells. The reported
/// likelihood is the beta-binomial likelihood maximized over the cell
/// nuisances at the least-squares tying values.
pub fn wlsf_fit(protocol: &ProtocolSpec, data: &[DatasetRecord]) -> Result<FitResult> {
    let order = protocol.moment_order();
    let groups = group_by_cell(data);
    let distinct_m: std::collections::BTreeSet<u64> = groups.keys().map(|(m, _)| *m).collect();
    if distinct_m.len() < 2 {
        return validation("least squares needs at least two distinct sequence lengths");
    }
    let mut cells = Vec::with_capacity(groups.len());
    for ((m, e), idx) in &groups {
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            let (n, q) = data[i].counts().ok_or_else(|| Error::Validation("least squares needs binomial counts".into()))?;
            y.push(moment_estimate(order, n, q)?);
        }
        let k = y.len() as f64;
        let mean = y.iter().sum::<f64>() / k;
        let var = if y.len() > 1 { y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k } else { 0.0 };
        cells.push((*m, e.clone(), mean, var));
    }
    let max_var = cells.iter().map(|c| c.3).fold(0.0, f64::max);
    if max_var <= 0.0 {
        return validation("every cell has zero sample variance; use the MLE instead");
    }
    let weights: Vec<f64> = cells.iter().map(|c| 1.0 / if c.3 > 0.0 { c.3 } else { max_var }).collect();
    let model = likelihood_model(protocol, data)?;
    let nt = protocol.num_params();
    let objective = |u: &[f64], g: &mut [f64]| -> f64 {
        let x = model.tying_values(u);
        let mut gx = vec![0.0; nt];
        let mut dmu = vec![0.0; nt];
        let mut v = 0.0;
        for (c, w) in cells.iter().zip(&weights) {
            let Ok(mu) = protocol.tying_grad(c.0, &c.1, &x, &mut dmu, LeakageLimit::Symmetric) else {
                return f64::NEG_INFINITY;
            };
            let r = c.2 - mu;
            v -= 0.5 * w * r * r;
            for k in 0..nt {
                gx[k] += w * r * dmu[k];
            }
        }
        g.copy_from_slice(&model.tying_vjp(u, &gx));
        v
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut best: Option<Outcome> = None;
    let base: Vec<f64> = model.prior_mean_point()[..nt].to_vec();
    let mut errors = Vec::new();
    for s in 0..4 {
        let u0: Vec<f64> = if s == 0 { base.clone() } else { (0..nt).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect() };
        match maximize(objective, u0, 5000) {
            Ok(o) if best.as_ref().is_none_or(|b| o.value > b.value) => best = Some(o),
            Ok(_) => {}
            Err(e) => errors.push(e.to_string()),
        }
    }
    let ls = best.ok_or_else(|| Error::Optimizer(format!("least squares failed from every start: {}", errors.join("; "))))?;
    // profile the nuisances at fixed tying values
    // saturated coordinates are pulled back so the binomial likelihood stays finite
    let tying: Vec<f64> = ls.u.iter().map(|v| v.clamp(-SATURATION, SATURATION)).collect();
    let dim = model.layout().dim;
    let profile = |v: &[f64], g: &mut [f64]| -> f64 {
        let mut u = tying.clone();
        u.extend_from_slice(v);
        let mut full = vec![0.0; dim];
        let val = model.log_posterior_grad(&u, &mut full);
        g.copy_from_slice(&full[nt..]);
        val
    };
    let prof = maximize(profile, vec![0.0; dim - nt], 5000)?;
    let mut u = tying;
    u.extend_from_slice(&prof.u);
    let o = Outcome { u, value: prof.value, initial_value: prof.initial_value, iterations: ls.iterations, grad_norm: ls.grad_norm, converged: ls.converged };
    let mut res = result_from(&model, "wlsf", o, 4, errors.len(), Some(prof.value));
    res.std_errors = wlsf_std_errors(&model, &res.unconstrained[..nt], objective);
    Ok(res)
}

/// Curvature of the weighted sum of squares, mapped to tying values.
fn wlsf_std_errors<F: Fn(&[f64], &mut [f64]) -> f64>(model: &HierarchicalModel, u: &[f64], f: F) -> Option<Vec<f64>> {
    let nt = u.len();
    let mut h = DMatrix::<f64>::zeros(nt, nt);
    let (mut gp, mut gm) = (vec![0.0; nt], vec![0.0; nt]);
    let mut w = u.to_vec();
    for j in 0..nt {
        let step = 1e-5 * (1.0 + u[j].abs());
        w[j] = u[j] + step;
        f(&w, &mut gp);
        w[j] = u[j] - step;
        f(&w, &mut gm);
        w[j] = u[j];
        for i in 0..nt {
            h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    let cov = h.cholesky()?.inverse();
    let mut jac = DMatrix::<f64>::zeros(nt, nt);
    for j in 0..nt {
        let step = 1e-6 * (1.0 + u[j].abs());
        w[j] = u[j] + step;
        let xp = model.tying_values(&w);
        w[j] = u[j] - step;
        let xm = model.tying_values(&w);
        w[j] = u[j];
        for i in 0..nt {
            jac[(i, j)] = (xp[i] - xm[i]) / (2.0 * step);
        }
    }
    let cx = &jac * cov * jac.transpose();
    Some((0..nt).map(|k| cx[(k, k)].max(0.0).sqrt()).collect())
}
