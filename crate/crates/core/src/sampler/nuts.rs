use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{find_initial, ChainStats, LogDensity, PosteriorChains, PosteriorModel, SamplerConfig};
use crate::dists::log_sum_exp;
use crate::error::{Error, Result};

/// Energy error beyond which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;
/// Fraction of post-warmup divergences that triggers a warning.
pub const DIVERGENCE_WARNING: f64 = 0.2;

#[derive(Clone, Debug)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, M: ?Sized> {
    model: &'a M,
    inv_metric: Vec<f64>,
}

impl<M: LogDensity + ?Sized> Hamiltonian<'_, M> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(a, m)| a * a * m).sum::<f64>()
    }

    fn energy(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(a, m)| a * m).collect()
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for k in 0..z.q.len() {
            z.p[k] += 0.5 * eps * z.g[k];
        }
        for k in 0..z.q.len() {
            z.q[k] += eps * self.inv_metric[k] * z.p[k];
        }
        z.logp = self.model.log_density_grad(&z.q, &mut z.g);
        if !z.logp.is_finite() {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for k in 0..z.q.len() {
            z.p[k] += 0.5 * eps * z.g[k];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

struct TreeStats {
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

struct Subtree {
    propose: Point,
    log_w: f64,
    rho: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    ps_beg: Vec<f64>,
    ps_end: Vec<f64>,
}

struct Nuts<'a, M: ?Sized> {
    h: Hamiltonian<'a, M>,
    eps: f64,
    max_depth: usize,
}

impl<M: LogDensity + ?Sized> Nuts<'_, M> {
    /// Builds a subtree of `2^depth` leapfrog steps from the moving edge `z`.
    /// Returns `None` when the subtree diverged or turned back on itself.
    fn build(&self, depth: usize, z: &mut Point, sign: f64, h0: f64, st: &mut TreeStats, rng: &mut ChaCha8Rng) -> Option<Subtree> {
        if depth == 0 {
            self.h.leapfrog(z, sign * self.eps);
            st.n_leapfrog += 1;
            let h = self.h.energy(z);
            if h - h0 > MAX_DELTA_H {
                st.divergent = true;
            }
            let lw = h0 - h;
            st.sum_metro += if lw > 0.0 { 1.0 } else { lw.exp() };
            if st.divergent {
                return None;
            }
            let ps = self.h.p_sharp(&z.p);
            return Some(Subtree {
                propose: z.clone(),
                log_w: lw,
                rho: z.p.clone(),
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                ps_beg: ps.clone(),
                ps_end: ps,
            });
        }
        let init = self.build(depth - 1, z, sign, h0, st, rng)?;
        let fin = self.build(depth - 1, z, sign, h0, st, rng)?;
        let log_w = log_sum_exp(&[init.log_w, fin.log_w]);
        let take_final = fin.log_w > log_w || rng.random::<f64>() < (fin.log_w - log_w).exp();
        let rho = add(&init.rho, &fin.rho);
        let mut persist = criterion(&init.ps_beg, &fin.ps_end, &rho);
        persist &= criterion(&init.ps_beg, &fin.ps_beg, &add(&init.rho, &fin.p_beg));
        persist &= criterion(&init.ps_end, &fin.ps_end, &add(&fin.rho, &init.p_end));
        if !persist {
            return None;
        }
        Some(Subtree {
            propose: if take_final { fin.propose } else { init.propose },
            log_w,
            rho,
            p_beg: init.p_beg,
            p_end: fin.p_end,
            ps_beg: init.ps_beg,
            ps_end: fin.ps_end,
        })
    }

    /// One NUTS transition; returns the new point, acceptance statistic,
    /// depth reached and whether a divergence occurred.
    fn transition(&self, current: &Point, rng: &mut ChaCha8Rng) -> (Point, f64, usize, bool) {
        let dim = current.q.len();
        let mut z0 = current.clone();
        for k in 0..dim {
            let n: f64 = rng.sample(StandardNormal);
            z0.p[k] = n / self.h.inv_metric[k].sqrt();
        }
        let h0 = self.h.energy(&z0);
        let mut z_fwd = z0.clone();
        let mut z_bck = z0.clone();
        let mut sample = z0.clone();
        let ps0 = self.h.p_sharp(&z0.p);
        let (mut p_fwd_fwd, mut p_bck_bck) = (z0.p.clone(), z0.p.clone());
        let (mut ps_fwd_fwd, mut ps_bck_bck) = (ps0.clone(), ps0);
        let mut rho = z0.p.clone();
        let mut log_w = 0.0;
        let mut st = TreeStats { n_leapfrog: 0, sum_metro: 0.0, divergent: false };
        let mut depth = 0;
        while depth < self.max_depth {
            let forward = rng.random::<f64>() > 0.5;
            let sub = if forward {
                self.build(depth, &mut z_fwd, 1.0, h0, &mut st, rng)
            } else {
                self.build(depth, &mut z_bck, -1.0, h0, &mut st, rng)
            };
            let Some(sub) = sub else { break };
            depth += 1;
            if sub.log_w > log_w || rng.random::<f64>() < (sub.log_w - log_w).exp() {
                sample = sub.propose;
            }
            log_w = log_sum_exp(&[log_w, sub.log_w]);
            // inner edges of the two halves around the join
            let (rho_b, rho_f, p_bck_fwd, ps_bck_fwd, p_fwd_bck, ps_fwd_bck) = if forward {
                let pb = std::mem::replace(&mut p_fwd_fwd, sub.p_end);
                let psb = std::mem::replace(&mut ps_fwd_fwd, sub.ps_end);
                (std::mem::take(&mut rho), sub.rho, pb, psb, sub.p_beg, sub.ps_beg)
            } else {
                let pf = std::mem::replace(&mut p_bck_bck, sub.p_end);
                let psf = std::mem::replace(&mut ps_bck_bck, sub.ps_end);
                (sub.rho, std::mem::take(&mut rho), sub.p_beg, sub.ps_beg, pf, psf)
            };
            rho = add(&rho_b, &rho_f);
            let mut persist = criterion(&ps_bck_bck, &ps_fwd_fwd, &rho);
            persist &= criterion(&ps_bck_bck, &ps_fwd_bck, &add(&rho_b, &p_fwd_bck));
            persist &= criterion(&ps_bck_fwd, &ps_fwd_fwd, &add(&rho_f, &p_bck_fwd));
            if !persist {
                break;
            }
        }
        let accept = if st.n_leapfrog > 0 { st.sum_metro / st.n_leapfrog as f64 } else { 0.0 };
        (sample, accept, depth, st.divergent)
    }
}

/// Dual-averaging step-size adaptation.
struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, delta: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, delta }
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let a = accept.clamp(0.0, 1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let xe = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - xe) * self.x_bar + xe * x;
        x.exp()
    }

    fn final_eps(&self) -> f64 {
        self.x_bar.exp()
    }
}

fn init_point<M: LogDensity + ?Sized>(model: &M, q: Vec<f64>) -> Point {
    let mut g = vec![0.0; q.len()];
    let logp = model.log_density_grad(&q, &mut g);
    Point { p: vec![0.0; q.len()], q, g, logp }
}

/// Doubles or halves `eps` until the one-step acceptance crosses 0.8.
fn heuristic_step_size<M: LogDensity + ?Sized>(h: &Hamiltonian<'_, M>, z: &Point, mut eps: f64, rng: &mut ChaCha8Rng) -> f64 {
    let trial = |eps: f64, rng: &mut ChaCha8Rng| -> f64 {
        let mut y = z.clone();
        for k in 0..y.p.len() {
            let n: f64 = rng.sample(StandardNormal);
            y.p[k] = n / h.inv_metric[k].sqrt();
        }
        let h0 = h.energy(&y);
        h.leapfrog(&mut y, eps);
        let d = h0 - h.energy(&y);
        if d.is_nan() {
            f64::NEG_INFINITY
        } else {
            d
        }
    };
    let first = trial(eps, rng);
    let dir = if first > 0.8f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..60 {
        let d = trial(eps, rng);
        if (dir > 0.0 && d <= 0.8f64.ln()) || (dir < 0.0 && d > 0.8f64.ln()) {
            break;
        }
        eps = if dir > 0.0 { eps * 2.0 } else { eps * 0.5 };
        if !(1e-12..1e6).contains(&eps) {
            break;
        }
    }
    eps
}

fn regularized_variance(samples: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = samples.len();
    if n < 10 {
        return None;
    }
    let dim = samples[0].len();
    let nf = n as f64;
    let mut out = vec![0.0; dim];
    for k in 0..dim {
        let m = samples.iter().map(|s| s[k]).sum::<f64>() / nf;
        let v = samples.iter().map(|s| (s[k] - m).powi(2)).sum::<f64>() / (nf - 1.0);
        out[k] = (nf / (nf + 5.0)) * v + 1e-3 * (5.0 / (nf + 5.0));
    }
    Some(out)
}

/// Multinomial NUTS with a diagonal metric. Warmup schedule (fractions of
/// the warmup length): `[0, 0.15)` step size only; `[0.15, 0.5)` first
/// metric window; `[0.5, 0.9)` final metric window; `[0.9, 1)` step size.
pub fn hmc_nuts<M: PosteriorModel + ?Sized>(model: &M, config: &SamplerConfig) -> Result<PosteriorChains> {
    config.validate()?;
    let results: Result<Vec<(Vec<Vec<f64>>, ChainStats)>> =
        (0..config.chains).into_par_iter().map(|c| run_chain(model, config, c)).collect();
    let (draws, stats): (Vec<_>, Vec<_>) = results?.into_iter().unzip();
    let mut chains = PosteriorChains { names: model.param_names(), draws, stats, warnings: Vec::new() };
    let frac = chains.divergence_fraction();
    if frac > DIVERGENCE_WARNING {
        chains.warnings.push(format!("{:.1}% of transitions diverged after warmup", 100.0 * frac));
    }
    Ok(chains)
}

fn run_chain<M: PosteriorModel + ?Sized>(model: &M, config: &SamplerConfig, c: usize) -> Result<(Vec<Vec<f64>>, ChainStats)> {
    let mut rng = config.chain_rng(c);
    let q = find_initial(model, &mut rng)?;
    let dim = q.len();
    let mut z = init_point(model, q);
    let mut nuts = Nuts { h: Hamiltonian { model, inv_metric: vec![1.0; dim] }, eps: 1.0, max_depth: config.max_depth };
    nuts.eps = match config.step_size {
        Some(e) => e,
        None => heuristic_step_size(&nuts.h, &z, 1.0, &mut rng),
    };
    let w = config.warmup;
    let bounds = [(w as f64 * 0.15) as usize, w / 2, (w as f64 * 0.9) as usize];
    let mut da = DualAveraging::new(nuts.eps, config.target_accept);
    let mut window: Vec<Vec<f64>> = Vec::new();
    for it in 0..w {
        let (next, accept, _, _) = nuts.transition(&z, &mut rng);
        z = next;
        nuts.eps = da.learn(accept);
        if it >= bounds[0] && it < bounds[2] {
            window.push(z.q.clone());
        }
        if it + 1 == bounds[1] || it + 1 == bounds[2] {
            if let Some(v) = regularized_variance(&window) {
                nuts.h.inv_metric = v;
                nuts.eps = heuristic_step_size(&nuts.h, &z, nuts.eps, &mut rng);
                da = DualAveraging::new(nuts.eps, config.target_accept);
            }
            window.clear();
        }
    }
    if w > 0 {
        nuts.eps = da.final_eps();
    }
    if !nuts.eps.is_finite() || nuts.eps <= 0.0 {
        return Err(Error::Sampler(format!("step size adaptation failed in chain {c}")));
    }
    let mut draws = Vec::with_capacity(config.keep);
    let mut stats = ChainStats { step_size: nuts.eps, ..Default::default() };
    let total = config.keep * config.thin;
    let mut depth_sum = 0usize;
    for it in 0..total {
        let (next, accept, depth, divergent) = nuts.transition(&z, &mut rng);
        z = next;
        stats.accept += accept;
        stats.divergences += usize::from(divergent);
        depth_sum += depth;
        stats.max_depth_hits += usize::from(depth >= config.max_depth);
        if it % config.thin == config.thin - 1 {
            draws.push(model.constrain(&z.q));
        }
    }
    stats.accept /= total as f64;
    stats.mean_tree_depth = depth_sum as f64 / total as f64;
    Ok((draws, stats))
}

/// Energy error of `steps` leapfrog steps of size `eps` from `(q, p)` with
/// unit metric; used to check the integrator order.
pub fn leapfrog_energy_error<M: LogDensity + ?Sized>(model: &M, q: &[f64], p: &[f64], eps: f64, steps: usize) -> f64 {
    let h = Hamiltonian { model, inv_metric: vec![1.0; q.len()] };
    let mut z = init_point(model, q.to_vec());
    z.p = p.to_vec();
    let h0 = h.energy(&z);
    for _ in 0..steps {
        h.leapfrog(&mut z, eps);
    }
    h.energy(&z) - h0
}
