use std::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::{digamma, ln_gamma};

use super::{PriorSpec, Transform};
use crate::dists::{
    beta_binomial_logpmf_ab_grad, beta_binomial_logpmf_grad, cdpbm_constrain_mean, cdpbm_constrain_two_moments,
    log_sum_exp, mean_r_to_ab, stick_break, stick_break_vjp, BetaMixture,
};
use crate::error::{validation, Error, Result};
use crate::protocols::{LeakageLimit, ParamDomain, ProtocolSpec};
use crate::qsim::{group_by_cell, DatasetRecord, Experiment, Observation};
use crate::sampler::{LogDensity, PosteriorModel};

/// Default truncation level of the mixture layer.
pub const DEFAULT_K: usize = 10;
/// Default standard deviation of the normal base measure on logit-locations.
pub const DEFAULT_LOCATION_SD: f64 = 1.9;

/// Distribution of survival probabilities within a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SurvivalLayer {
    Beta,
    /// `latent = false` sums the per-record latent survival out of the
    /// likelihood (finite sum over components).
    Cdpbm { k: usize, latent: bool },
}

/// Photon-count rates of the NV readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NvRates {
    /// Sampled with `0 < α < β`.
    Free,
    Fixed { alpha: f64, beta: f64 },
}

/// How each record's counts relate to its latent survival `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObservationKind {
    Binomial,
    /// `X ~ Pois(α)`, `Y ~ Pois(β)`, `Z ~ Pois(β + (α - β) q)`.
    NvPoisson { rates: NvRates },
}

/// LRB SPAM prior presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpamPreset {
    /// Uniform on every SPAM coefficient.
    Flat,
    /// `A_λ ~ Beta(100, 100)`, `B_λ ~ Beta(1, 100)`.
    Tighter,
}

/// Priors for every block of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// One per tying parameter. For a leakage pair the first slot holds a
    /// three-part Dirichlet and the second slot is ignored; for an offset
    /// parameter the prior applies to the sum with its base.
    pub tying: Vec<PriorSpec>,
    /// Per-cell shape nuisance: the variance fraction `t` for first-moment
    /// protocols, the first-moment fraction `c` for second-moment ones.
    pub nuisance: PriorSpec,
    pub concentration: PriorSpec,
    pub location: PriorSpec,
    pub spread: PriorSpec,
    pub nv_rate: PriorSpec,
}

impl Priors {
    /// Uniform priors on the tying box; `Dir(1, 1, 100)` on leakage pairs.
    pub fn defaults(protocol: &ProtocolSpec) -> Self {
        let tying = protocol
            .param_domains()
            .iter()
            .map(|d| match d {
                ParamDomain::Leakage { .. } => PriorSpec::Dirichlet { alpha: vec![1.0, 1.0, 100.0] },
                _ => PriorSpec::Uniform01,
            })
            .collect();
        Self {
            tying,
            nuisance: PriorSpec::Uniform01,
            concentration: PriorSpec::Gamma { shape: 1.0, rate: 1.0 },
            location: PriorSpec::Normal { mean: 0.0, sd: DEFAULT_LOCATION_SD },
            spread: PriorSpec::Uniform01,
            nv_rate: PriorSpec::Gamma { shape: 1.0, rate: 0.01 },
        }
    }

    /// LRB priors; `Tighter` replaces the flat `A_λ`, `B_λ` priors.
    pub fn lrb_preset(protocol: &ProtocolSpec, preset: SpamPreset) -> Self {
        let mut p = Self::defaults(protocol);
        if preset == SpamPreset::Tighter {
            for (k, name) in protocol.param_names().iter().enumerate() {
                if name.starts_with("A_") {
                    p.tying[k] = PriorSpec::Beta { alpha: 100.0, beta: 100.0 };
                } else if name.starts_with("B_") {
                    p.tying[k] = PriorSpec::Beta { alpha: 1.0, beta: 100.0 };
                }
            }
        }
        p
    }

    fn validate(&self, protocol: &ProtocolSpec) -> Result<()> {
        if self.tying.len() != protocol.num_params() {
            return validation(format!("{} tying priors for {} parameters", self.tying.len(), protocol.num_params()));
        }
        for (k, (p, d)) in self.tying.iter().zip(protocol.param_domains()).enumerate() {
            p.validate()?;
            match d {
                ParamDomain::Leakage { first } if *first == k => {
                    if !matches!(p, PriorSpec::Dirichlet { alpha } if alpha.len() == 3) {
                        return validation("leakage pair needs a three-part Dirichlet prior");
                    }
                }
                ParamDomain::Leakage { .. } => {}
                _ if !p.is_unit_support() => {
                    return validation(format!("parameter {} needs a prior supported on [0, 1]", protocol.param_names()[k]));
                }
                _ => {}
            }
        }
        for p in [&self.nuisance, &self.spread] {
            p.validate()?;
            if !p.is_unit_support() {
                return validation("nuisance and spread priors must be supported on [0, 1]");
            }
        }
        for p in [&self.concentration, &self.nv_rate] {
            p.validate()?;
            if !matches!(p, PriorSpec::Gamma { .. }) {
                return validation("concentration and rate priors must be gamma");
            }
        }
        self.location.validate()
    }
}

/// Model family names used in configuration documents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    #[default]
    Beta,
    Cdpbm,
    Nv,
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(Self::Beta),
            "cdpbm" => Ok(Self::Cdpbm),
            "nv" => Ok(Self::Nv),
            other => validation(format!("unknown model family {other:?}")),
        }
    }
}

fn default_k() -> usize {
    DEFAULT_K
}

/// Declarative model configuration (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub family: ModelFamily,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Keep per-record latent survival explicit in the mixture layer.
    #[serde(default)]
    pub latent: bool,
    /// Survival layer under the NV readout.
    #[serde(default)]
    pub nv_layer: Option<ModelFamily>,
    /// Fixed `(α, β)` NV rates; sampled when absent.
    #[serde(default)]
    pub nv_rates: Option<[f64; 2]>,
    #[serde(default)]
    pub prior_preset: Option<SpamPreset>,
    /// Per tying parameter overrides, keyed by name.
    #[serde(default)]
    pub priors: std::collections::BTreeMap<String, PriorSpec>,
    /// Per tying parameter transforms, keyed by name.
    #[serde(default)]
    pub transforms: std::collections::BTreeMap<String, Transform>,
    #[serde(default)]
    pub likelihood_only: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Beta,
            k: DEFAULT_K,
            latent: false,
            nv_layer: None,
            nv_rates: None,
            prior_preset: None,
            priors: Default::default(),
            transforms: Default::default(),
            likelihood_only: false,
        }
    }
}

impl ModelConfig {
    pub fn priors(&self, protocol: &ProtocolSpec) -> Result<Priors> {
        let mut p = match self.prior_preset {
            Some(preset) => Priors::lrb_preset(protocol, preset),
            None => Priors::defaults(protocol),
        };
        for (name, spec) in &self.priors {
            let k = name_index(protocol, name)?;
            p.tying[k] = spec.clone();
        }
        Ok(p)
    }

    pub fn build(&self, protocol: ProtocolSpec, data: &[DatasetRecord]) -> Result<HierarchicalModel> {
        let priors = self.priors(&protocol)?;
        let mut transforms = vec![Transform::default(); protocol.num_params()];
        for (name, t) in &self.transforms {
            transforms[name_index(&protocol, name)?] = *t;
        }
        let layer = |f: ModelFamily| match f {
            ModelFamily::Cdpbm => SurvivalLayer::Cdpbm { k: self.k, latent: self.latent },
            _ => SurvivalLayer::Beta,
        };
        let (survival, observation) = match self.family {
            ModelFamily::Beta => (SurvivalLayer::Beta, ObservationKind::Binomial),
            ModelFamily::Cdpbm => (layer(ModelFamily::Cdpbm), ObservationKind::Binomial),
            ModelFamily::Nv => {
                let rates = match self.nv_rates {
                    Some([alpha, beta]) => NvRates::Fixed { alpha, beta },
                    None => NvRates::Free,
                };
                (layer(self.nv_layer.unwrap_or(ModelFamily::Beta)), ObservationKind::NvPoisson { rates })
            }
        };
        HierarchicalModel::new(protocol, data, survival, observation, priors, transforms, self.likelihood_only)
    }
}

fn name_index(protocol: &ProtocolSpec, name: &str) -> Result<usize> {
    protocol
        .param_names()
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Validation(format!("no tying parameter named {name:?}")))
}

/// Beta-survival model with the latent survival summed out.
pub fn build_beta_model(protocol: ProtocolSpec, data: &[DatasetRecord], priors: Priors) -> Result<HierarchicalModel> {
    let t = vec![Transform::default(); protocol.num_params()];
    HierarchicalModel::new(protocol, data, SurvivalLayer::Beta, ObservationKind::Binomial, priors, t, false)
}

/// Constrained Dirichlet-process beta-mixture model, truncated at `k`.
pub fn build_cdpbm_model(protocol: ProtocolSpec, data: &[DatasetRecord], priors: Priors, k: usize) -> Result<HierarchicalModel> {
    let t = vec![Transform::default(); protocol.num_params()];
    let layer = SurvivalLayer::Cdpbm { k, latent: false };
    HierarchicalModel::new(protocol, data, layer, ObservationKind::Binomial, priors, t, false)
}

/// NV photon-count model over a beta (or mixture) survival layer.
pub fn build_nv_model(
    protocol: ProtocolSpec,
    data: &[DatasetRecord],
    priors: Priors,
    survival: SurvivalLayer,
    rates: NvRates,
) -> Result<HierarchicalModel> {
    let t = vec![Transform::default(); protocol.num_params()];
    HierarchicalModel::new(protocol, data, survival, ObservationKind::NvPoisson { rates }, priors, t, false)
}

#[derive(Clone, Debug)]
enum Counts {
    Binomial { n: u64, q: u64 },
    Nv { x: u64, y: u64, z: u64 },
}

#[derive(Clone, Debug)]
struct Cell {
    m: u64,
    e: Experiment,
    counts: Vec<Counts>,
    /// Index into the latent block of this cell's first record.
    latent_start: usize,
    offset: usize,
}

/// Offsets of the parameter blocks in the unconstrained vector.
///
/// The order is: tying parameters; one block per `(M, e)` cell in
/// ascending `(M, e)` order (beta: the nuisance; mixture: `K - 1` stick
/// fractions, log-concentration, `K` logit-locations, `K` spreads, then
/// the first-moment fraction for second-moment protocols); one latent
/// survival per record (when explicit); the NV rate pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub tying: usize,
    pub cell_block: usize,
    pub cells: usize,
    pub latent_offset: usize,
    pub latents: usize,
    pub rate_offset: usize,
    pub dim: usize,
}

/// A hierarchical log-posterior over unconstrained coordinates.
#[derive(Debug)]
pub struct HierarchicalModel {
    protocol: ProtocolSpec,
    survival: SurvivalLayer,
    observation: ObservationKind,
    priors: Priors,
    transforms: Vec<Transform>,
    nuisance_transform: Transform,
    cells: Vec<Cell>,
    layout: Layout,
    likelihood_only: bool,
    nonfinite: AtomicU64,
    constant: f64,
}

impl Clone for HierarchicalModel {
    fn clone(&self) -> Self {
        Self {
            protocol: self.protocol.clone(),
            survival: self.survival,
            observation: self.observation,
            priors: self.priors.clone(),
            transforms: self.transforms.clone(),
            nuisance_transform: self.nuisance_transform,
            cells: self.cells.clone(),
            layout: self.layout.clone(),
            likelihood_only: self.likelihood_only,
            nonfinite: AtomicU64::new(0),
            constant: self.constant,
        }
    }
}

const LATENT_TRANSFORM: Transform = Transform::Logit { x0: 0.5, delta: 1.0 };

fn cell_label(m: u64, e: &Experiment) -> String {
    format!("M{m}_e{}", e.to_string().replace(',', "-"))
}

impl HierarchicalModel {
    pub fn new(
        protocol: ProtocolSpec,
        data: &[DatasetRecord],
        survival: SurvivalLayer,
        observation: ObservationKind,
        priors: Priors,
        transforms: Vec<Transform>,
        likelihood_only: bool,
    ) -> Result<Self> {
        priors.validate(&protocol)?;
        if transforms.len() != protocol.num_params() {
            return validation("one transform per tying parameter is required");
        }
        for t in &transforms {
            t.validate()?;
            if !matches!(t, Transform::Logit { .. }) {
                return validation("tying parameters use logit transforms");
            }
        }
        if let SurvivalLayer::Cdpbm { k, .. } = survival {
            if k < 2 {
                return validation("mixture truncation K must be at least 2");
            }
        }
        let nv = matches!(observation, ObservationKind::NvPoisson { .. });
        if let ObservationKind::NvPoisson { rates: NvRates::Fixed { alpha, beta } } = observation {
            if !(alpha > 0.0 && beta > 0.0) {
                return validation("NV rates must be positive");
            }
        }
        let latent = nv || matches!(survival, SurvivalLayer::Cdpbm { latent: true, .. });
        if likelihood_only && (latent || !matches!(survival, SurvivalLayer::Beta)) {
            return validation("likelihood-only evaluation needs the marginal beta model");
        }
        let nt = protocol.num_params();
        let order = protocol.moment_order();
        let cell_block = match survival {
            SurvivalLayer::Beta => 1,
            SurvivalLayer::Cdpbm { k, .. } => 3 * k + usize::from(order == 2),
        };
        let groups = group_by_cell(data);
        let mut cells = Vec::with_capacity(groups.len());
        let mut latents = 0;
        let mut constant = 0.0;
        for (idx, ((m, e), records)) in groups.into_iter().enumerate() {
            if !protocol.experiments().contains(&e) {
                return Err(Error::InvalidExperiment(format!("{e} is not an experiment of {}", protocol.id())));
            }
            let mut counts = Vec::with_capacity(records.len());
            for r in records {
                let rec = &data[r];
                rec.validate()?;
                match (&rec.obs, nv) {
                    (Observation::Binomial { n, q }, false) => {
                        if latent {
                            constant += ln_binomial(*n, *q);
                        }
                        counts.push(Counts::Binomial { n: *n, q: *q });
                    }
                    (Observation::Nv { x, y, z }, true) => {
                        constant -= ln_gamma(*x as f64 + 1.0) + ln_gamma(*y as f64 + 1.0) + ln_gamma(*z as f64 + 1.0);
                        counts.push(Counts::Nv { x: *x, y: *y, z: *z });
                    }
                    _ => return validation("observation type does not match the model family"),
                }
            }
            let start = latents;
            if latent {
                latents += counts.len();
            }
            cells.push(Cell { m, e, counts, latent_start: start, offset: nt + idx * cell_block });
        }
        let latent_offset = nt + cells.len() * cell_block;
        let rate_offset = latent_offset + latents;
        let rates = usize::from(matches!(observation, ObservationKind::NvPoisson { rates: NvRates::Free }));
        let layout = Layout {
            tying: nt,
            cell_block,
            cells: cells.len(),
            latent_offset,
            latents,
            rate_offset,
            dim: rate_offset + 2 * rates,
        };
        let model = Self {
            protocol,
            survival,
            observation,
            priors,
            transforms,
            nuisance_transform: Transform::default(),
            cells,
            layout,
            likelihood_only,
            nonfinite: AtomicU64::new(0),
            constant,
        };
        Ok(model)
    }

    /// Replaces the tying-parameter transforms (centering only changes
    /// sampling efficiency, never the posterior).
    pub fn with_transforms(mut self, transforms: Vec<Transform>) -> Result<Self> {
        if transforms.len() != self.protocol.num_params() {
            return validation("one transform per tying parameter is required");
        }
        for t in &transforms {
            t.validate()?;
        }
        self.transforms = transforms;
        Ok(self)
    }

    /// Centres every tying transform on `x` with spreads `sd` (`None` uses
    /// the fallback scale).
    pub fn centered_on(self, x: &[f64], sd: Option<&[f64]>) -> Result<Self> {
        let mut t = Vec::with_capacity(x.len());
        let domains = self.protocol.param_domains().to_vec();
        for (k, d) in domains.iter().enumerate() {
            let s = sd.map(|s| s[k]);
            let tr = match *d {
                ParamDomain::Unit => Transform::centered(x[k], s),
                ParamDomain::OffsetOf(b) => Transform::centered(x[k] + x[b], s),
                ParamDomain::Leakage { first } if first == k => Transform::centered(x[k], s),
                ParamDomain::Leakage { first } => {
                    let rest = 1.0 - x[first];
                    Transform::centered(x[k] / rest, s.map(|v| v / rest))
                }
            };
            t.push(tr);
        }
        self.with_transforms(t)
    }

    pub fn protocol(&self) -> &ProtocolSpec {
        &self.protocol
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn survival(&self) -> SurvivalLayer {
        self.survival
    }

    pub fn observation(&self) -> ObservationKind {
        self.observation
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    /// `(M, e)` of each cell in layout order.
    pub fn cells(&self) -> Vec<(u64, Experiment)> {
        self.cells.iter().map(|c| (c.m, c.e.clone())).collect()
    }

    /// Number of evaluations that produced a non-finite value (reported as `-∞`).
    pub fn nonfinite_count(&self) -> u64 {
        self.nonfinite.load(Ordering::Relaxed)
    }

    /// `log p(u | D)` up to a constant (or the log-likelihood in
    /// likelihood-only mode).
    pub fn log_posterior(&self, u: &[f64]) -> f64 {
        let mut g = vec![0.0; u.len()];
        self.log_posterior_grad(u, &mut g)
    }

    pub fn grad_log_posterior(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; u.len()];
        let v = self.log_posterior_grad(u, &mut g);
        if !v.is_finite() {
            return Err(Error::Domain("log posterior is not finite at this point".into()));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite gradient".into()));
        }
        Ok(g)
    }

    /// Value and gradient; `-∞` (with zero gradient) outside the support.
    pub fn log_posterior_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if u.len() != self.layout.dim || grad.len() != self.layout.dim {
            return f64::NEG_INFINITY;
        }
        let v = self.eval(u, grad);
        match v {
            Some(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => v,
            Some(v) => {
                if v.is_nan() || v.is_finite() {
                    self.nonfinite.fetch_add(1, Ordering::Relaxed);
                }
                grad.iter_mut().for_each(|g| *g = 0.0);
                f64::NEG_INFINITY
            }
            None => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                f64::NEG_INFINITY
            }
        }
    }

    /// Tying parameters from unconstrained coordinates, with `dx/du`
    /// pieces and the prior + log-Jacobian contributions.
    fn tying_forward(&self, u: &[f64], x: &mut [f64], gx: &mut [f64], grad: &mut [f64], with_prior: bool) -> Option<(f64, TyingJac)> {
        let nt = self.layout.tying;
        let mut lp = 0.0;
        let mut jac = TyingJac { dx: vec![0.0; nt], ..Default::default() };
        let domains = self.protocol.param_domains();
        for k in 0..nt {
            match domains[k] {
                ParamDomain::Unit => {
                    let m = self.transforms[k].forward(u[k]);
                    x[k] = m.x;
                    jac.dx[k] = m.dx;
                    if with_prior {
                        lp += m.log_jac;
                        grad[k] += m.dlog_jac;
                        let (p, dp) = self.priors.tying[k].logpdf_grad(m.x);
                        lp += p;
                        gx[k] += dp;
                    }
                }
                ParamDomain::Leakage { first } if first == k => {
                    let m1 = self.transforms[k].forward(u[k]);
                    let m2 = self.transforms[k + 1].forward(u[k + 1]);
                    let (z1, z2) = (m1.x, m2.x);
                    x[k] = z1;
                    x[k + 1] = (1.0 - z1) * z2;
                    jac.pair.push(PairJac { first: k, z1, z2, dz1: m1.dx, dz2: m2.dx });
                    if with_prior {
                        lp += m1.log_jac + (-z1).ln_1p() + m2.log_jac;
                        grad[k] += m1.dlog_jac - m1.dx / (1.0 - z1);
                        grad[k + 1] += m2.dlog_jac;
                        let mut dg = [0.0; 2];
                        let p = self.priors.tying[k].dirichlet_logpdf_grad(&x[k..k + 2], &mut dg);
                        if !p.is_finite() {
                            return None;
                        }
                        lp += p;
                        gx[k] += dg[0];
                        gx[k + 1] += dg[1];
                    }
                }
                _ => {}
            }
        }
        // offsets after their bases
        for k in 0..nt {
            if let ParamDomain::OffsetOf(b) = domains[k] {
                let m = self.transforms[k].forward(u[k]);
                x[k] = m.x - x[b];
                jac.dx[k] = m.dx;
                if with_prior {
                    lp += m.log_jac;
                    grad[k] += m.dlog_jac;
                    let (p, dp) = self.priors.tying[k].logpdf_grad(m.x);
                    lp += p;
                    // prior on the sum y = x_k + x_b, gradient taken w.r.t. y
                    jac.dy_prior.push((k, dp));
                }
            }
        }
        Some((lp, jac))
    }

    fn tying_backward(&self, gx: &mut [f64], jac: &TyingJac, grad: &mut [f64]) {
        let domains = self.protocol.param_domains();
        let nt = self.layout.tying;
        // x_k = y_k - x_b: the y-gradient is gx_k, and x_b picks up -gx_k
        for k in 0..nt {
            if let ParamDomain::OffsetOf(b) = domains[k] {
                let gy = gx[k] + jac.dy_prior.iter().filter(|(j, _)| *j == k).map(|(_, d)| d).sum::<f64>();
                grad[k] += gy * jac.dx[k];
                gx[b] -= gx[k];
            }
        }
        for k in 0..nt {
            if domains[k] == ParamDomain::Unit {
                grad[k] += gx[k] * jac.dx[k];
            }
        }
        for p in &jac.pair {
            let (g1, g2) = (gx[p.first], gx[p.first + 1]);
            grad[p.first] += (g1 - p.z2 * g2) * p.dz1;
            grad[p.first + 1] += (1.0 - p.z1) * g2 * p.dz2;
        }
    }

    fn eval(&self, u: &[f64], grad: &mut [f64]) -> Option<f64> {
        let nt = self.layout.tying;
        let mut x = vec![0.0; nt];
        let mut gx = vec![0.0; nt];
        let (mut lp, mut jac) = self.tying_forward(u, &mut x, &mut gx, grad, !self.likelihood_only)?;
        lp += self.constant;
        let (rates, rate_grad) = self.rates(u, grad, &mut lp)?;
        let mut dmu_x = vec![0.0; nt];
        let mut dr = [0.0; 2];
        for cell in &self.cells {
            let mu = self.protocol.tying_grad(cell.m, &cell.e, &x, &mut dmu_x, LeakageLimit::Symmetric).ok()?;
            if !(mu > 0.0 && mu < 1.0) {
                return None;
            }
            let (v, dmu) = self.eval_cell(cell, mu, u, grad, rates, &mut dr)?;
            lp += v;
            for k in 0..nt {
                gx[k] += dmu * dmu_x[k];
            }
        }
        if let Some(rg) = rate_grad {
            let (a, b) = rates.unwrap();
            // α = e^{u1}, β = α + e^{u2}
            let o = self.layout.rate_offset;
            grad[o] += (dr[0] + dr[1] + rg[0] + rg[1]) * a;
            grad[o + 1] += (dr[1] + rg[1]) * (b - a);
        }
        self.tying_backward(&mut gx, &jac, grad);
        jac.dy_prior.clear();
        Some(lp)
    }

    /// NV rates with prior and Jacobian folded into `lp`; returns the
    /// prior gradient in `(α, β)` when sampled.
    fn rates(&self, u: &[f64], grad: &mut [f64], lp: &mut f64) -> Option<(Option<(f64, f64)>, Option<[f64; 2]>)> {
        match self.observation {
            ObservationKind::Binomial => Some((None, None)),
            ObservationKind::NvPoisson { rates: NvRates::Fixed { alpha, beta } } => Some((Some((alpha, beta)), None)),
            ObservationKind::NvPoisson { rates: NvRates::Free } => {
                let o = self.layout.rate_offset;
                let a = u[o].exp();
                let b = a + u[o + 1].exp();
                let (pa, da) = self.priors.nv_rate.logpdf_grad(a);
                let (pb, db) = self.priors.nv_rate.logpdf_grad(b);
                *lp += pa + pb + u[o] + u[o + 1];
                grad[o] += 1.0;
                grad[o + 1] += 1.0;
                Some((Some((a, b)), Some([da, db])))
            }
        }
    }

    /// Log-likelihood of one cell plus its nuisance priors. Returns the
    /// value and `d/dμ` where `μ` is the tied moment.
    fn eval_cell(
        &self,
        cell: &Cell,
        mu: f64,
        u: &[f64],
        grad: &mut [f64],
        rates: Option<(f64, f64)>,
        dr: &mut [f64; 2],
    ) -> Option<(f64, f64)> {
        let second = self.protocol.moment_order() == 2;
        match self.survival {
            SurvivalLayer::Beta => {
                let o = cell.offset;
                let m = self.nuisance_transform.forward(u[o]);
                let mut lp = 0.0;
                let mut dnuis = 0.0;
                if !self.likelihood_only {
                    let (p, dp) = self.priors.nuisance.logpdf_grad(m.x);
                    lp += m.log_jac + p;
                    grad[o] += m.dlog_jac;
                    dnuis = dp;
                }
                // (μ1, t) of the beta and their derivatives in (tied, nuisance)
                let (mu1, t, j) = if second { second_moment_shape(mu, m.x) } else { (mu, m.x, [[1.0, 0.0], [0.0, 1.0]]) };
                if !(mu1 > 0.0 && mu1 < 1.0 && t > 0.0 && t < 1.0) {
                    return None;
                }
                let (mut g1, mut gt) = (0.0, 0.0);
                for (i, c) in cell.counts.iter().enumerate() {
                    match *c {
                        Counts::Binomial { n, q } => {
                            let (v, a, b) = beta_binomial_logpmf_grad(q, n, mu1, t);
                            lp += v;
                            g1 += a;
                            gt += b;
                        }
                        Counts::Nv { x, y, z } => {
                            let li = self.layout.latent_offset + cell.latent_start + i;
                            let lm = LATENT_TRANSFORM.forward(u[li]);
                            let (v, dq, a, b) = beta_logpdf_mt_grad(lm.x, mu1, t);
                            let (pv, pq) = poisson_triplet(x, y, z, lm.x, rates?, dr);
                            lp += v + pv + lm.log_jac;
                            grad[li] += (dq + pq) * lm.dx + lm.dlog_jac;
                            g1 += a;
                            gt += b;
                        }
                    }
                }
                // chain (μ1, t) back to (μ, nuisance)
                let dmu = g1 * j[0][0] + gt * j[1][0];
                dnuis += g1 * j[0][1] + gt * j[1][1];
                grad[o] += dnuis * m.dx;
                Some((lp, dmu))
            }
            SurvivalLayer::Cdpbm { k, latent } => self.eval_mixture_cell(cell, mu, u, grad, rates, dr, k, latent, second),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn eval_mixture_cell(
        &self,
        cell: &Cell,
        mu: f64,
        u: &[f64],
        grad: &mut [f64],
        rates: Option<(f64, f64)>,
        dr: &mut [f64; 2],
        k: usize,
        latent: bool,
        second: bool,
    ) -> Option<(f64, f64)> {
        let o = cell.offset;
        let (ov, oa, on, or) = (o, o + k - 1, o + k, o + 2 * k);
        let mut lp = 0.0;
        // concentration
        let la = u[oa];
        let alpha = la.exp();
        let (pa, dpa) = self.priors.concentration.logpdf_grad(alpha);
        lp += pa + la;
        let mut dalpha = dpa;
        grad[oa] += 1.0;
        // sticks ~ Beta(1, α)
        let mut v = vec![0.0; k - 1];
        let mut dv_dz = vec![0.0; k - 1];
        let mut dv = vec![0.0; k - 1];
        for j in 0..k - 1 {
            let m = LATENT_TRANSFORM.forward(u[ov + j]);
            v[j] = m.x;
            dv_dz[j] = m.dx;
            lp += m.log_jac + alpha.ln() + (alpha - 1.0) * (-m.x).ln_1p();
            grad[ov + j] += m.dlog_jac;
            dv[j] -= (alpha - 1.0) / (1.0 - m.x);
            dalpha += 1.0 / alpha + (-m.x).ln_1p();
        }
        // base measure
        let nu_star = &u[on..on + k];
        for j in 0..k {
            let (p, dp) = self.priors.location.logpdf_grad(nu_star[j]);
            lp += p;
            grad[on + j] += dp;
        }
        let mut r = vec![0.0; k];
        let mut dr_du = vec![0.0; k];
        for j in 0..k {
            let m = LATENT_TRANSFORM.forward(u[or + j]);
            r[j] = m.x;
            dr_du[j] = m.dx;
            let (p, dp) = self.priors.spread.logpdf_grad(m.x);
            lp += p + m.log_jac;
            grad[or + j] += m.dlog_jac + dp * m.dx;
        }
        let w = stick_break(&v);
        // constrained locations
        let (nu, targets) = if second {
            let oc = o + 3 * k;
            let cm = self.nuisance_transform.forward(u[oc]);
            let (p, dp) = self.priors.nuisance.logpdf_grad(cm.x);
            lp += p + cm.log_jac;
            grad[oc] += cm.dlog_jac + dp * cm.dx;
            let s = mu.sqrt();
            let mu1 = mu + cm.x * (s - mu);
            let c = cdpbm_constrain_two_moments(nu_star, &r, &w, mu1, mu).ok()?;
            (c.nu.clone(), Targets::Two { c, cm })
        } else {
            let c = cdpbm_constrain_mean(nu_star, &w, mu).ok()?;
            (c.nu.clone(), Targets::One(c))
        };
        // likelihood
        let mut dnu = vec![0.0; k];
        let mut dw = vec![0.0; k];
        let mut dr_direct = vec![0.0; k];
        let ab: Vec<(f64, f64)> = nu.iter().zip(&r).map(|(&n, &rr)| mean_r_to_ab(n, rr)).collect();
        if ab.iter().any(|&(a, b)| !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite())) {
            return None;
        }
        let mut terms = vec![0.0; k];
        let mut parts = vec![(0.0, 0.0, 0.0); k];
        for (i, cnt) in cell.counts.iter().enumerate() {
            if let (false, Counts::Binomial { n, q }) = (latent, cnt) {
                let (n, q) = (*n, *q);
                for j in 0..k {
                    let (val, da, db) = beta_binomial_logpmf_ab_grad(q, n, ab[j].0, ab[j].1);
                    terms[j] = w[j].ln() + val;
                    parts[j] = (val, da, db);
                }
            } else {
                let li = self.layout.latent_offset + cell.latent_start + i;
                let lm = LATENT_TRANSFORM.forward(u[li]);
                let qv = lm.x;
                let mut dq_mix = vec![0.0; k];
                for j in 0..k {
                    let (val, dq, da, db) = beta_logpdf_ab_grad(qv, ab[j].0, ab[j].1);
                    terms[j] = w[j].ln() + val;
                    parts[j] = (val, da, db);
                    dq_mix[j] = dq;
                }
                let (obs, dq_obs) = match *cnt {
                    Counts::Binomial { n, q } => {
                        let (nf, qf) = (n as f64, q as f64);
                        let l1q = (-qv).ln_1p();
                        let v = if q > 0 { qf * qv.ln() } else { 0.0 } + if q < n { (nf - qf) * l1q } else { 0.0 };
                        (v, qf / qv - (nf - qf) / (1.0 - qv))
                    }
                    Counts::Nv { x, y, z } => poisson_triplet(x, y, z, qv, rates?, dr),
                };
                let total = log_sum_exp(&terms);
                let dq: f64 = (0..k).map(|j| (terms[j] - total).exp() * dq_mix[j]).sum();
                lp += obs + lm.log_jac;
                grad[li] += (dq + dq_obs) * lm.dx + lm.dlog_jac;
                lp += total;
                self.accumulate_mixture(&terms, total, &parts, &nu, &r, &mut dnu, &mut dr_direct, &mut dw);
                continue;
            }
            let total = log_sum_exp(&terms);
            lp += total;
            self.accumulate_mixture(&terms, total, &parts, &nu, &r, &mut dnu, &mut dr_direct, &mut dw);
        }
        // pull back through the constraint
        let dmu = match targets {
            Targets::One(c) => {
                let (ds, dw2, dmu) = c.vjp(&w, &dnu);
                for j in 0..k {
                    grad[on + j] += ds[j];
                    dw[j] += dw2[j];
                    grad[or + j] += dr_direct[j] * dr_du[j];
                }
                dmu
            }
            Targets::Two { c, cm } => {
                let g = c.vjp(nu_star, &r, &w, &dnu);
                for j in 0..k {
                    grad[on + j] += g.nu_star[j];
                    dw[j] += g.w[j];
                    grad[or + j] += (dr_direct[j] + g.r[j]) * dr_du[j];
                }
                let s = mu.sqrt();
                let oc = o + 3 * k;
                grad[oc] += g.mu1 * (s - mu) * cm.dx;
                g.mu2 + g.mu1 * (1.0 - cm.x + cm.x / (2.0 * s))
            }
        };
        let dv_w = stick_break_vjp(&v, &dw);
        for j in 0..k - 1 {
            grad[ov + j] += (dv[j] + dv_w[j]) * dv_dz[j];
        }
        grad[oa] += dalpha * alpha;
        Some((lp, dmu))
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate_mixture(
        &self,
        terms: &[f64],
        total: f64,
        parts: &[(f64, f64, f64)],
        nu: &[f64],
        r: &[f64],
        dnu: &mut [f64],
        dr: &mut [f64],
        dw: &mut [f64],
    ) {
        for j in 0..terms.len() {
            let resp = (terms[j] - total).exp();
            let (val, da, db) = parts[j];
            // responsibility / w_j without dividing by a vanishing weight
            dw[j] += (val - total).exp();
            let (mu, rr) = (nu[j], r[j]);
            let a_mu = 1.0 / (rr * (1.0 - mu) * (1.0 - mu)) - 1.0;
            let b_mu = 1.0 - 1.0 / (rr * mu * mu);
            let a_r = -1.0 / (rr * rr * (1.0 - mu));
            let b_r = -1.0 / (rr * rr * mu);
            dnu[j] += resp * (da * a_mu + db * b_mu);
            dr[j] += resp * (da * a_r + db * b_r);
        }
    }

    /// Unconstrained coordinates of the prior means. The NV rates, whose
    /// vague prior would put both means at the same value, start at the
    /// average bright and dark counts instead.
    pub fn prior_mean_point(&self) -> Vec<f64> {
        let mut u = vec![0.0; self.layout.dim];
        let domains = self.protocol.param_domains();
        for k in 0..self.layout.tying {
            let prior = &self.priors.tying[k];
            let x = match (domains[k], prior) {
                (ParamDomain::Leakage { first }, PriorSpec::Dirichlet { alpha }) if first == k => Some(alpha[0] / alpha.iter().sum::<f64>()),
                (ParamDomain::Leakage { first }, _) => match &self.priors.tying[first] {
                    PriorSpec::Dirichlet { alpha } => Some(alpha[1] / (alpha[1] + alpha[2])),
                    _ => None,
                },
                _ => prior.mean(),
            };
            if let Some(x) = x {
                u[k] = self.transforms[k].inverse(x);
            }
        }
        let nuis = self.priors.nuisance.mean().map_or(0.0, |x| self.nuisance_transform.inverse(x));
        for c in &self.cells {
            match self.survival {
                SurvivalLayer::Beta => u[c.offset] = nuis,
                SurvivalLayer::Cdpbm { k, .. } => {
                    u[c.offset + k - 1] = self.priors.concentration.mean().map_or(0.0, f64::ln);
                    // spread over base-measure quantiles; identical locations
                    // cannot meet a two-moment constraint
                    let (m, sd) = match self.priors.location {
                        PriorSpec::Normal { mean, sd } => (mean, sd),
                        _ => (self.priors.location.mean().unwrap_or(0.0), 1.0),
                    };
                    let z = statrs::distribution::Normal::new(m, sd).unwrap();
                    for j in 0..k {
                        u[c.offset + k + j] = statrs::distribution::ContinuousCDF::inverse_cdf(&z, (j as f64 + 0.5) / k as f64);
                    }
                    if let Some(r) = self.priors.spread.mean() {
                        let r = LATENT_TRANSFORM.inverse(r);
                        u[c.offset + 2 * k..c.offset + 3 * k].iter_mut().for_each(|v| *v = r);
                    }
                    if self.protocol.moment_order() == 2 {
                        u[c.offset + 3 * k] = nuis;
                    }
                }
            }
        }
        if self.layout.dim > self.layout.rate_offset {
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
            for c in &self.cells {
                for cnt in &c.counts {
                    if let Counts::Nv { x, y, .. } = cnt {
                        sx += *x as f64;
                        sy += *y as f64;
                        n += 1.0;
                    }
                }
            }
            let a = (sx / n).max(0.5);
            let b = (sy / n).max(a + 0.5);
            let o = self.layout.rate_offset;
            u[o] = a.ln();
            u[o + 1] = (b - a).ln();
        }
        u
    }

    /// Pulls a gradient in tying values `x` back to the first
    /// `layout.tying` unconstrained coordinates (no prior or Jacobian terms).
    pub fn tying_vjp(&self, u: &[f64], gx: &[f64]) -> Vec<f64> {
        let nt = self.layout.tying;
        let mut x = vec![0.0; nt];
        let mut scratch = vec![0.0; nt];
        let mut grad = vec![0.0; nt];
        match self.tying_forward(u, &mut x, &mut scratch, &mut grad, false) {
            Some((_, jac)) => {
                let mut g = gx.to_vec();
                self.tying_backward(&mut g, &jac, &mut grad);
                grad
            }
            None => vec![f64::NAN; nt],
        }
    }

    /// Tying parameters in constrained coordinates.
    pub fn tying_values(&self, u: &[f64]) -> Vec<f64> {
        let nt = self.layout.tying;
        let mut x = vec![0.0; nt];
        let mut gx = vec![0.0; nt];
        let mut g = vec![0.0; u.len().max(nt)];
        match self.tying_forward(u, &mut x, &mut gx, &mut g, !self.likelihood_only) {
            Some(_) => x,
            None => {
                // prior outside support still has well-defined coordinates
                let domains = self.protocol.param_domains();
                for k in 0..nt {
                    let m = self.transforms[k].forward(u[k]);
                    x[k] = m.x;
                    if let ParamDomain::Leakage { first } = domains[k] {
                        if first != k {
                            x[k] = (1.0 - x[first]) * m.x;
                        }
                    }
                }
                for k in 0..nt {
                    if let ParamDomain::OffsetOf(b) = domains[k] {
                        x[k] -= x[b];
                    }
                }
                x
            }
        }
    }

    /// Unconstrained coordinates of tying values `x` (other blocks at 0).
    pub fn unconstrain_tying(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.layout.dim];
        for (k, d) in self.protocol.param_domains().iter().enumerate() {
            let v = match *d {
                ParamDomain::Unit => x[k],
                ParamDomain::OffsetOf(b) => x[k] + x[b],
                ParamDomain::Leakage { first } if first == k => x[k],
                ParamDomain::Leakage { first } => x[k] / (1.0 - x[first]),
            };
            u[k] = self.transforms[k].inverse(v.clamp(1e-12, 1.0 - 1e-12));
        }
        u
    }

    /// Beta mixture of each cell at `u` (a single component for the beta layer).
    pub fn survival_distributions(&self, u: &[f64]) -> Result<Vec<BetaMixture>> {
        let x = self.tying_values(u);
        let second = self.protocol.moment_order() == 2;
        let mut out = Vec::with_capacity(self.cells.len());
        for cell in &self.cells {
            let mu = self.protocol.tying(self.protocol.moment_order(), cell.m, &cell.e, &x)?;
            match self.survival {
                SurvivalLayer::Beta => {
                    let nuis = self.nuisance_transform.forward(u[cell.offset]).x;
                    let (mu1, t, _) = if second { second_moment_shape(mu, nuis) } else { (mu, nuis, [[0.0; 2]; 2]) };
                    // (μ, t) to (μ, r): σ² = t μ(1-μ) = r μ²(1-μ)²
                    let r = t / (mu1 * (1.0 - mu1));
                    out.push(BetaMixture { weights: vec![1.0], components: vec![(mu1, r)] });
                }
                SurvivalLayer::Cdpbm { k, .. } => {
                    let o = cell.offset;
                    let v: Vec<f64> = (0..k - 1).map(|j| LATENT_TRANSFORM.forward(u[o + j]).x).collect();
                    let w = stick_break(&v);
                    let nu_star = &u[o + k..o + 2 * k];
                    let r: Vec<f64> = (0..k).map(|j| LATENT_TRANSFORM.forward(u[o + 2 * k + j]).x).collect();
                    let nu = if second {
                        let c = self.nuisance_transform.forward(u[o + 3 * k]).x;
                        let mu1 = mu + c * (mu.sqrt() - mu);
                        cdpbm_constrain_two_moments(nu_star, &r, &w, mu1, mu)?.nu
                    } else {
                        cdpbm_constrain_mean(nu_star, &w, mu)?.nu
                    };
                    out.push(BetaMixture { weights: w, components: nu.into_iter().zip(r).collect() });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Default)]
struct TyingJac {
    dx: Vec<f64>,
    pair: Vec<PairJac>,
    dy_prior: Vec<(usize, f64)>,
}

#[derive(Debug)]
struct PairJac {
    first: usize,
    z1: f64,
    z2: f64,
    dz1: f64,
    dz2: f64,
}

enum Targets {
    One(crate::dists::MeanConstraint),
    Two { c: crate::dists::TwoMomentConstraint, cm: super::transform::Mapped },
}

/// `(μ1, t)` of a beta with second moment `μ2` and first moment
/// `μ2 + c (√μ2 - μ2)`, with the Jacobian `∂(μ1, t)/∂(μ2, c)`.
fn second_moment_shape(mu2: f64, c: f64) -> (f64, f64, [[f64; 2]; 2]) {
    let s = mu2.sqrt();
    let mu1 = mu2 + c * (s - mu2);
    let d1_dmu2 = 1.0 - c + c / (2.0 * s);
    let d1_dc = s - mu2;
    let v = mu1 * (1.0 - mu1);
    let t = (mu2 - mu1 * mu1) / v;
    let dt_dmu1 = (-2.0 * mu1 * v - (mu2 - mu1 * mu1) * (1.0 - 2.0 * mu1)) / (v * v);
    let dt_dmu2 = 1.0 / v;
    (mu1, t, [[d1_dmu2, d1_dc], [dt_dmu2 + dt_dmu1 * d1_dmu2, dt_dmu1 * d1_dc]])
}

/// `log Beta(q; a, b)` with derivatives in `(q, a, b)`.
fn beta_logpdf_ab_grad(q: f64, a: f64, b: f64) -> (f64, f64, f64, f64) {
    let lq = q.ln();
    let l1q = (-q).ln_1p();
    let v = (a - 1.0) * lq + (b - 1.0) * l1q - statrs::function::beta::ln_beta(a, b);
    let ps = digamma(a + b);
    (v, (a - 1.0) / q - (b - 1.0) / (1.0 - q), lq - digamma(a) + ps, l1q - digamma(b) + ps)
}

/// `log Beta(q; μ, t)` with derivatives in `(q, μ, t)`.
fn beta_logpdf_mt_grad(q: f64, mu: f64, t: f64) -> (f64, f64, f64, f64) {
    let s = 1.0 / t - 1.0;
    let (v, dq, da, db) = beta_logpdf_ab_grad(q, mu * s, (1.0 - mu) * s);
    (v, dq, s * (da - db), -(mu * da + (1.0 - mu) * db) / (t * t))
}

/// Poisson triplet log-likelihood (without factorials); returns the value
/// and `d/dq`, and accumulates `d/dα`, `d/dβ` into `dr`.
fn poisson_triplet(x: u64, y: u64, z: u64, q: f64, (a, b): (f64, f64), dr: &mut [f64; 2]) -> (f64, f64) {
    let lam = b + (a - b) * q;
    let (xf, yf, zf) = (x as f64, y as f64, z as f64);
    let v = xf * a.ln() - a + yf * b.ln() - b + zf * lam.ln() - lam;
    let dz = zf / lam - 1.0;
    dr[0] += xf / a - 1.0 + q * dz;
    dr[1] += yf / b - 1.0 + (1.0 - q) * dz;
    (v, (a - b) * dz)
}

impl LogDensity for HierarchicalModel {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.log_posterior_grad(u, grad)
    }
}

impl PosteriorModel for HierarchicalModel {
    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.protocol.param_names().to_vec();
        let nuis = if self.protocol.moment_order() == 2 { "c" } else { "t" };
        for c in &self.cells {
            let l = cell_label(c.m, &c.e);
            names.push(format!("mu_{l}"));
            match self.survival {
                SurvivalLayer::Beta => names.push(format!("{nuis}_{l}")),
                SurvivalLayer::Cdpbm { k, .. } => {
                    names.push(format!("alpha_{l}"));
                    names.push(format!("neff_{l}"));
                    for j in 0..k {
                        names.push(format!("w{j}_{l}"));
                    }
                    for j in 0..k {
                        names.push(format!("nu{j}_{l}"));
                    }
                    for j in 0..k {
                        names.push(format!("r{j}_{l}"));
                    }
                }
            }
        }
        for i in 0..self.layout.latents {
            names.push(format!("q{i}"));
        }
        if self.layout.dim > self.layout.rate_offset {
            names.push("rate_alpha".into());
            names.push("rate_beta".into());
        }
        names
    }

    fn constrain(&self, u: &[f64]) -> Vec<f64> {
        let x = self.tying_values(u);
        let mut out = x.clone();
        let mixtures = self.survival_distributions(u).ok();
        for (ci, c) in self.cells.iter().enumerate() {
            let mu = self.protocol.tying(self.protocol.moment_order(), c.m, &c.e, &x).unwrap_or(f64::NAN);
            out.push(mu);
            match self.survival {
                SurvivalLayer::Beta => out.push(self.nuisance_transform.forward(u[c.offset]).x),
                SurvivalLayer::Cdpbm { k, .. } => {
                    out.push(u[c.offset + k - 1].exp());
                    match &mixtures {
                        Some(m) => {
                            let mix = &m[ci];
                            out.push(mix.effective_components());
                            out.extend(&mix.weights);
                            out.extend(mix.components.iter().map(|c| c.0));
                            out.extend(mix.components.iter().map(|c| c.1));
                        }
                        None => out.extend(std::iter::repeat_n(f64::NAN, 3 * k + 1)),
                    }
                }
            }
        }
        for i in 0..self.layout.latents {
            out.push(LATENT_TRANSFORM.forward(u[self.layout.latent_offset + i]).x);
        }
        if self.layout.dim > self.layout.rate_offset {
            let o = self.layout.rate_offset;
            let a = u[o].exp();
            out.push(a);
            out.push(a + u[o + 1].exp());
        }
        out
    }

    fn initial_point(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let jitter = Normal::new(0.0, 0.1).unwrap();
        let mut u = self.prior_mean_point();
        for v in u.iter_mut() {
            *v += jitter.sample(rng);
        }
        u
    }

    fn primary_index(&self) -> Option<usize> {
        Some(self.protocol.primary_param())
    }
}

/// Binomial data sharing one success probability `μ` with a `[0, 1]`
/// prior; the posterior under a uniform prior is `Beta(1 + ΣQ, 1 + Σ(N - Q))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedMeanModel {
    pub successes: u64,
    pub failures: u64,
    pub prior: PriorSpec,
    pub transform: Transform,
}

impl FixedMeanModel {
    pub fn new(data: &[DatasetRecord], prior: PriorSpec) -> Result<Self> {
        prior.validate()?;
        if !prior.is_unit_support() {
            return validation("fixed-mean prior must be supported on [0, 1]");
        }
        let (mut s, mut f) = (0, 0);
        for r in data {
            let (n, q) = r.counts().ok_or_else(|| Error::Validation("fixed-mean model needs binomial counts".into()))?;
            s += q;
            f += n - q;
        }
        Ok(Self { successes: s, failures: f, prior, transform: Transform::default() })
    }
}

impl LogDensity for FixedMeanModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.transform.forward(u[0]);
        let (p, dp) = self.prior.logpdf_grad(m.x);
        let (s, f) = (self.successes as f64, self.failures as f64);
        let v = s * m.x.ln() + f * (-m.x).ln_1p() + p + m.log_jac;
        grad[0] = (s / m.x - f / (1.0 - m.x) + dp) * m.dx + m.dlog_jac;
        if !v.is_finite() {
            grad[0] = 0.0;
            return f64::NEG_INFINITY;
        }
        v
    }
}

impl PosteriorModel for FixedMeanModel {
    fn param_names(&self) -> Vec<String> {
        vec!["mu".into()]
    }

    fn constrain(&self, u: &[f64]) -> Vec<f64> {
        vec![self.transform.forward(u[0]).x]
    }

    fn initial_point(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        vec![Normal::new(0.0, 0.1).unwrap().sample(rng)]
    }

    fn primary_index(&self) -> Option<usize> {
        Some(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::{logit, mixture_moment};
    use crate::protocols::ProtocolId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn records(protocol: &ProtocolSpec, ms: &[u64], n: u64, per_cell: u32, seed: u64) -> Vec<DatasetRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for &m in ms {
            for e in protocol.experiments() {
                for i in 0..per_cell {
                    let q = rng.random_range(n / 2..=n);
                    out.push(DatasetRecord::binomial(m, e.clone(), i, n, q).unwrap());
                }
            }
        }
        out
    }

    fn nv_records(protocol: &ProtocolSpec, ms: &[u64], per_cell: u32, seed: u64) -> Vec<DatasetRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for &m in ms {
            for e in protocol.experiments() {
                for i in 0..per_cell {
                    let (x, y, z) = (rng.random_range(40..60), rng.random_range(90..110), rng.random_range(55..95));
                    out.push(DatasetRecord::nv(m, e.clone(), i, x, y, z).unwrap());
                }
            }
        }
        out
    }

    /// Fourth-order central differences.
    fn fd_grad(model: &HierarchicalModel, u: &[f64]) -> Vec<f64> {
        let mut w = u.to_vec();
        (0..u.len())
            .map(|k| {
                let h = 1e-4 * (1.0 + u[k].abs());
                let mut f = |d: f64| {
                    w[k] = u[k] + d;
                    let v = model.log_posterior(&w);
                    w[k] = u[k];
                    v
                };
                (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
            })
            .collect()
    }

    fn check_gradients(model: &HierarchicalModel, points: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = model.prior_mean_point();
        let mut done = 0;
        let mut tries = 0;
        while done < points {
            tries += 1;
            assert!(tries < 50 * points, "too few finite points");
            let u: Vec<f64> = base.iter().map(|b| b + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
            let Ok(g) = model.grad_log_posterior(&u) else { continue };
            let num = fd_grad(model, &u);
            if num.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let err = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * norm.max(1.0), "relative error {} at {u:?}", err / norm);
            done += 1;
        }
    }

    fn protocol(id: ProtocolId) -> ProtocolSpec {
        ProtocolSpec::from_id(id).unwrap()
    }

    #[test]
    fn beta_gradients() {
        for id in [ProtocolId::Rb, ProtocolId::Irb, ProtocolId::Unitarity, ProtocolId::Dihedral, ProtocolId::Lrb] {
            let p = protocol(id);
            let data = records(&p, &[1, 3, 10], 20, 3, 1);
            let m = build_beta_model(p.clone(), &data, Priors::defaults(&p)).unwrap();
            check_gradients(&m, 10, 2);
        }
    }

    #[test]
    fn mixture_gradients() {
        for id in [ProtocolId::Rb, ProtocolId::Unitarity] {
            let p = protocol(id);
            let data = records(&p, &[1, 4], 15, 4, 3);
            for latent in [false, true] {
                let layer = SurvivalLayer::Cdpbm { k: 3, latent };
                let m = HierarchicalModel::new(p.clone(), &data, layer, ObservationKind::Binomial, Priors::defaults(&p), vec![Transform::default(); 3], false)
                    .unwrap();
                check_gradients(&m, 10, 4);
            }
        }
    }

    #[test]
    fn nv_gradients() {
        let p = protocol(ProtocolId::Rb);
        let data = nv_records(&p, &[1, 5], 3, 5);
        for (layer, rates) in [
            (SurvivalLayer::Beta, NvRates::Free),
            (SurvivalLayer::Cdpbm { k: 3, latent: true }, NvRates::Fixed { alpha: 50.0, beta: 100.0 }),
            (SurvivalLayer::Cdpbm { k: 3, latent: true }, NvRates::Free),
        ] {
            let m = build_nv_model(p.clone(), &data, Priors::defaults(&p), layer, rates).unwrap();
            check_gradients(&m, 10, 6);
        }
    }

    #[test]
    fn layout_and_names() {
        let p = protocol(ProtocolId::Rb);
        let data = nv_records(&p, &[1, 5], 3, 5);
        let m = build_nv_model(p.clone(), &data, Priors::defaults(&p), SurvivalLayer::Cdpbm { k: 4, latent: true }, NvRates::Free).unwrap();
        let l = m.layout();
        assert_eq!((l.tying, l.cell_block, l.cells, l.latent_offset, l.latents, l.rate_offset, l.dim), (3, 12, 2, 27, 6, 33, 35));
        let names = m.param_names();
        assert_eq!(names.len(), m.constrain(&m.prior_mean_point()).len());
        assert_eq!(&names[..4], &["p", "A", "B", "mu_M1_e0"]);
        assert_eq!(&names[names.len() - 2..], &["rate_alpha", "rate_beta"]);
    }

    #[test]
    fn finite_at_prior_mean() {
        for id in [ProtocolId::Rb, ProtocolId::Irb, ProtocolId::Unitarity, ProtocolId::Dihedral, ProtocolId::Lrb] {
            let p = protocol(id);
            let data = records(&p, &[1, 3, 10], 20, 2, 7);
            for cfg in [ModelConfig::default(), ModelConfig { family: ModelFamily::Cdpbm, ..Default::default() }] {
                let m = cfg.build(p.clone(), &data).unwrap();
                assert!(m.log_posterior(&m.prior_mean_point()).is_finite(), "{id} {:?}", cfg.family);
            }
        }
    }

    #[test]
    fn empty_dataset_is_prior() {
        let p = protocol(ProtocolId::Rb);
        let m = build_beta_model(p.clone(), &[], Priors::defaults(&p)).unwrap();
        assert_eq!(m.layout().dim, 3);
        let u = [0.3, -1.2, 2.0];
        let prior: f64 = u.iter().map(|v| Transform::default().forward(*v).log_jac).sum();
        assert!((m.log_posterior(&u) - prior).abs() < 1e-12);
    }

    #[test]
    fn single_shot_likelihood_ignores_spread() {
        let p = protocol(ProtocolId::Rb);
        let data: Vec<_> = (0..6).map(|i| DatasetRecord::binomial(1 + i as u64 % 3, 0.into(), i, 1, u64::from(i % 2 == 0)).unwrap()).collect();
        let mut m = build_beta_model(p.clone(), &data, Priors::defaults(&p)).unwrap();
        m.likelihood_only = true;
        let mut u = vec![0.4, 0.9, -0.7, 0.0, 0.0, 0.0];
        let x = m.tying_values(&u);
        let expect: f64 = data
            .iter()
            .map(|r| {
                let mu = p.tying(1, r.m, &r.e, &x).unwrap();
                if r.counts().unwrap().1 == 1 { mu.ln() } else { (-mu).ln_1p() }
            })
            .sum();
        let a = m.log_posterior(&u);
        assert!((a - expect).abs() < 1e-10);
        u[4] = 3.0;
        u[5] = -2.5;
        assert!((m.log_posterior(&u) - a).abs() < 1e-10);
    }

    #[test]
    fn mixture_moments_match_tying() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for id in [ProtocolId::Rb, ProtocolId::Unitarity] {
            let p = protocol(id);
            let data = records(&p, &[1, 4, 12], 15, 2, 3);
            let m = build_cdpbm_model(p.clone(), &data, Priors::defaults(&p), DEFAULT_K).unwrap();
            let mut checked = 0;
            for _ in 0..600 {
                let u: Vec<f64> = (0..m.layout().dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let Ok(mix) = m.survival_distributions(&u) else { continue };
                let x = m.tying_values(&u);
                for ((mm, e), g) in m.cells().iter().zip(&mix) {
                    let order = p.moment_order();
                    let target = p.tying(order, *mm, e, &x).unwrap();
                    assert!((mixture_moment(order, g).unwrap() - target).abs() < 1e-10, "{id} {} {target} {g:?}", mixture_moment(order, g).unwrap());
                }
                checked += 1;
            }
            assert!(checked > 100, "{checked}");
        }
    }

    #[test]
    fn fixed_mean_matches_conjugate_posterior() {
        let data: Vec<_> = (0..4).map(|i| DatasetRecord::binomial(1, 0.into(), i, 10, 3 + u64::from(i)).unwrap()).collect();
        let m = FixedMeanModel::new(&data, PriorSpec::Uniform01).unwrap();
        let (a, b) = (1.0 + 18.0, 1.0 + 22.0);
        let density = |u: f64| {
            let t = Transform::default().forward(u);
            crate::dists::beta_logpdf_ab(t.x, a, b) + t.log_jac
        };
        let (u1, u2) = (0.3, -0.8);
        let diff = m.log_density(&[u1]) - m.log_density(&[u2]);
        assert!((diff - (density(u1) - density(u2))).abs() < 1e-12);
        // density in u is x^a (1 - x)^b, with mode a / (a + b)
        let mode = logit(a / (a + b));
        let mut g = [0.0];
        m.log_density_grad(&[mode], &mut g);
        assert!(g[0].abs() < 1e-12);
    }

    #[test]
    fn poisson_endpoints() {
        let mut dr = [0.0; 2];
        let (v1, _) = poisson_triplet(3, 4, 7, 1.0, (5.0, 9.0), &mut dr);
        let (v2, _) = poisson_triplet(3, 4, 7, 0.0, (7.0, 9.0), &mut dr);
        let z_term = |lam: f64| 7.0 * f64::ln(lam) - lam;
        assert!((v1 - (3.0 * 5f64.ln() - 5.0 + 4.0 * 9f64.ln() - 9.0 + z_term(5.0))).abs() < 1e-12);
        assert!((v2 - (3.0 * 7f64.ln() - 7.0 + 4.0 * 9f64.ln() - 9.0 + z_term(9.0))).abs() < 1e-12);
        let (a, da) = poisson_triplet(3, 4, 7, 0.2, (6.0, 6.0), &mut dr);
        let (b, _) = poisson_triplet(3, 4, 7, 0.9, (6.0, 6.0), &mut dr);
        assert!(da == 0.0 && (a - b).abs() < 1e-14);
    }

    #[test]
    fn config_rejects_bad_documents() {
        let p = protocol(ProtocolId::Rb);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"family":"beta","bogus":1}"#).is_err());
        let cfg: ModelConfig = serde_json::from_str(r#"{"family":"beta","priors":{"q":{"type":"uniform01"}}}"#).unwrap();
        assert!(cfg.build(p.clone(), &[]).is_err());
        let cfg: ModelConfig = serde_json::from_str(r#"{"priors":{"p":{"type":"gamma","shape":1,"rate":1}}}"#).unwrap();
        assert!(cfg.build(p.clone(), &[]).is_err());
        let cfg = ModelConfig { family: ModelFamily::Cdpbm, likelihood_only: true, ..Default::default() };
        assert!(cfg.build(p, &[]).is_err());
    }
}
