//! Hierarchical Bayesian models of RB data.
//!
//! A model stacks three layers: protocol-level parameters tied to cell means
//! through the tying function, a per-cell survival distribution (beta or a
//! constrained Dirichlet-process beta mixture) and an observation layer
//! (binomial counts or Poisson photon counts). Everything is sampled on an
//! unconstrained scale with exact gradients.

mod model;
mod prior;
mod transform;

pub use model::{
    build_beta_model, build_cdpbm_model, build_nv_model, FixedMeanModel, HierarchicalModel, Layout, ModelConfig,
    ModelFamily, NvRates, ObservationKind, Priors, SpamPreset, SurvivalLayer, DEFAULT_K, DEFAULT_LOCATION_SD,
};
pub use prior::PriorSpec;
pub use transform::{Mapped, Transform};
