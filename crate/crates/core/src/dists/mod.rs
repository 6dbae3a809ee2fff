//! Beta, beta-binomial, PAL and constrained Dirichlet-process beta mixtures.

mod beta;
mod betabin;
mod dp;
mod pal;

pub use beta::{beta_convert, beta_logpdf, beta_logpdf_ab, BetaParams, BetaView};
pub use betabin::{
    beta_binomial_logpmf, beta_binomial_logpmf_ab, beta_binomial_logpmf_ab_grad, beta_binomial_logpmf_grad,
    beta_binomial_logpmf_hessian, beta_binomial_moment, beta_raw_moments,
};
pub use dp::{
    cdpbm_constrain_mean, cdpbm_constrain_two_moments, component_second_moment, log_sum_exp, logistic, logit,
    mean_r_to_ab, mixture_logpdf, mixture_moment, stick_break, stick_break_vjp, BetaMixture, MeanConstraint,
    TwoMomentConstraint, TwoMomentGrad, MEAN_RESIDUAL_TOL, NEWTON_STEPS, TWO_MOMENT_TOL,
};
pub use pal::{pal_logpdf, PalParams};
