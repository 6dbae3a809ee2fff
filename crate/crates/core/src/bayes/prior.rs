use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::dists::PalParams;
use crate::error::{Error, Result};

/// A prior on one scalar parameter (or, for `Dirichlet`, on a simplex block).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorSpec {
    Uniform01,
    Beta { alpha: f64, beta: f64 },
    /// Shape/rate parameterization.
    Gamma { shape: f64, rate: f64 },
    /// Over `(x_1, ..., x_{n-1}, 1 - Σ x)`.
    Dirichlet { alpha: Vec<f64> },
    Pal { p0: f64, z: f64, #[serde(default)] smooth: bool },
    Normal { mean: f64, sd: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        match self {
            PriorSpec::Uniform01 => Ok(()),
            PriorSpec::Beta { alpha, beta } if *alpha > 0.0 && *beta > 0.0 => Ok(()),
            PriorSpec::Gamma { shape, rate } if *shape > 0.0 && *rate > 0.0 => Ok(()),
            PriorSpec::Dirichlet { alpha } if alpha.len() >= 2 && alpha.iter().all(|a| *a > 0.0) => Ok(()),
            PriorSpec::Pal { p0, z, smooth } => PalParams::new(*p0, *z, *smooth).map(|_| ()),
            PriorSpec::Normal { sd, mean } if *sd > 0.0 && mean.is_finite() => Ok(()),
            other => bad(format!("invalid prior {other:?}")),
        }
    }

    /// Whether the support is contained in `[0, 1]`.
    pub fn is_unit_support(&self) -> bool {
        matches!(self, PriorSpec::Uniform01 | PriorSpec::Beta { .. } | PriorSpec::Pal { .. })
    }

    /// Log density and derivative at a scalar `x`; `-∞` outside the support.
    pub fn logpdf_grad(&self, x: f64) -> (f64, f64) {
        match self {
            PriorSpec::Uniform01 => {
                if (0.0..=1.0).contains(&x) {
                    (0.0, 0.0)
                } else {
                    (f64::NEG_INFINITY, 0.0)
                }
            }
            PriorSpec::Beta { alpha, beta } => {
                if !(x > 0.0 && x < 1.0) {
                    return (f64::NEG_INFINITY, 0.0);
                }
                let v = (alpha - 1.0) * x.ln() + (beta - 1.0) * (-x).ln_1p() - ln_beta(*alpha, *beta);
                (v, (alpha - 1.0) / x - (beta - 1.0) / (1.0 - x))
            }
            PriorSpec::Gamma { shape, rate } => {
                if x <= 0.0 {
                    return (f64::NEG_INFINITY, 0.0);
                }
                let v = shape * rate.ln() - ln_gamma(*shape) + (shape - 1.0) * x.ln() - rate * x;
                (v, (shape - 1.0) / x - rate)
            }
            PriorSpec::Pal { p0, z, smooth } => PalParams { p0: *p0, z: *z, smooth: *smooth }.logpdf_grad(x),
            PriorSpec::Normal { mean, sd } => {
                let d = (x - mean) / sd;
                (-0.5 * d * d - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln(), -d / sd)
            }
            PriorSpec::Dirichlet { alpha } => {
                // scalar use: the two-part Dirichlet is a Beta
                if alpha.len() == 2 {
                    PriorSpec::Beta { alpha: alpha[0], beta: alpha[1] }.logpdf_grad(x)
                } else {
                    (f64::NEG_INFINITY, 0.0)
                }
            }
        }
    }

    /// Dirichlet log density on the free coordinates `x` (the last
    /// coordinate is `1 - Σ x`), with gradient written into `grad`.
    pub fn dirichlet_logpdf_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let PriorSpec::Dirichlet { alpha } = self else {
            return f64::NEG_INFINITY;
        };
        let rest = 1.0 - x.iter().sum::<f64>();
        if x.iter().any(|v| *v <= 0.0) || rest <= 0.0 || x.len() + 1 != alpha.len() {
            return f64::NEG_INFINITY;
        }
        let total: f64 = alpha.iter().sum();
        let mut v = ln_gamma(total) - alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>();
        let last = alpha[x.len()] - 1.0;
        v += last * rest.ln();
        for (k, xk) in x.iter().enumerate() {
            v += (alpha[k] - 1.0) * xk.ln();
            grad[k] = (alpha[k] - 1.0) / xk - last / rest;
        }
        v
    }

    /// Prior mean, used for default centering of informative priors.
    pub fn mean(&self) -> Option<f64> {
        match self {
            PriorSpec::Uniform01 => Some(0.5),
            PriorSpec::Beta { alpha, beta } => Some(alpha / (alpha + beta)),
            PriorSpec::Gamma { shape, rate } => Some(shape / rate),
            PriorSpec::Normal { mean, .. } => Some(*mean),
            PriorSpec::Dirichlet { alpha } => Some(alpha[0] / alpha.iter().sum::<f64>()),
            PriorSpec::Pal { .. } => None,
        }
    }
}
