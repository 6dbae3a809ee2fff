use serde::{Deserialize, Serialize};

use crate::dists::{logistic, logit};
use crate::error::{Error, Result};

/// Map from an unconstrained coordinate `u` to a constrained value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Transform {
    /// `x = logistic(logit(x0) + δ u)` on `(0, 1)`.
    Logit { x0: f64, delta: f64 },
    /// `x = exp(u)` on `(0, ∞)`.
    Log,
    Identity,
}

/// Value of a transform and the pieces needed for the chain rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mapped {
    pub x: f64,
    /// `dx/du`.
    pub dx: f64,
    /// `log |dx/du|`.
    pub log_jac: f64,
    /// `d log|dx/du| / du`.
    pub dlog_jac: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Transform::Logit { x0: 0.5, delta: 1.0 }
    }
}

impl Transform {
    /// Logit transform centred at `x0` whose `u = ±1` maps to about `x0 ± sd`
    /// (`δ = sd / (x0 (1 - x0))`); `sd = None` uses `δ = 0.5`.
    pub fn centered(x0: f64, sd: Option<f64>) -> Self {
        let x0 = x0.clamp(1e-9, 1.0 - 1e-9);
        let delta = match sd {
            Some(s) if s > 0.0 && s.is_finite() => (s / (x0 * (1.0 - x0))).clamp(1e-3, 10.0),
            _ => 0.5,
        };
        Transform::Logit { x0, delta }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Transform::Logit { x0, delta } if x0 > 0.0 && x0 < 1.0 && delta > 0.0 && delta.is_finite() => Ok(()),
            Transform::Logit { .. } => Err(Error::Validation(format!("invalid logit transform {self:?}"))),
            _ => Ok(()),
        }
    }

    pub fn forward(&self, u: f64) -> Mapped {
        match *self {
            Transform::Logit { x0, delta } => {
                let z = logit(x0) + delta * u;
                let x = logistic(z);
                // log(x(1-x)) computed from z to stay finite in the tails
                let log_x1x = -(z.abs()) - 2.0 * (-(z.abs())).exp().ln_1p();
                Mapped { x, dx: delta * x * (1.0 - x), log_jac: delta.ln() + log_x1x, dlog_jac: delta * (1.0 - 2.0 * x) }
            }
            Transform::Log => {
                let x = u.exp();
                Mapped { x, dx: x, log_jac: u, dlog_jac: 1.0 }
            }
            Transform::Identity => Mapped { x: u, dx: 1.0, log_jac: 0.0, dlog_jac: 0.0 },
        }
    }

    pub fn inverse(&self, x: f64) -> f64 {
        match *self {
            Transform::Logit { x0, delta } => (logit(x) - logit(x0)) / delta,
            Transform::Log => x.ln(),
            Transform::Identity => x,
        }
    }
}
