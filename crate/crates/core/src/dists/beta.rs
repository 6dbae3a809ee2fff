use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

/// The six coordinate systems for a beta distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaView {
    /// Shape parameters `(α, β)`.
    AlphaBeta,
    /// Mean and variance `(μ, σ²)`.
    MeanVar,
    /// Mean and raw second moment `(μ, μ₂)`.
    MeanSecond,
    /// Mean and variance fraction `t = 1/(1+α+β)`, so `σ² = t μ(1-μ)`.
    MeanT,
    /// Mean and scaled variance `r`, so `σ² = r μ²(1-μ)²`.
    MeanR,
    /// Mean and concentration `s = α + β`.
    MeanS,
}

/// A beta distribution expressed in one of the [`BetaView`]s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub view: BetaView,
    pub a: f64,
    pub b: f64,
}

fn domain<T>(msg: String) -> Result<T> {
    Err(Error::Domain(msg))
}

impl BetaParams {
    pub fn new(view: BetaView, a: f64, b: f64) -> Result<Self> {
        let p = Self { view, a, b };
        p.check()?;
        Ok(p)
    }

    pub fn alpha_beta(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(BetaView::AlphaBeta, alpha, beta)
    }

    pub fn mean_t(mu: f64, t: f64) -> Result<Self> {
        Self::new(BetaView::MeanT, mu, t)
    }

    pub fn mean_r(mu: f64, r: f64) -> Result<Self> {
        Self::new(BetaView::MeanR, mu, r)
    }

    /// Checks the view's parameter box.
    pub fn check(&self) -> Result<()> {
        let (a, b) = (self.a, self.b);
        if !a.is_finite() || !b.is_finite() {
            return domain(format!("non-finite beta parameters ({a}, {b})"));
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        let ok = match self.view {
            BetaView::AlphaBeta => a > 0.0 && b > 0.0,
            BetaView::MeanVar => unit(a) && b > 0.0 && b < a * (1.0 - a),
            BetaView::MeanSecond => unit(a) && b > a * a && b < a,
            BetaView::MeanT | BetaView::MeanR => unit(a) && unit(b),
            BetaView::MeanS => unit(a) && b > 0.0,
        };
        if ok {
            Ok(())
        } else {
            domain(format!("({a}, {b}) outside the {:?} parameter box", self.view))
        }
    }

    /// Shape parameters `(α, β)`.
    pub fn to_alpha_beta(&self) -> (f64, f64) {
        let (mu, x) = (self.a, self.b);
        match self.view {
            BetaView::AlphaBeta => (mu, x),
            BetaView::MeanVar => (mu * mu * (1.0 - mu) / x - mu, mu * (1.0 - mu) * (1.0 - mu) / x - (1.0 - mu)),
            BetaView::MeanSecond => {
                let k = (mu - x) / (x - mu * mu);
                (mu * k, (1.0 - mu) * k)
            }
            BetaView::MeanT => {
                let s = (1.0 - x) / x;
                (mu * s, (1.0 - mu) * s)
            }
            BetaView::MeanR => (1.0 / (x - x * mu) - mu, 1.0 / (x * mu) + mu - 1.0),
            BetaView::MeanS => (x * mu, x * (1.0 - mu)),
        }
    }

    /// Mean `μ = α/(α+β)`.
    pub fn mean(&self) -> f64 {
        match self.view {
            BetaView::AlphaBeta => self.a / (self.a + self.b),
            _ => self.a,
        }
    }

    /// Variance `σ²`.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        match self.view {
            BetaView::MeanVar => self.b,
            BetaView::MeanSecond => self.b - mu * mu,
            BetaView::MeanT => self.b * mu * (1.0 - mu),
            BetaView::MeanR => self.b * mu * mu * (1.0 - mu) * (1.0 - mu),
            BetaView::MeanS => mu * (1.0 - mu) / (self.b + 1.0),
            BetaView::AlphaBeta => {
                let s = self.a + self.b;
                self.a * self.b / (s * s * (s + 1.0))
            }
        }
    }

    /// Raw moments `E[q^k]` for `k = 0..=4` via the recurrence
    /// `E[q^(k+1)] = E[q^k] (α+k)/(α+β+k)`.
    pub fn raw_moments(&self) -> [f64; 5] {
        let (al, be) = self.to_alpha_beta();
        let mut m = [1.0; 5];
        for k in 0..4 {
            m[k + 1] = m[k] * (al + k as f64) / (al + be + k as f64);
        }
        m
    }
}

/// Converts between views exactly; fails if the result leaves the target box.
pub fn beta_convert(params: &BetaParams, target: BetaView) -> Result<BetaParams> {
    params.check()?;
    if params.view == target {
        return Ok(*params);
    }
    let mu = params.mean();
    let out = match target {
        BetaView::AlphaBeta => {
            let (a, b) = params.to_alpha_beta();
            (a, b)
        }
        // moments from the source whenever the source stores them directly
        BetaView::MeanVar => (mu, params.variance()),
        BetaView::MeanSecond => (mu, params.variance() + mu * mu),
        BetaView::MeanT => match params.view {
            BetaView::MeanS => (mu, 1.0 / (1.0 + params.b)),
            _ => {
                let (a, b) = params.to_alpha_beta();
                (mu, 1.0 / (1.0 + a + b))
            }
        },
        BetaView::MeanR => {
            let (a, b) = params.to_alpha_beta();
            let s = a + b;
            (mu, s * s / (a * b * (1.0 + s)))
        }
        BetaView::MeanS => match params.view {
            BetaView::MeanT => (mu, (1.0 - params.b) / params.b),
            _ => {
                let (a, b) = params.to_alpha_beta();
                (mu, a + b)
            }
        },
    };
    BetaParams::new(target, out.0, out.1)
}

/// `log Beta(q; params)`.
pub fn beta_logpdf(q: f64, params: &BetaParams) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return domain(format!("beta density needs q in (0, 1), got {q}"));
    }
    params.check()?;
    let (a, b) = params.to_alpha_beta();
    Ok(beta_logpdf_ab(q, a, b))
}

/// `log Beta(q; α, β)` without validation.
pub fn beta_logpdf_ab(q: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * q.ln() + (b - 1.0) * (-q).ln_1p() - ln_beta(a, b)
}
