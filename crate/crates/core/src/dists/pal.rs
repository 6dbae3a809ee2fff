use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// "Probably at least" prior: a plateau on `[p0, 1]` with a power-law tail
/// below `p0` carrying total mass `z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PalParams {
    pub p0: f64,
    pub z: f64,
    /// Use the variant whose density is also `C¹` at `p0`.
    pub smooth: bool,
}

impl PalParams {
    pub fn new(p0: f64, z: f64, smooth: bool) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) || !(z > 0.0 && z <= p0) {
            return Err(Error::Domain(format!("PAL needs 0 < z <= p0 < 1, got p0={p0}, z={z}")));
        }
        Ok(Self { p0, z, smooth })
    }

    /// Tail exponent `k = (p0 - z) / (z (1 - p0))`.
    fn exponent(&self) -> f64 {
        (self.p0 - self.z) / (self.z * (1.0 - self.p0))
    }

    fn plateau(&self) -> f64 {
        (1.0 - self.z) / (1.0 - self.p0)
    }

    /// Log density and its derivative in `x`.
    pub fn logpdf_grad(&self, x: f64) -> (f64, f64) {
        if !(0.0..=1.0).contains(&x) {
            return (f64::NEG_INFINITY, 0.0);
        }
        let lp = self.plateau().ln();
        if x >= self.p0 {
            return (lp, 0.0);
        }
        let k = self.exponent();
        let y = x / self.p0;
        if !self.smooth {
            return (lp + k * y.ln(), k / x);
        }
        // g(y) = (1 + m) - m y with m = 2k, so that g(1) = 1 and the
        // density is C¹ at p0.
        let m = 2.0 * k;
        let g = (1.0 + m) - m * y;
        (lp + g.ln() + m * y.ln(), -m / (self.p0 * g) + m / x)
    }
}

/// `log PAL(x)`; `-∞` outside `[0, 1]`.
pub fn pal_logpdf(x: f64, params: &PalParams) -> f64 {
    params.logpdf_grad(x).0
}
