use serde::{Deserialize, Serialize};

use super::PosteriorChains;

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    /// Posterior mean (Bayes estimate).
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    /// `(level, lower, upper)` central credible intervals.
    pub intervals: Vec<(f64, f64, f64)>,
    /// `(α, p_α)` with `Pr(x > p_α) = α`.
    pub lower_bounds: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub alpha_levels: Vec<f64>,
    pub params: Vec<ParamSummary>,
}

impl Summary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

impl ParamSummary {
    pub fn lower_bound(&self, alpha: f64) -> Option<f64> {
        self.lower_bounds.iter().find(|(a, _)| (a - alpha).abs() < 1e-12).map(|(_, v)| *v)
    }

    pub fn interval(&self, level: f64) -> Option<(f64, f64)> {
        self.intervals.iter().find(|(a, _, _)| (a - level).abs() < 1e-12).map(|(_, l, u)| (*l, *u))
    }
}

/// Summarizes pooled draws of every parameter.
pub fn summarize(chains: &PosteriorChains, alpha_levels: &[f64]) -> Summary {
    let params = chains
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut x = chains.pooled(k);
            x.sort_by(f64::total_cmp);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let sd = if x.len() > 1 { (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            ParamSummary {
                name: name.clone(),
                mean,
                sd,
                median: quantile(&x, 0.5),
                intervals: alpha_levels
                    .iter()
                    .map(|&a| (a, quantile(&x, 0.5 * (1.0 - a)), quantile(&x, 0.5 * (1.0 + a))))
                    .collect(),
                lower_bounds: alpha_levels.iter().map(|&a| (a, quantile(&x, 1.0 - a))).collect(),
            }
        })
        .collect();
    Summary { alpha_levels: alpha_levels.to_vec(), params }
}
