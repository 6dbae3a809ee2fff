use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rayon::prelude::*;
use rbayes::dists::{beta_logpdf, mixture_logpdf, BetaMixture, BetaParams};
use rbayes::sampler::{diagnostics, quantile, read_chains_csv, PosteriorChains};
use serde::Serialize;

use crate::fit::inference_status;
use crate::output::{self, fmt};
use crate::{OutDir, Status, UserError};

#[derive(Args, Debug, Serialize)]
pub struct DiagnoseArgs {
    /// Chains CSV written by `rbayes fit`.
    #[arg(long)]
    chains: PathBuf,
    /// Central credibility of the survival-mean intervals and density envelopes.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Points of the survival-density grid on (0, 1).
    #[arg(long, default_value_t = 99)]
    grid: usize,
    /// Posterior draws used for the density envelopes.
    #[arg(long, default_value_t = 400)]
    density_draws: usize,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

/// `(M, e)` from a `M{m}_e{e}` cell label.
fn parse_label(label: &str) -> Option<(u64, String)> {
    let rest = label.strip_prefix('M')?;
    let (m, e) = rest.split_once("_e")?;
    Some((m.parse().ok()?, e.to_string()))
}

struct Columns<'a> {
    index: HashMap<&'a str, usize>,
}

impl<'a> Columns<'a> {
    fn new(names: &'a [String]) -> Self {
        Self { index: names.iter().enumerate().map(|(k, n)| (n.as_str(), k)).collect() }
    }

    fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// Survival density of one draw for a cell, if the cell carries a full distribution.
fn cell_density(draw: &[f64], cols: &Columns, label: &str) -> Option<Box<dyn Fn(f64) -> f64>> {
    let mu = draw[cols.get(&format!("mu_{label}"))?];
    if let Some(t) = cols.get(&format!("t_{label}")) {
        let b = BetaParams::mean_t(mu, draw[t]).ok()?;
        return Some(Box::new(move |q| beta_logpdf(q, &b).map_or(f64::NAN, f64::exp)));
    }
    let mut weights = Vec::new();
    let mut comps = Vec::new();
    for j in 0.. {
        let Some(w) = cols.get(&format!("w{j}_{label}")) else { break };
        let nu = cols.get(&format!("nu{j}_{label}"))?;
        let r = cols.get(&format!("r{j}_{label}"))?;
        weights.push(draw[w].max(0.0));
        comps.push((draw[nu], draw[r]));
    }
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return None;
    }
    weights.iter_mut().for_each(|w| *w /= total);
    let mix = BetaMixture::new(weights, comps).ok()?;
    Some(Box::new(move |q| mixture_logpdf(q, &mix).map_or(f64::NAN, f64::exp)))
}

fn flat(chains: &PosteriorChains) -> Vec<&Vec<f64>> {
    chains.draws.iter().flatten().collect()
}

fn interval(mut v: Vec<f64>, level: f64) -> (f64, f64, f64) {
    v.retain(|x| x.is_finite());
    v.sort_by(|a, b| a.total_cmp(b));
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let tail = (1.0 - level) / 2.0;
    (mean, quantile(&v, tail), quantile(&v, 1.0 - tail))
}

pub fn run(args: DiagnoseArgs) -> Result<Status> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(UserError("--level must lie in (0, 1)".into()).into());
    }
    if args.grid == 0 || args.density_draws == 0 {
        return Err(UserError("--grid and --density-draws must be positive".into()).into());
    }
    let chains = read_chains_csv(output::open(&args.chains)?).map_err(|e| UserError(format!("{}: {e}", args.chains.display())))?;
    let dir = &args.out.out_dir;
    output::prepare(dir)?;
    let diag = diagnostics(&chains);
    output::write_json(dir, "diagnostics.json", &diag)?;
    let header: Vec<String> = ["name", "r_hat", "ess", "degenerate"].map(String::from).to_vec();
    let opt = |v: Option<f64>| v.map_or(String::new(), fmt);
    let rows: Vec<Vec<String>> = diag.params.iter().map(|p| vec![p.name.clone(), opt(p.r_hat), opt(p.ess), p.degenerate.to_string()]).collect();
    output::write_csv(dir, "diagnostics.csv", &header, &rows)?;

    let cols = Columns::new(&chains.names);
    let draws = flat(&chains);
    let cells: Vec<(String, u64, String)> = chains
        .names
        .iter()
        .filter_map(|n| n.strip_prefix("mu_"))
        .filter_map(|l| parse_label(l).map(|(m, e)| (l.to_string(), m, e)))
        .collect();
    let mut rows = Vec::new();
    for (label, m, e) in &cells {
        let k = cols.get(&format!("mu_{label}")).unwrap_or_default();
        let (mean, lo, hi) = interval(draws.iter().map(|d| d[k]).collect(), args.level);
        rows.push(vec![m.to_string(), e.clone(), fmt(mean), fmt(lo), fmt(hi)]);
    }
    let header: Vec<String> = ["M", "e", "mean", "lo", "hi"].map(String::from).to_vec();
    output::write_csv(dir, "survival_means.csv", &header, &rows)?;

    let stride = draws.len().div_ceil(args.density_draws).max(1);
    let subset: Vec<&Vec<f64>> = draws.iter().step_by(stride).copied().collect();
    let grid: Vec<f64> = (0..args.grid).map(|k| (k as f64 + 0.5) / args.grid as f64).collect();
    let envelopes: Vec<Vec<Vec<String>>> = cells
        .par_iter()
        .map(|(label, m, e)| {
            let dens: Vec<_> = subset.iter().filter_map(|d| cell_density(d, &cols, label)).collect();
            if dens.is_empty() {
                return Vec::new();
            }
            grid.iter()
                .map(|&q| {
                    let (mean, lo, hi) = interval(dens.iter().map(|f| f(q)).collect(), args.level);
                    vec![m.to_string(), e.clone(), fmt(q), fmt(mean), fmt(lo), fmt(hi)]
                })
                .collect()
        })
        .collect();
    let skipped = envelopes.iter().filter(|e| e.is_empty()).count();
    let header: Vec<String> = ["M", "e", "q", "density", "lo", "hi"].map(String::from).to_vec();
    output::write_csv(dir, "survival_densities.csv", &header, &envelopes.concat())?;

    println!("{} chains x {} draws, {} parameters", diag.chains, diag.draws_per_chain, diag.params.len());
    let worst = diag.params.iter().filter_map(|p| p.r_hat.map(|r| (r, &p.name))).max_by(|a, b| a.0.total_cmp(&b.0));
    if let Some((r, name)) = worst {
        println!("max R-hat {r:.4} ({name})");
    }
    if let Some((e, name)) = diag.params.iter().filter_map(|p| p.ess.map(|e| (e, &p.name))).min_by(|a, b| a.0.total_cmp(&b.0)) {
        println!("min ESS {e:.0} ({name})");
    }
    if skipped > 0 {
        println!("note: {skipped} cells carry only moments; no density written for them");
    }
    for n in &diag.notices {
        println!("note: {n}");
    }
    Ok(inference_status(&diag))
}
