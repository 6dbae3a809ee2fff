use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rbayes::bayes::{ModelConfig, ModelFamily};
use rbayes::freq::{bootstrap, mle_fit_with, wlsf_fit, BootstrapKind, BootstrapOptions, FitResult, MleOptions};
use rbayes::protocols::ProtocolSpec;
use rbayes::qsim::{read_jsonl, DatasetRecord};
use rbayes::sampler::{diagnostics, hmc_nuts, metropolis_hastings, summarize, write_chains_csv, Diagnostics, SamplerConfig, Summary};
use serde::Serialize;

use crate::output::{self, fmt};
use crate::{OutDir, Protocol, Status, UserError};

/// R-hat above this is reported as a warning.
pub const RHAT_WARN: f64 = 1.1;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Beta,
    Cdpbm,
    Nv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nuts,
    Mh,
    Mle,
    Bootstrap,
    Wlsf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    Nonparametric,
    Parametric,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// JSON-lines dataset.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "rb")]
    protocol: Protocol,
    /// Model family (overrides the family in --model-config).
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long, value_enum, default_value = "nuts")]
    method: Method,
    /// JSON model configuration (priors, transforms, K, NV rates).
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Mixture truncation for the CDPBM family.
    #[arg(long)]
    k: Option<usize>,
    /// Fixed NV rates `alpha,beta` (sampled when omitted).
    #[arg(long, value_delimiter = ',')]
    nv_rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    /// Kept draws per chain.
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Credibility levels for intervals and one-sided bounds p_α.
    #[arg(long, default_value = "0.5,0.95", value_delimiter = ',')]
    alpha_levels: Vec<f64>,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 600)]
    replicates: usize,
    #[arg(long, value_enum, default_value = "nonparametric")]
    resampling: Resampling,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let data = read_jsonl(output::open(path)?).map_err(|e| UserError(format!("{}: {e}", path.display())))?;
    if data.is_empty() {
        return Err(UserError(format!("{} contains no records", path.display())).into());
    }
    Ok(data)
}

fn model_config(args: &FitArgs) -> Result<ModelConfig> {
    let mut cfg: ModelConfig = match &args.model_config {
        Some(p) => serde_json::from_reader(output::open(p)?).map_err(|e| UserError(format!("{}: {e}", p.display())))?,
        None => ModelConfig::default(),
    };
    if let Some(m) = args.model {
        cfg.family = match m {
            Model::Beta => ModelFamily::Beta,
            Model::Cdpbm => ModelFamily::Cdpbm,
            Model::Nv => ModelFamily::Nv,
        };
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(r) = &args.nv_rates {
        let [a, b] = r[..] else {
            return Err(UserError("--nv-rates needs two values".into()).into());
        };
        cfg.nv_rates = Some([a, b]);
    }
    Ok(cfg)
}

pub fn run(args: FitArgs) -> Result<Status> {
    if args.alpha_levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(UserError("--alpha-levels must lie in (0, 1)".into()).into());
    }
    let protocol = args.protocol.spec()?;
    let data = read_dataset(&args.dataset)?;
    let cfg = model_config(&args)?;
    output::prepare(&args.out.out_dir)?;
    output::write_json(&args.out.out_dir, "fit_config.json", &serde_json::json!({ "args": &args, "model": &cfg }))?;
    match args.method {
        Method::Nuts | Method::Mh => bayesian(&args, protocol, &data, &cfg),
        _ if cfg.family != ModelFamily::Beta => Err(UserError("frequentist methods need the beta model".into()).into()),
        _ => frequentist(&args, &protocol, &data),
    }
}

fn bayesian(args: &FitArgs, protocol: ProtocolSpec, data: &[DatasetRecord], cfg: &ModelConfig) -> Result<Status> {
    let model = cfg.build(protocol.clone(), data)?;
    let sc = SamplerConfig { chains: args.chains, warmup: args.warmup, keep: args.draws, seed: args.seed, thin: args.thin, ..Default::default() };
    let chains = match args.method {
        Method::Mh => metropolis_hastings(&model, &sc)?,
        _ => hmc_nuts(&model, &sc)?,
    };
    let dir = &args.out.out_dir;
    let (w, _) = output::create(dir, "chains.csv")?;
    write_chains_csv(&chains, w)?;
    let mut diag = diagnostics(&chains);
    let nonfinite = model.nonfinite_count();
    if nonfinite > 0 {
        diag.notices.push(format!("{nonfinite} non-finite log-density evaluations were rejected"));
    }
    let summary = summarize(&chains, &args.alpha_levels);
    output::write_json(dir, "diagnostics.json", &diag)?;
    output::write_json(dir, "summary.json", &summary)?;
    write_summary_csv(dir, &summary)?;
    print_summary(&summary, protocol.param_names(), &diag);
    Ok(inference_status(&diag))
}

/// Warning when any chain diverged or mixed poorly.
pub fn inference_status(diag: &Diagnostics) -> Status {
    let mut issues = Vec::new();
    if diag.divergences > 0 {
        issues.push(format!("{} divergent transitions", diag.divergences));
    }
    let bad: Vec<&str> = diag.params.iter().filter(|p| p.r_hat.is_some_and(|r| r > RHAT_WARN)).map(|p| p.name.as_str()).collect();
    if !bad.is_empty() {
        issues.push(format!("R-hat > {RHAT_WARN} for {}", bad.join(", ")));
    }
    if issues.is_empty() {
        Status::Ok
    } else {
        Status::Warning(format!("{}; see diagnostics.json", issues.join("; ")))
    }
}

fn level_label(a: f64) -> String {
    format!("{a}")
}

fn write_summary_csv(dir: &Path, s: &Summary) -> Result<()> {
    let mut header: Vec<String> = ["name", "mean", "sd", "median"].map(String::from).to_vec();
    for &a in &s.alpha_levels {
        header.push(format!("lo_{}", level_label(a)));
        header.push(format!("hi_{}", level_label(a)));
    }
    for &a in &s.alpha_levels {
        header.push(format!("p_{}", level_label(a)));
    }
    let rows: Vec<Vec<String>> = s
        .params
        .iter()
        .map(|p| {
            let mut r = vec![p.name.clone(), fmt(p.mean), fmt(p.sd), fmt(p.median)];
            for (_, lo, hi) in &p.intervals {
                r.push(fmt(*lo));
                r.push(fmt(*hi));
            }
            r.extend(p.lower_bounds.iter().map(|(_, v)| fmt(*v)));
            r
        })
        .collect();
    output::write_csv(dir, "summary.csv", &header, &rows)?;
    Ok(())
}

fn print_summary(s: &Summary, tying: &[String], diag: &Diagnostics) {
    println!("{:<12} {:>12} {:>12} {:>10} {:>10}", "param", "mean", "sd", "R-hat", "ESS");
    for (p, d) in s.params.iter().zip(&diag.params) {
        let shown = tying.contains(&p.name) || p.name.starts_with("neff_");
        if !shown {
            continue;
        }
        let r = d.r_hat.map_or("-".into(), |v| format!("{v:.4}"));
        let e = d.ess.map_or("-".into(), |v| format!("{v:.0}"));
        println!("{:<12} {:>12.6} {:>12.6} {:>10} {:>10}", p.name, p.mean, p.sd, r, e);
    }
    for p in s.params.iter().filter(|p| tying.contains(&p.name)) {
        let bounds: Vec<String> = p.lower_bounds.iter().map(|(a, v)| format!("p_{a} = {v:.6}")).collect();
        println!("{}: {}", p.name, bounds.join(", "));
    }
    println!("divergences: {}", diag.divergences);
    for n in &diag.notices {
        println!("note: {n}");
    }
}

fn frequentist(args: &FitArgs, protocol: &ProtocolSpec, data: &[DatasetRecord]) -> Result<Status> {
    let dir = &args.out.out_dir;
    let opts = MleOptions { seed: args.seed, ..Default::default() };
    let fit: FitResult = match args.method {
        Method::Wlsf => wlsf_fit(protocol, data)?,
        _ => mle_fit_with(protocol, data, None, &opts)?,
    };
    output::write_json(dir, "fit.json", &fit)?;
    let mut status = Status::Ok;
    if !fit.boundary.is_empty() {
        println!("note: estimates at the domain boundary: {}", fit.boundary.join(", "));
    }
    if args.method == Method::Bootstrap {
        let kind = match args.resampling {
            Resampling::Nonparametric => BootstrapKind::Nonparametric,
            Resampling::Parametric => BootstrapKind::Parametric,
        };
        let bo = BootstrapOptions { replicates: args.replicates, seed: args.seed, alpha_levels: args.alpha_levels.clone(), ..Default::default() };
        let b = bootstrap(protocol, data, &fit, kind, &bo).context("bootstrap")?;
        output::write_json(dir, "bootstrap.json", &b)?;
        let mut header = vec!["replicate".to_string()];
        header.extend(fit.names.iter().cloned());
        let rows: Vec<Vec<String>> = b.draws.iter().enumerate().map(|(i, d)| std::iter::once(i.to_string()).chain(d.iter().map(|v| fmt(*v))).collect()).collect();
        output::write_csv(dir, "bootstrap_draws.csv", &header, &rows)?;
        println!("{} bootstrap replicates ({} failed)", b.replicates, b.failed);
        for p in &b.params {
            let bounds: Vec<String> = p.lower_bounds.iter().map(|(a, v)| format!("p_{a} = {v:.6}")).collect();
            println!("{:<12} mean {:.6} sd {:.6}  {}", p.name, p.mean, p.sd, bounds.join(", "));
        }
        if b.failed > 0 {
            status = Status::Warning(format!("{} of {} bootstrap refits failed", b.failed, b.replicates));
        }
    } else {
        println!("{} log-likelihood {:.6} (converged: {})", fit.method, fit.log_likelihood, fit.converged);
        for (k, name) in fit.names.iter().enumerate() {
            let se = fit.std_errors.as_ref().map_or("-".into(), |s| format!("{:.6}", s[k]));
            println!("{:<12} {:>12.6} ± {se}", name, fit.estimates[k]);
        }
        if !fit.converged {
            status = Status::Warning("optimizer did not converge".into());
        }
    }
    let header: Vec<String> = ["name", "estimate", "std_error"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = fit
        .names
        .iter()
        .enumerate()
        .map(|(k, n)| vec![n.clone(), fmt(fit.estimates[k]), fit.std_errors.as_ref().map_or(String::new(), |s| fmt(s[k]))])
        .collect();
    output::write_csv(dir, "estimates.csv", &header, &rows)?;
    Ok(status)
}
