use anyhow::Result;
use clap::Args;
use rbayes::qsim::presets::{default_lengths, default_spam, max_length_heuristic, NoiseSpec};
use rbayes::qsim::{simulate_dataset, write_jsonl, SimulationOptions};
use serde::Serialize;

use crate::output;
use crate::{OutDir, Protocol, Status, UserError};

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "rb")]
    protocol: Protocol,
    /// Noise model, e.g. `depolarizing:0.0002`, `overrotation`, `reset:0.9,0.001`,
    /// `dle:0.001,0.0015,0.003,0.1`.
    #[arg(long, default_value = "depolarizing", value_parser = |s: &str| s.parse::<NoiseSpec>().map_err(|e| e.to_string()))]
    #[serde(serialize_with = "as_string")]
    noise: NoiseSpec,
    /// Comma-separated sequence lengths (protocol default when omitted).
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<u64>>,
    /// Use 10 roughly log-spaced lengths up to `⌈1/(1-F)⌉` for the noise's
    /// average gate fidelity `F`.
    #[arg(long, conflicts_with = "lengths")]
    fidelity_lengths: bool,
    /// Random sequences per length (I).
    #[arg(long, default_value_t = 20)]
    sequences: u32,
    /// Shots per sequence (N).
    #[arg(long, default_value_t = 30)]
    shots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shuffle the record order.
    #[arg(long)]
    shuffle: bool,
    /// Random noisy gates applied before every sequence.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

fn as_string<S: serde::Serializer, T: std::fmt::Display>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// `count` distinct integers from 1 to `max`, roughly geometric.
fn log_spaced(max: u64, count: usize) -> Vec<u64> {
    let mut v: Vec<u64> = (0..count).map(|k| (max as f64).powf(k as f64 / (count - 1) as f64).round() as u64).collect();
    v.dedup();
    v
}

pub fn run(args: SimulateArgs) -> Result<Status> {
    let protocol = args.protocol.spec()?;
    let noise = args.noise.build(protocol.gateset())?;
    let lengths = match (&args.lengths, args.fidelity_lengths) {
        (Some(l), _) if l.is_empty() => return Err(UserError("empty --lengths".into()).into()),
        (Some(l), _) => l.clone(),
        (None, true) => {
            let r = protocol.gateset().len();
            let f = (0..r).map(|g| noise.channel(g, 0).average_fidelity_on(2)).sum::<f64>() / r as f64;
            log_spaced(max_length_heuristic(f)?, 10)
        }
        (None, false) => default_lengths(&protocol),
    };
    let spam = default_spam(&protocol)?;
    let opts = SimulationOptions { shuffle: args.shuffle, burn_in_gates: args.burn_in };
    let data = simulate_dataset(&protocol, &noise, &spam, &lengths, args.sequences, args.shots, args.seed, opts)?;
    output::prepare(&args.out.out_dir)?;
    let (mut w, path) = output::create(&args.out.out_dir, "dataset.jsonl")?;
    write_jsonl(&data, &mut w)?;
    std::io::Write::flush(&mut w)?;
    output::write_json(&args.out.out_dir, "simulate.json", &args)?;
    let shots: u64 = data.iter().filter_map(|r| r.counts()).map(|c| c.0).sum();
    println!("wrote {} records ({} shots, lengths {:?}) to {}", data.len(), shots, lengths, path.display());
    Ok(Status::Ok)
}
