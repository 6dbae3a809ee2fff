use anyhow::Result;
use clap::Args;
use rbayes::design::{optimal_n_second_moment, plan_first_moment, write_curve_csv, CostModel};
use serde::Serialize;

use crate::output;
use crate::{OutDir, Status, UserError};

#[derive(Args, Debug, Serialize)]
pub struct PlanArgs {
    /// Moment to estimate: 1 (time-weighted CRB) or 2 (shot budget).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    moment: u8,
    /// Mean survival of the sequence bag.
    #[arg(long, default_value_t = 0.5)]
    qbar: f64,
    /// Bag spread `t = σ²/(q̄(1-q̄))`.
    #[arg(long, default_value_t = 0.01)]
    t: f64,
    /// Time to pick and compile a new sequence.
    #[arg(long, default_value_t = 1.0)]
    t_pick: f64,
    /// Time per shot.
    #[arg(long, default_value_t = 1.0)]
    t_flip: f64,
    /// Largest shot count considered.
    #[arg(long, default_value_t = 1000)]
    n_max: u64,
    /// Total shots `T = I·N`.
    #[arg(long, default_value_t = 8000.0)]
    budget: f64,
    /// Sequence overhead in units of shots.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Prior lower bound `l` on the survival mean.
    #[arg(long, default_value_t = 0.0)]
    lower_bound: f64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

pub fn run(args: PlanArgs) -> Result<Status> {
    let dir = &args.out.out_dir;
    if args.moment == 1 {
        if args.n_max == 0 {
            return Err(UserError("--n-max must be positive".into()).into());
        }
        let cost = CostModel::new(args.t_pick, args.t_flip)?;
        let plan = plan_first_moment(args.qbar, args.t, &cost, args.n_max)?;
        output::prepare(dir)?;
        let (w, _) = output::create(dir, "curve.csv")?;
        write_curve_csv(&plan.curve, "wcrb", w)?;
        output::write_json(dir, "plan.json", &plan)?;
        println!("N_opt = {} (time-weighted CRB {:.6e})", plan.n_opt, plan.wcrb);
    } else {
        let plan = optimal_n_second_moment(args.budget, args.tau, args.lower_bound)?;
        output::prepare(dir)?;
        let (w, _) = output::create(dir, "curve.csv")?;
        write_curve_csv(&plan.curve, "cost", w)?;
        output::write_json(dir, "plan.json", &plan)?;
        println!(
            "N_opt = {} with I = {:.1} sequences (coefficient {:.4}, asymptotic {:.4})",
            plan.n_opt, plan.sequences, plan.coefficient, plan.asymptotic_coefficient
        );
    }
    Ok(Status::Ok)
}
