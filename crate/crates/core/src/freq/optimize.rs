use argmin::core::{CostFunction, Executor, Gradient, State, TerminationReason, TerminationStatus};
use argmin::solver::linesearch::condition::ArmijoCondition;
use argmin::solver::linesearch::BacktrackingLineSearch;
use argmin::solver::quasinewton::BFGS;

use crate::error::{Error, Result};

/// Gradient-norm tolerance of the quasi-Newton search.
pub const GRAD_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-12;

/// Result of one local maximization.
#[derive(Clone, Debug)]
pub(crate) struct Outcome {
    pub u: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: u64,
    pub grad_norm: f64,
    pub converged: bool,
}

struct Negated<F> {
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> CostFunction for Negated<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let mut g = vec![0.0; u.len()];
        let v = (self.f)(u, &mut g);
        Ok(if v.is_finite() { -v } else { f64::INFINITY })
    }
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Gradient for Negated<F> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let mut g = vec![0.0; u.len()];
        let v = (self.f)(u, &mut g);
        if !v.is_finite() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(g.into_iter().map(|x| -x).collect())
    }
}

/// Maximizes `f` (value and gradient) from `u0` with BFGS and a
/// backtracking Armijo line search.
pub(crate) fn maximize<F>(f: F, u0: Vec<f64>, max_iters: u64) -> Result<Outcome>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let n = u0.len();
    let mut g = vec![0.0; n];
    let initial_value = f(&u0, &mut g);
    if !initial_value.is_finite() {
        return Err(Error::Optimizer("objective is not finite at the starting point".into()));
    }
    if n == 0 {
        return Ok(Outcome { u: u0, value: initial_value, initial_value, iterations: 0, grad_norm: 0.0, converged: true });
    }
    let ls = BacktrackingLineSearch::new(ArmijoCondition::new(1e-4).expect("valid Armijo constant"))
        .rho(0.5)
        .expect("valid contraction");
    let solver = BFGS::new(ls)
        .with_tolerance_grad(GRAD_TOL)
        .expect("valid tolerance")
        .with_tolerance_cost(COST_TOL)
        .expect("valid tolerance");
    let eye: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let res = Executor::new(Negated { f: &f }, solver)
        .configure(|s| s.param(u0).inv_hessian(eye).max_iters(max_iters))
        .run()
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let state = res.state();
    let u = state.get_best_param().cloned().ok_or_else(|| Error::Optimizer("no iterate".into()))?;
    let value = f(&u, &mut g);
    let grad_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let converged = matches!(state.get_termination_status(), TerminationStatus::Terminated(TerminationReason::SolverConverged))
        || grad_norm < GRAD_TOL;
    Ok(Outcome { u, value, initial_value, iterations: state.get_iter(), grad_norm, converged })
}
