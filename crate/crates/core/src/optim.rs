//! Derivative-free minimization.

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;

use crate::error::{Error, Result};

/// Result of a minimization that met its convergence criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

struct Objective<F>(F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Objective<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let v = (self.0)(p);
        // the simplex ordering cannot handle NaN
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }
}

/// Nelder–Mead from `x0` with an initial simplex of axis steps `step`.
///
/// Stops when the standard deviation of the simplex values drops below
/// `tol`. Returns [`Error::Estimation`] with the best point if `max_iter`
/// is reached first.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: &[f64], tol: f64, max_iter: usize) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
{
    if x0.is_empty() || x0.len() != step.len() {
        return Err(Error::invalid("start point and step sizes must have the same positive length"));
    }
    let mut simplex = vec![x0.to_vec()];
    for (i, &h) in step.iter().enumerate() {
        let mut v = x0.to_vec();
        v[i] += h;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(tol)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let res = Executor::new(Objective(f), solver)
        .configure(|s| s.max_iters(max_iter as u64))
        .run()
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let state = res.state();
    let iterations = state.get_iter() as usize;
    let x = state.get_best_param().cloned().unwrap_or_else(|| x0.to_vec());
    let value = state.get_best_cost();
    match state.get_termination_status() {
        TerminationStatus::Terminated(TerminationReason::SolverConverged) if value.is_finite() => {
            Ok(Minimum { x, value, iterations })
        }
        _ => Err(Error::Estimation { best: x, iterations }),
    }
}
