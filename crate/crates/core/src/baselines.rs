//! Full-system Newton solvers for comparison.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ebe::tracking::TrackStats;
use crate::error::{Error, Result};
use crate::linalg::LuFactors;
use crate::problem::MomentProblem;
use crate::report::{SolveReport, TraceRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Backtracking by halving until `||F||` decreases.
    pub damped: bool,
    pub max_halvings: usize,
    pub initial_alpha: Option<Vec<f64>>,
    pub record_trace: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tol: 1e-10, max_iters: 200, damped: false, max_halvings: 30, initial_alpha: None, record_trace: true }
    }
}

impl NewtonConfig {
    pub fn damped() -> Self {
        NewtonConfig { damped: true, ..Default::default() }
    }
}

/// Failure of a baseline solve. The last iterate is kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct Diverged {
    pub reason: String,
    pub iterations: usize,
    pub lambda: Vec<f64>,
}

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "newton diverged after {} iterations: {}", self.iterations, self.reason)
    }
}

impl std::error::Error for Diverged {}

fn residual_norm(problem: &MomentProblem, lambda: &[f64], active: &[usize]) -> Option<f64> {
    problem.eval_residuals(lambda, active).ok().map(|e| e.norm()).filter(|v| v.is_finite())
}

/// Newton on all equations at once from the initial multipliers.
pub fn newton_full_solve(problem: &MomentProblem, cfg: &NewtonConfig) -> std::result::Result<SolveReport, Diverged> {
    let started = Instant::now();
    let n = problem.len();
    let active = problem.all_indices();
    let mut lambda = cfg.initial_alpha.clone().unwrap_or_else(|| vec![0.0; n]);
    let fail = |reason: String, iterations: usize, lambda: &[f64]| Diverged { reason, iterations, lambda: lambda.to_vec() };
    if lambda.len() != n {
        return Err(fail(format!("initial_alpha has length {}, expected {n}", lambda.len()), 0, &lambda));
    }
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (eval, jac) = problem
            .eval_residuals_and_jacobian(&lambda, &active)
            .map_err(|e| fail(e.to_string(), iterations, &lambda))?;
        let norm = eval.norm();
        if cfg.record_trace {
            trace.push(TraceRecord { step: n, constraint: None, m: iterations, lambda: lambda.clone(), residual: norm, tolerance: cfg.tol });
        }
        if !norm.is_finite() {
            return Err(fail("non-finite residual".into(), iterations, &lambda));
        }
        if norm < cfg.tol {
            break;
        }
        if iterations >= cfg.max_iters {
            return Err(fail(format!("iteration cap with residual {norm:e}"), iterations, &lambda));
        }
        let delta = LuFactors::factor(&jac)
            .map_err(|e| fail(e.to_string(), iterations, &lambda))?
            .solve(&eval.residuals);
        let trial = |scale: f64| -> Vec<f64> { lambda.iter().zip(delta.iter()).map(|(l, d)| l - scale * d).collect() };
        if cfg.damped {
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=cfg.max_halvings {
                let cand = trial(scale);
                if let Some(r) = residual_norm(problem, &cand, &active) {
                    if r < norm {
                        accepted = Some(cand);
                        break;
                    }
                }
                scale *= 0.5;
            }
            match accepted {
                Some(c) => lambda = c,
                None => return Err(fail("line search found no decrease".into(), iterations, &lambda)),
            }
        } else {
            lambda = trial(1.0);
            if lambda.iter().any(|v| !v.is_finite()) {
                return Err(fail("non-finite iterate".into(), iterations, &lambda));
            }
        }
        iterations += 1;
    }
    let build = || -> Result<SolveReport> {
        let residuals = problem.eval_residuals(&lambda, &active)?.residuals.iter().copied().collect();
        Ok(SolveReport {
            method: if cfg.damped { "newton-damped".into() } else { "newton".into() },
            z: problem.normalization(&lambda)?,
            retained: active.clone(),
            discarded: Vec::new(),
            residuals,
            moment_error: problem.moment_error(&lambda, &active)?,
            solve_order: active.clone(),
            steps: Vec::new(),
            stats: TrackStats::default(),
            iterations,
            diagnostics: None,
            wall_time_s: started.elapsed().as_secs_f64(),
            trace,
            lambda: lambda.clone(),
        })
    };
    build().map_err(|e: Error| fail(e.to_string(), iterations, &lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSet;
    use crate::quadrature::{clenshaw_curtis_1d, smolyak_sparse_grid};

    #[test]
    fn recovers_example_multipliers() {
        let p = MomentProblem::from_density(BasisSet::enumerate(1, 3).unwrap(), &[1.0, 1.0, 1.0], clenshaw_curtis_1d(7).unwrap())
            .unwrap();
        for cfg in [NewtonConfig::default(), NewtonConfig::damped()] {
            let r = newton_full_solve(&p, &cfg).unwrap();
            for v in &r.lambda {
                assert!((v - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn undamped_fails_from_far_start() {
        let basis = BasisSet::enumerate(3, 4).unwrap();
        let lambda: Vec<f64> = basis
            .indices()
            .iter()
            .map(|m| match (m.pure_axis().is_some(), m.total_order()) {
                (true, 1) => 0.5,
                (true, 2) => 10.0,
                (false, 2) => 1.0,
                (true, 3) => 0.3,
                (true, 4) => -20.0,
                _ => 0.0,
            })
            .collect();
        let p = MomentProblem::from_density(basis, &lambda, smolyak_sparse_grid(3, 7).unwrap()).unwrap();
        assert!(newton_full_solve(&p, &NewtonConfig::default()).is_err());
    }
}
