//! Equation-by-equation solver.
//!
//! Constraints are introduced one at a time. At step `i` the new multiplier
//! `lambda_i` is driven by scalar Newton on `F_i`, and after every scalar
//! update the already-solved equations `F_1..F_{i-1}` are tracked along
//! `lambda_i` by predictor-corrector continuation. Multipliers not yet
//! introduced stay frozen at their initial values. The scalar Newton
//! tolerance starts loose and is tightened tenfold until the whole
//! `i`-system meets the predictor tolerance. A constraint that cannot be
//! met is discarded and the previous solution kept.

pub mod deflation;
pub mod models;
pub mod tracking;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{smallest_singular_value, LuFactors};
use crate::problem::MomentProblem;
use crate::report::{
    ContractionDiagnostic, DiscardReason, DiscardedConstraint, SolveReport, StepSummary, TraceRecord,
};

use deflation::Deflator;
use tracking::{adaptive_track, Linearization, ParametrizedSystem, TrackOutcome, TrackPoint, TrackStats};

/// Derivatives below this magnitude stop scalar Newton.
pub const ZERO_DERIVATIVE: f64 = 1e-14;

/// Order in which constraints are introduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderMode {
    /// Graded lexicographic.
    Canonical,
    /// Pure maximal even powers first, then canonical.
    #[default]
    Convexity,
    /// As listed in the problem.
    User,
}

/// Derivative used in the scalar Newton update of the new multiplier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NewtonDerivative {
    /// `dF_i/dl_i` with the solved multipliers held fixed.
    Partial,
    /// Derivative of `F_i` along the tracked curve, which also moves the
    /// solved multipliers. Falls back to the partial derivative when the
    /// head Jacobian is singular.
    #[default]
    Total,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EbeConfig {
    /// Initial scalar Newton tolerance.
    pub tol_newton: f64,
    /// Tolerance for the corrector and for accepting a step.
    pub tol_predictor: f64,
    /// Smallest tracking sub-step before a constraint is discarded.
    pub lambda_min: f64,
    pub max_inner_iters: usize,
    pub max_newton_iters: usize,
    pub deflation_enabled: bool,
    /// Initial multipliers in problem order; zeros when absent.
    pub initial_alpha: Option<Vec<f64>>,
    pub order: OrderMode,
    pub derivative: NewtonDerivative,
    /// Seed for the deflation vectors.
    pub seed: u64,
    /// The tolerance ladder stops below this value.
    pub tolerance_floor: f64,
    pub record_trace: bool,
    /// Full Newton updates on the retained system after the last step,
    /// each kept only if it lowers `||F||`.
    pub polish_iters: usize,
}

impl Default for EbeConfig {
    fn default() -> Self {
        EbeConfig {
            tol_newton: 1e-1,
            tol_predictor: 1e-10,
            lambda_min: 1e-8,
            max_inner_iters: 200,
            max_newton_iters: 50,
            deflation_enabled: true,
            initial_alpha: None,
            order: OrderMode::Convexity,
            derivative: NewtonDerivative::Total,
            seed: 0,
            tolerance_floor: 1e-15,
            record_trace: true,
            polish_iters: 3,
        }
    }
}

impl EbeConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.tol_newton > self.tol_predictor && self.tol_predictor > 0.0) {
            return Err(Error::InvalidArgument("need tol_newton > tol_predictor > 0".into()));
        }
        if !(self.lambda_min > 0.0) {
            return Err(Error::InvalidArgument("lambda_min must be positive".into()));
        }
        if let Some(a) = &self.initial_alpha {
            if a.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: a.len() });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("initial_alpha must be finite".into()));
            }
        }
        Ok(())
    }

    /// Working tolerance after `k` tenfold reductions.
    pub fn ladder_tolerance(&self, k: usize) -> f64 {
        self.tol_newton / 10f64.powi(k as i32)
    }
}

/// The solved equations of a moment problem as functions of their own
/// multipliers (the head) and the multiplier being introduced (`t`), with
/// all other multipliers fixed at `base`.
pub struct MomentSlice<'a> {
    problem: &'a MomentProblem,
    head: Vec<usize>,
    param: usize,
    base: Vec<f64>,
}

impl<'a> MomentSlice<'a> {
    pub fn new(problem: &'a MomentProblem, head: Vec<usize>, param: usize, base: Vec<f64>) -> Self {
        MomentSlice { problem, head, param, base }
    }

    pub fn assemble(&self, head: &DVector<f64>, t: f64) -> Vec<f64> {
        let mut lambda = self.base.clone();
        for (&j, &v) in self.head.iter().zip(head.iter()) {
            lambda[j] = v;
        }
        lambda[self.param] = t;
        lambda
    }

    pub fn head_values(&self, lambda: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.head.len(), self.head.iter().map(|&j| lambda[j]))
    }

    fn columns(&self) -> Vec<usize> {
        let mut cols = self.head.clone();
        cols.push(self.param);
        cols
    }
}

impl ParametrizedSystem for MomentSlice<'_> {
    fn head_dim(&self) -> usize {
        self.head.len()
    }

    fn residual(&self, head: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(self.problem.eval_residuals(&self.assemble(head, t), &self.head)?.residuals)
    }

    fn linearize(&self, head: &DVector<f64>, t: f64) -> Result<Linearization> {
        let eval = self.problem.eval_residuals(&self.assemble(head, t), &self.head)?;
        let cross = self.problem.weighted_cross(&self.head, &self.columns(), &eval.exp_values);
        let n = self.head.len();
        Ok(Linearization {
            residual: eval.residuals,
            jac_head: cross.columns(0, n).into_owned(),
            jac_param: cross.column(n).into_owned(),
        })
    }

    fn directional_hessian(
        &self,
        head: &DVector<f64>,
        t: f64,
        v: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        // d/dl_k sum_i D_ij C_il e_i w_i v_l = sum_i D_ij C_ik (C_i . v) e_i w_i
        let lambda = self.assemble(head, t);
        let e = self.problem.exp_values(&lambda)?;
        let nodes = self.problem.rule().len();
        let mut weights = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let mut u = 0.0;
            for (a, &j) in self.head.iter().enumerate() {
                u += self.problem.basis_value(i, j) * v[a];
            }
            weights.push(e[i] * u);
        }
        let cross = self.problem.weighted_cross(&self.head, &self.columns(), &weights);
        let n = self.head.len();
        Ok((cross.columns(0, n).into_owned(), cross.column(n).into_owned()))
    }
}

/// One scalar Newton update of `lambda_index` with everything else fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarStep {
    pub residual: f64,
    pub derivative: f64,
    pub next: f64,
}

pub fn scalar_newton_step(problem: &MomentProblem, lambda: &[f64], index: usize) -> Result<ScalarStep> {
    let eval = problem.eval_residuals(lambda, &[index])?;
    let residual = eval.residuals[0];
    let derivative = problem.weighted_cross(&[index], &[index], &eval.exp_values)[(0, 0)];
    if residual == 0.0 {
        return Ok(ScalarStep { residual, derivative, next: lambda[index] });
    }
    if !(derivative.abs() >= ZERO_DERIVATIVE) {
        return Err(Error::ZeroDerivative { value: derivative });
    }
    Ok(ScalarStep { residual, derivative, next: lambda[index] - residual / derivative })
}

/// Scalar Newton update of `lambda[index]` using the derivative of
/// `F_index` along the curve on which the equations in `head` stay solved:
/// `dF_i/dl_i - (dF_i/d head) J_head^-1 (dF_head/dl_i)`.
pub fn reduced_newton_step(
    problem: &MomentProblem,
    lambda: &[f64],
    head: &[usize],
    index: usize,
) -> Result<ScalarStep> {
    if head.is_empty() {
        return scalar_newton_step(problem, lambda, index);
    }
    let mut active = head.to_vec();
    active.push(index);
    let (eval, jac) = problem.eval_residuals_and_jacobian(lambda, &active)?;
    let n = head.len();
    let residual = eval.residuals[n];
    let partial = jac[(n, n)];
    let derivative = match LuFactors::factor(&jac.view((0, 0), (n, n)).into_owned()) {
        Ok(lu) => {
            let slope = lu.solve(&jac.view((0, n), (n, 1)).column(0).into_owned());
            partial - (jac.view((n, 0), (1, n)) * slope)[0]
        }
        Err(_) => partial,
    };
    if residual == 0.0 {
        return Ok(ScalarStep { residual, derivative, next: lambda[index] });
    }
    if !(derivative.abs() >= ZERO_DERIVATIVE) {
        return Err(Error::ZeroDerivative { value: derivative });
    }
    Ok(ScalarStep { residual, derivative, next: lambda[index] - residual / derivative })
}

/// Scalar Newton on `F_index` alone until `|F_index| < tol`. Returns the
/// iterates including the start.
pub fn scalar_newton(
    problem: &MomentProblem,
    lambda: &[f64],
    index: usize,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let mut lambda = lambda.to_vec();
    let mut iterates = vec![lambda[index]];
    for _ in 0..max_iters {
        let step = scalar_newton_step(problem, &lambda, index)?;
        if step.residual.abs() < tol {
            return Ok(iterates);
        }
        lambda[index] = step.next;
        iterates.push(step.next);
    }
    let residual = problem.eval_residuals(&lambda, &[index])?.residuals[0];
    if residual.abs() < tol {
        Ok(iterates)
    } else {
        Err(Error::NoConvergence { iterations: max_iters, residual })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintStatus {
    Pending,
    Solved,
    Discarded,
}

/// Mutable state of a solve.
#[derive(Clone, Debug)]
pub struct SolverState {
    /// 1-based outer step currently being solved.
    pub outer_index: usize,
    /// Full multiplier vector in problem order.
    pub lambda: Vec<f64>,
    pub status: Vec<ConstraintStatus>,
    /// Solved constraints in the order they were introduced.
    pub head: Vec<usize>,
    pub trace: Vec<TraceRecord>,
}

/// Order of introduction for the given mode.
pub fn solve_order(problem: &MomentProblem, mode: OrderMode) -> Vec<usize> {
    match mode {
        OrderMode::User => problem.all_indices(),
        OrderMode::Canonical => problem.basis().canonical_permutation(),
        OrderMode::Convexity => problem.basis().reorder_for_convexity().permutation,
    }
}

struct Ebe<'a> {
    problem: &'a MomentProblem,
    cfg: &'a EbeConfig,
    state: SolverState,
    deflator: Deflator,
    stats: TrackStats,
    steps: Vec<StepSummary>,
    discarded: Vec<DiscardedConstraint>,
    iterations: usize,
}

enum StepResult {
    Solved { residual: f64 },
    Discard(DiscardReason),
}

impl<'a> Ebe<'a> {
    fn record(&mut self, k: usize, m: usize, residual: f64, tolerance: f64) {
        if self.cfg.record_trace {
            if let Some(last) = self.state.trace.last_mut() {
                if last.step == self.state.outer_index && last.m == m {
                    // same iterate re-examined under a tighter tolerance
                    last.tolerance = tolerance;
                    return;
                }
            }
            self.state.trace.push(TraceRecord {
                step: self.state.outer_index,
                constraint: Some(k),
                m,
                lambda: self.state.lambda.clone(),
                residual,
                tolerance,
            });
        }
    }

    fn active_with(&self, k: usize) -> Vec<usize> {
        let mut a = self.state.head.clone();
        a.push(k);
        a
    }

    /// Scalar Newton on the new equation with tracking of the solved ones,
    /// under a tenfold-decreasing working tolerance.
    fn introduce(&mut self, k: usize, ladder: &mut Vec<f64>, m: &mut usize) -> StepResult {
        let mut rung = 0;
        let mut tol = self.cfg.ladder_tolerance(0);
        ladder.push(tol);
        loop {
            loop {
                let step = match self.cfg.derivative {
                    NewtonDerivative::Partial => scalar_newton_step(self.problem, &self.state.lambda, k),
                    NewtonDerivative::Total => {
                        reduced_newton_step(self.problem, &self.state.lambda, &self.state.head, k)
                    }
                };
                let step = match step {
                    Ok(s) => s,
                    Err(Error::ZeroDerivative { value }) => {
                        return StepResult::Discard(DiscardReason::ZeroDerivative { value })
                    }
                    Err(e) => return StepResult::Discard(DiscardReason::EvaluationFailed { detail: e.to_string() }),
                };
                self.record(k, *m, step.residual.abs(), tol);
                if step.residual.abs() < tol {
                    break;
                }
                if *m >= self.cfg.max_inner_iters {
                    return StepResult::Discard(DiscardReason::IterationCap { residual: step.residual.abs() });
                }
                let delta = step.next - self.state.lambda[k];
                if delta.abs() <= f64::EPSILON * self.state.lambda[k].abs().max(1.0) {
                    // stalled at the rounding floor; let the ladder decide
                    break;
                }
                let slice =
                    MomentSlice::new(self.problem, self.state.head.clone(), k, self.state.lambda.clone());
                let start = TrackPoint::new(slice.head_values(&self.state.lambda), self.state.lambda[k]);
                let outcome = adaptive_track(&slice, &start, delta, self.cfg, &mut self.deflator, &mut self.stats);
                match outcome {
                    TrackOutcome::Reached(p) | TrackOutcome::Jumped(p) => {
                        self.state.lambda = slice.assemble(&p.head, p.t);
                    }
                    TrackOutcome::Discard { last_error } => {
                        return StepResult::Discard(DiscardReason::TrackingStalled { detail: last_error })
                    }
                }
                *m += 1;
                self.iterations += 1;
            }
            let active = self.active_with(k);
            let residual = match self.problem.eval_residuals(&self.state.lambda, &active) {
                Ok(e) => e.norm(),
                Err(e) => return StepResult::Discard(DiscardReason::EvaluationFailed { detail: e.to_string() }),
            };
            if residual < self.cfg.tol_predictor {
                return StepResult::Solved { residual };
            }
            rung += 1;
            tol = self.cfg.ladder_tolerance(rung);
            if tol < self.cfg.tolerance_floor * (1.0 - 1e-12) {
                return StepResult::Discard(DiscardReason::ToleranceExhausted { residual });
            }
            ladder.push(tol);
        }
    }

    fn run(&mut self, order: &[usize]) {
        for (pos, &k) in order.iter().enumerate() {
            self.state.outer_index = pos + 1;
            let saved = self.state.lambda.clone();
            let mut ladder = Vec::new();
            let mut m = 0;
            let result = self.introduce(k, &mut ladder, &mut m);
            let (solved, residual) = match result {
                StepResult::Solved { residual } => {
                    self.state.status[k] = ConstraintStatus::Solved;
                    self.state.head.push(k);
                    (true, residual)
                }
                StepResult::Discard(reason) => {
                    self.state.lambda = saved;
                    self.state.status[k] = ConstraintStatus::Discarded;
                    self.discarded.push(DiscardedConstraint {
                        index: k,
                        exponents: self.problem.basis().indices()[k].exponents().to_vec(),
                        reason,
                    });
                    let residual = if self.state.head.is_empty() {
                        0.0
                    } else {
                        self.problem.eval_residuals(&self.state.lambda, &self.state.head).map(|e| e.norm()).unwrap_or(f64::MAX)
                    };
                    (false, residual)
                }
            };
            self.steps.push(StepSummary {
                step: pos + 1,
                constraint: k,
                solved,
                inner_iterations: m,
                tolerance_ladder: ladder,
                residual,
            });
        }
    }
}

/// Newton polish of the solved system; returns the number of accepted updates.
fn polish(problem: &MomentProblem, lambda: &mut Vec<f64>, active: &[usize], max_iters: usize) -> usize {
    if active.is_empty() {
        return 0;
    }
    let mut accepted = 0;
    for _ in 0..max_iters {
        let Ok((eval, jac)) = problem.eval_residuals_and_jacobian(lambda, active) else { break };
        let norm = eval.norm();
        let Ok(lu) = LuFactors::factor(&jac) else { break };
        let delta = lu.solve(&eval.residuals);
        let mut trial = lambda.clone();
        for (a, &j) in active.iter().enumerate() {
            trial[j] -= delta[a];
        }
        match problem.eval_residuals(&trial, active) {
            Ok(e) if e.norm() < norm => {
                *lambda = trial;
                accepted += 1;
            }
            _ => break,
        }
    }
    accepted
}

/// Contraction check at `lambda` for the last equation of `head_order`.
pub fn contraction_diagnostic(
    problem: &MomentProblem,
    lambda: &[f64],
    head_order: &[usize],
) -> Result<Option<ContractionDiagnostic>> {
    let Some((&last, rest)) = head_order.split_last() else {
        return Ok(None);
    };
    let (_, jac) = problem.eval_residuals_and_jacobian(lambda, head_order)?;
    let i = rest.len();
    let diag = jac[(i, i)];
    let coupling: f64 = (0..i).map(|j| jac[(j, i)] * jac[(i, j)]).sum();
    let bound = (coupling / diag).abs();
    let sigma = if i == 0 { f64::INFINITY } else { smallest_singular_value(&jac.view((0, 0), (i, i)).into_owned()) };
    Ok(Some(ContractionDiagnostic {
        constraint: last,
        coupling_bound: bound,
        head_min_singular_value: sigma,
        satisfied: bound < sigma,
        note: "smallest singular value used in place of the smallest eigenvalue magnitude".into(),
    }))
}

/// Solves the moment problem equation by equation. Never fails on hard
/// problems: unsatisfiable constraints are discarded and reported.
pub fn ebe_solve(problem: &MomentProblem, cfg: &EbeConfig) -> Result<SolveReport> {
    let n = problem.len();
    cfg.validate(n)?;
    let started = Instant::now();
    let alpha = cfg.initial_alpha.clone().unwrap_or_else(|| vec![0.0; n]);
    let order = solve_order(problem, cfg.order);
    let mut ebe = Ebe {
        problem,
        cfg,
        state: SolverState {
            outer_index: 0,
            lambda: alpha,
            status: vec![ConstraintStatus::Pending; n],
            head: Vec::new(),
            trace: Vec::new(),
        },
        deflator: Deflator::new(cfg.seed),
        stats: TrackStats::default(),
        steps: Vec::new(),
        discarded: Vec::new(),
        iterations: 0,
    };
    ebe.run(&order);
    let polish_iterations = polish(problem, &mut ebe.state.lambda, &ebe.state.head, cfg.polish_iters);
    ebe.iterations += polish_iterations;

    let Ebe { state, stats, steps, discarded, iterations, .. } = ebe;
    let mut retained = state.head.clone();
    retained.sort_unstable();
    let z = problem.normalization(&state.lambda)?;
    let residuals = problem.eval_residuals(&state.lambda, &retained)?.residuals.iter().copied().collect();
    let moment_error = problem.moment_error(&state.lambda, &retained)?;
    let diagnostics = contraction_diagnostic(problem, &state.lambda, &state.head)?;
    Ok(SolveReport {
        method: "ebe".into(),
        lambda: state.lambda,
        z,
        retained,
        discarded,
        residuals,
        moment_error,
        solve_order: order,
        steps,
        stats,
        iterations,
        diagnostics,
        wall_time_s: started.elapsed().as_secs_f64(),
        trace: state.trace,
    })
}
