//! Solver reports and their JSON / JSON-lines forms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ebe::tracking::TrackStats;
use crate::error::Result;

/// One inner iteration: the state before the `m`-th Newton update of a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based outer step (the size of the system being solved).
    pub step: usize,
    /// Constraint introduced at this step, in problem order. `None` for
    /// full-system solvers.
    pub constraint: Option<usize>,
    pub m: usize,
    pub lambda: Vec<f64>,
    /// `|F_i|` of the new equation, or `||F||` for full-system solvers.
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscardReason {
    /// The tracking sub-step fell below the minimum step.
    TrackingStalled { detail: String },
    /// The tolerance ladder fell below its floor without meeting the predictor tolerance.
    ToleranceExhausted { residual: f64 },
    /// The inner iteration cap was reached.
    IterationCap { residual: f64 },
    ZeroDerivative { value: f64 },
    EvaluationFailed { detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscardedConstraint {
    pub index: usize,
    pub exponents: Vec<u32>,
    pub reason: DiscardReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub constraint: usize,
    pub solved: bool,
    pub inner_iterations: usize,
    /// Working tolerances used, starting at the Newton tolerance.
    pub tolerance_ladder: Vec<f64>,
    /// `||F||` over the active set when the step ended.
    pub residual: f64,
}

/// Local contraction check at the final solution for the last introduced
/// equation `i`: the solution is locally attracting when
/// `|(dF_i/dl_i)^-1 sum_j dF_j/dl_i dF_i/dl_j| < |sigma_min(J_head)|`.
/// Singular values of the head Jacobian stand in for eigenvalue magnitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionDiagnostic {
    pub constraint: usize,
    pub coupling_bound: f64,
    pub head_min_singular_value: f64,
    pub satisfied: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub lambda: Vec<f64>,
    pub z: f64,
    /// Retained constraints, in problem order.
    pub retained: Vec<usize>,
    pub discarded: Vec<DiscardedConstraint>,
    /// `F_j` at the final point for each retained constraint.
    pub residuals: Vec<f64>,
    pub moment_error: f64,
    /// Order in which constraints were introduced.
    pub solve_order: Vec<usize>,
    pub steps: Vec<StepSummary>,
    pub stats: TrackStats,
    pub iterations: usize,
    pub diagnostics: Option<ContractionDiagnostic>,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRecord>,
}

impl SolveReport {
    pub fn all_retained(&self) -> bool {
        self.discarded.is_empty()
    }

    /// Writes the trace as JSON lines, one record per inner iteration.
    pub fn write_trace_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.trace {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Copy with timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> SolveReport {
        SolveReport { wall_time_s: 0.0, ..self.clone() }
    }
}
