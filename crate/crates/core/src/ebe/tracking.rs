//! Predictor-corrector tracking of the solved equations along the newly
//! introduced multiplier, with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LuFactors;

use super::deflation::{deflate_bifurcation, jump_and_correct, Deflator};
use super::EbeConfig;

/// Equations `F(head, t) = 0` in `head` unknowns, parametrized by a scalar `t`.
pub trait ParametrizedSystem {
    fn head_dim(&self) -> usize;

    fn residual(&self, head: &DVector<f64>, t: f64) -> Result<DVector<f64>>;

    fn linearize(&self, head: &DVector<f64>, t: f64) -> Result<Linearization>;

    /// Derivatives of `J_head(head, t) v` with respect to `head` and to `t`.
    fn directional_hessian(&self, head: &DVector<f64>, t: f64, v: &DVector<f64>)
        -> Result<(DMatrix<f64>, DVector<f64>)>;
}

#[derive(Clone, Debug)]
pub struct Linearization {
    pub residual: DVector<f64>,
    /// `dF / d head`.
    pub jac_head: DMatrix<f64>,
    /// `dF / dt`.
    pub jac_param: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackPoint {
    pub head: DVector<f64>,
    pub t: f64,
}

impl TrackPoint {
    pub fn new(head: DVector<f64>, t: f64) -> Self {
        TrackPoint { head, t }
    }
}

/// Linear prediction of the head at `t_new` from the tangent at `from`:
/// `head - J^{-1} F_t (t_new - t)`.
pub fn predictor_step<S: ParametrizedSystem + ?Sized>(sys: &S, from: &TrackPoint, t_new: f64) -> Result<DVector<f64>> {
    let dt = t_new - from.t;
    if dt == 0.0 || sys.head_dim() == 0 {
        return Ok(from.head.clone());
    }
    let lin = sys.linearize(&from.head, from.t)?;
    let slope = LuFactors::factor(&lin.jac_head)?.solve(&lin.jac_param);
    Ok(&from.head - slope * dt)
}

/// Newton iterations on `F(., t) = 0` from `start` until `||F|| < tol`.
/// Returns the corrected head and the number of Newton updates taken.
pub fn corrector_step<S: ParametrizedSystem + ?Sized>(
    sys: &S,
    start: &DVector<f64>,
    t: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(DVector<f64>, usize)> {
    let mut head = start.clone();
    let mut iters = 0;
    loop {
        if sys.head_dim() == 0 {
            // still evaluates the exponentials, which guards against overflow
            sys.residual(&head, t)?;
            return Ok((head, 0));
        }
        let lin = sys.linearize(&head, t)?;
        let norm = lin.residual.norm();
        if !norm.is_finite() {
            return Err(Error::NoConvergence { iterations: iters, residual: norm });
        }
        if norm < tol {
            return Ok((head, iters));
        }
        if iters >= max_iters {
            return Err(Error::NoConvergence { iterations: iters, residual: norm });
        }
        let delta = LuFactors::factor(&lin.jac_head)?.solve(&lin.residual);
        head -= delta;
        iters += 1;
    }
}

/// Counters accumulated over tracking calls.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackStats {
    pub attempts: usize,
    pub failures: usize,
    pub halvings: usize,
    pub corrector_iterations: usize,
    pub deflations: usize,
    pub jumps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrackOutcome {
    /// Tracked the full step.
    Reached(TrackPoint),
    /// Crossed a singular point by deflation and reflection; tracking stops here.
    Jumped(TrackPoint),
    /// The sub-step fell below the minimum; the new equation should be dropped.
    Discard { last_error: String },
}

/// One predictor-corrector pair from `from` to `from.t + step`.
pub fn predict_correct<S: ParametrizedSystem + ?Sized>(
    sys: &S,
    from: &TrackPoint,
    step: f64,
    cfg: &EbeConfig,
    stats: &mut TrackStats,
) -> Result<TrackPoint> {
    let t_new = from.t + step;
    let predicted = predictor_step(sys, from, t_new)?;
    let (head, iters) = corrector_step(sys, &predicted, t_new, cfg.tol_predictor, cfg.max_newton_iters)?;
    stats.corrector_iterations += iters;
    Ok(TrackPoint::new(head, t_new))
}

/// Moves `t` by `delta` while keeping `F(head, t) = 0`.
///
/// The remaining distance starts at `delta`. A failed predictor-corrector
/// attempt halves the sub-step; a successful one consumes it and the next
/// sub-step is the smaller of the current one and what remains. A sub-step
/// below `lambda_min` ends tracking with [`TrackOutcome::Discard`]. When the
/// head Jacobian is singular, or two attempts fail in a row, the singular
/// point is located once by deflation and crossed by reflection.
pub fn adaptive_track<S: ParametrizedSystem + ?Sized>(
    sys: &S,
    start: &TrackPoint,
    delta: f64,
    cfg: &EbeConfig,
    deflator: &mut Deflator,
    stats: &mut TrackStats,
) -> TrackOutcome {
    let mut current = start.clone();
    let mut remaining = delta;
    let mut step = delta;
    let mut consecutive_failures = 0;
    let mut deflation_tried = !cfg.deflation_enabled || sys.head_dim() == 0;
    while remaining != 0.0 {
        stats.attempts += 1;
        match predict_correct(sys, &current, step, cfg, stats) {
            Ok(next) => {
                current = next;
                remaining -= step;
                if remaining.abs() < step.abs() {
                    step = remaining;
                }
                consecutive_failures = 0;
            }
            Err(err) => {
                stats.failures += 1;
                consecutive_failures += 1;
                let singular = matches!(err, Error::SingularMatrix { .. });
                if !deflation_tried && (singular || consecutive_failures >= 2) {
                    deflation_tried = true;
                    let attempted = TrackPoint::new(current.head.clone(), current.t + step);
                    if let Some(jumped) = try_deflation(sys, &current, &attempted, cfg, deflator, stats) {
                        return TrackOutcome::Jumped(jumped);
                    }
                }
                step /= 2.0;
                stats.halvings += 1;
                if step.abs() < cfg.lambda_min {
                    return TrackOutcome::Discard { last_error: err.to_string() };
                }
            }
        }
    }
    TrackOutcome::Reached(current)
}

fn try_deflation<S: ParametrizedSystem + ?Sized>(
    sys: &S,
    last_good: &TrackPoint,
    attempted: &TrackPoint,
    cfg: &EbeConfig,
    deflator: &mut Deflator,
    stats: &mut TrackStats,
) -> Option<TrackPoint> {
    stats.deflations += 1;
    // Start from the last point on the curve; fall back to the failed target.
    let fold = deflate_bifurcation(sys, last_good, cfg, deflator)
        .or_else(|_| deflate_bifurcation(sys, attempted, cfg, deflator))
        .ok()?;
    let landed = jump_and_correct(sys, &fold.point, last_good, cfg).ok()?;
    stats.jumps += 1;
    Some(landed)
}

#[cfg(test)]
mod tests {
    use super::super::models::{FoldModel, LinearModel};
    use super::*;

    fn cfg() -> EbeConfig {
        EbeConfig::default()
    }

    /// Always fails to correct.
    struct Hopeless;

    impl ParametrizedSystem for Hopeless {
        fn head_dim(&self) -> usize {
            1
        }
        fn residual(&self, _: &DVector<f64>, _: f64) -> Result<DVector<f64>> {
            Err(Error::NoConvergence { iterations: 0, residual: f64::NAN })
        }
        fn linearize(&self, _: &DVector<f64>, _: f64) -> Result<Linearization> {
            Err(Error::NoConvergence { iterations: 0, residual: f64::NAN })
        }
        fn directional_hessian(&self, _: &DVector<f64>, _: f64, _: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
            Err(Error::NoConvergence { iterations: 0, residual: f64::NAN })
        }
    }

    #[test]
    fn zero_displacement_prediction() {
        let m = LinearModel::example();
        let p = TrackPoint::new(DVector::from_vec(vec![0.3, -0.1]), 0.5);
        assert_eq!(predictor_step(&m, &p, 0.5).unwrap(), p.head);
    }

    #[test]
    fn corrector_is_exact_on_linear_systems() {
        let m = LinearModel::example();
        let start = DVector::from_vec(vec![10.0, -7.0]);
        let (head, iters) = corrector_step(&m, &start, 0.7, 1e-10, 50).unwrap();
        assert_eq!(iters, 1);
        assert!(m.residual(&head, 0.7).unwrap().norm() <= 1e-12);
    }

    #[test]
    fn corrector_skips_converged_prediction() {
        let m = LinearModel::example();
        let (head, _) = corrector_step(&m, &DVector::from_vec(vec![5.0, 5.0]), 0.7, 1e-10, 50).unwrap();
        let (again, iters) = corrector_step(&m, &head, 0.7, 1e-10, 50).unwrap();
        assert_eq!(iters, 0);
        assert_eq!(again, head);
    }

    #[test]
    fn single_attempt_when_corrector_succeeds() {
        let m = LinearModel::example();
        let (head, _) = corrector_step(&m, &DVector::zeros(2), 0.0, 1e-12, 50).unwrap();
        let mut stats = TrackStats::default();
        let out = adaptive_track(&m, &TrackPoint::new(head, 0.0), 0.8, &cfg(), &mut Deflator::new(1), &mut stats);
        match out {
            TrackOutcome::Reached(p) => assert_eq!(p.t, 0.8),
            other => panic!("{other:?}"),
        }
        assert_eq!(stats.attempts, 1);
        assert_eq!(stats.failures, 0);
    }

    #[test]
    fn persistent_failure_discards_after_expected_halvings() {
        let mut stats = TrackStats::default();
        let c = EbeConfig { deflation_enabled: false, ..cfg() };
        let out = adaptive_track(&Hopeless, &TrackPoint::new(DVector::zeros(1), 0.0), 1.0, &c, &mut Deflator::new(1), &mut stats);
        assert!(matches!(out, TrackOutcome::Discard { .. }));
        let expected = (1.0f64 / c.lambda_min).log2().ceil() as usize;
        assert_eq!(stats.halvings, expected);
        assert_eq!(stats.failures, expected);
    }

    #[test]
    fn tracks_along_the_fold_branch() {
        // lambda_1 = -sqrt(t), moving t from 0.25 to 0.16
        let m = FoldModel;
        let start = TrackPoint::new(DVector::from_vec(vec![-0.5]), 0.25);
        let mut stats = TrackStats::default();
        match adaptive_track(&m, &start, -0.09, &cfg(), &mut Deflator::new(1), &mut stats) {
            TrackOutcome::Reached(p) => {
                assert!((p.head[0] + 0.4).abs() < 1e-10);
                assert!((p.t - 0.16).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn predictor_tangent_is_first_order() {
        // implicit curve of the fold model: head = -sqrt(t); error of the
        // linear prediction shrinks quadratically with the step
        let m = FoldModel;
        let t0: f64 = 0.25;
        let from = TrackPoint::new(DVector::from_vec(vec![-t0.sqrt()]), t0);
        let err = |h: f64| (predictor_step(&m, &from, t0 + h).unwrap()[0] + (t0 + h).sqrt()).abs();
        let (e1, e2) = (err(1e-2), err(5e-3));
        assert!((e1 / e2 - 4.0).abs() < 0.1, "ratio {}", e1 / e2);
    }
}
