//! Locating singular points of the tracked curve and crossing them.
//!
//! At a fold or branch point the head Jacobian `J` loses rank. Appending the
//! null-vector conditions gives the augmented system
//!
//! ```text
//! G(head, t, v) = [ F(head, t) ; J(head, t) v ; xi^T v - 1 ] = 0
//! ```
//!
//! which is regular at the singular point, so plain Newton converges to it.
//! The continuation branch is then seeded by reflecting the last point on
//! the curve through the singular point.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{smallest_singular_pair, LuFactors};

use super::tracking::{corrector_step, ParametrizedSystem, TrackPoint};
use super::EbeConfig;

/// Number of times `xi` is resampled after a failed deflation solve.
pub const XI_RESAMPLES: usize = 3;

/// Seeded source of the random normalization vectors `xi`.
#[derive(Clone, Debug)]
pub struct Deflator {
    rng: ChaCha8Rng,
}

impl Deflator {
    pub fn new(seed: u64) -> Self {
        Deflator { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Random unit vector.
    pub fn sample_xi(&mut self, n: usize) -> DVector<f64> {
        loop {
            let v = DVector::from_fn(n, |_, _| self.rng.random_range(-1.0..1.0));
            let norm = v.norm();
            if norm > 1e-3 {
                return v / norm;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingularPoint {
    pub point: TrackPoint,
    pub null_vector: DVector<f64>,
    pub xi: DVector<f64>,
    /// `||G||` at the returned point.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// The augmented residual `G(head, t, v)`.
pub fn deflated_residual<S: ParametrizedSystem + ?Sized>(
    sys: &S,
    point: &TrackPoint,
    v: &DVector<f64>,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let lin = sys.linearize(&point.head, point.t)?;
    Ok(stack_residual(&lin.residual, &(&lin.jac_head * v), xi.dot(v) - 1.0))
}

fn stack_residual(f: &DVector<f64>, jv: &DVector<f64>, normalization: f64) -> DVector<f64> {
    let n = f.len();
    let mut g = DVector::zeros(2 * n + 1);
    g.rows_mut(0, n).copy_from(f);
    g.rows_mut(n, n).copy_from(jv);
    g[2 * n] = normalization;
    g
}

/// Solves `G = 0` by Newton from `start` with a fixed `xi`. The initial null
/// vector is the right singular vector of the smallest singular value of
/// the head Jacobian, scaled so that `xi^T v = 1`.
pub fn deflate_with_xi<S: ParametrizedSystem + ?Sized>(
    sys: &S,
    start: &TrackPoint,
    xi: &DVector<f64>,
    cfg: &EbeConfig,
) -> Result<SingularPoint> {
    let n = sys.head_dim();
    if n == 0 {
        return Err(Error::InvalidArgument("deflation needs at least one head equation".into()));
    }
    let lin = sys.linearize(&start.head, start.t)?;
    let (_, v0) = smallest_singular_pair(&lin.jac_head);
    let scale = xi.dot(&v0);
    if scale.abs() < 1e-8 {
        return Err(Error::ZeroDerivative { value: scale });
    }
    let mut point = start.clone();
    let mut v = v0 / scale;
    for iter in 0..=cfg.max_newton_iters {
        let lin = sys.linearize(&point.head, point.t)?;
        let g = stack_residual(&lin.residual, &(&lin.jac_head * &v), xi.dot(&v) - 1.0);
        let norm = g.norm();
        if !norm.is_finite() {
            break;
        }
        if norm <= cfg.tol_predictor {
            return Ok(SingularPoint { point, null_vector: v, xi: xi.clone(), residual_norm: norm, iterations: iter });
        }
        if iter == cfg.max_newton_iters {
            break;
        }
        let (h_head, h_t) = sys.directional_hessian(&point.head, point.t, &v)?;
        let mut jac = DMatrix::zeros(2 * n + 1, 2 * n + 1);
        jac.view_mut((0, 0), (n, n)).copy_from(&lin.jac_head);
        jac.view_mut((0, n), (n, 1)).copy_from(&lin.jac_param);
        jac.view_mut((n, 0), (n, n)).copy_from(&h_head);
        jac.view_mut((n, n), (n, 1)).copy_from(&h_t);
        jac.view_mut((n, n + 1), (n, n)).copy_from(&lin.jac_head);
        jac.view_mut((2 * n, n + 1), (1, n)).copy_from(&xi.transpose());
        let delta = LuFactors::factor(&jac)?.solve(&g);
        point.head -= delta.rows(0, n);
        point.t -= delta[n];
        v -= delta.rows(n + 1, n);
    }
    let residual = deflated_residual(sys, &point, &v, xi).map(|g| g.norm()).unwrap_or(f64::NAN);
    Err(Error::NoConvergence { iterations: cfg.max_newton_iters, residual })
}

/// Locates a singular point near `start`, resampling `xi` on failure.
pub fn deflate_bifurcation<S: ParametrizedSystem + ?Sized>(
    sys: &S,
    start: &TrackPoint,
    cfg: &EbeConfig,
    deflator: &mut Deflator,
) -> Result<SingularPoint> {
    let mut last = Error::NoConvergence { iterations: 0, residual: f64::NAN };
    for _ in 0..=XI_RESAMPLES {
        let xi = deflator.sample_xi(sys.head_dim());
        match deflate_with_xi(sys, start, &xi, cfg) {
            Ok(p) => return Ok(p),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Reflection of the last attempt through the singular point:
/// `(2 head* - head~, 2 t* - t~)`.
pub fn richardson_jump(singular: &TrackPoint, last: &TrackPoint) -> TrackPoint {
    TrackPoint::new(&singular.head * 2.0 - &last.head, 2.0 * singular.t - last.t)
}

/// Jumps across the singular point and corrects onto the far branch.
///
/// The reflected parameter is tried first. At a fold no solutions exist on
/// the far side in `t`, so the head is then corrected at the original `t`
/// from the reflected guess; that is only accepted if it does not fall back
/// onto the starting branch.
pub fn jump_and_correct<S: ParametrizedSystem + ?Sized>(
    sys: &S,
    singular: &TrackPoint,
    last: &TrackPoint,
    cfg: &EbeConfig,
) -> Result<TrackPoint> {
    let jump = richardson_jump(singular, last);
    if let Ok((head, _)) = corrector_step(sys, &jump.head, jump.t, cfg.tol_predictor, cfg.max_newton_iters) {
        return Ok(TrackPoint::new(head, jump.t));
    }
    let (head, _) = corrector_step(sys, &jump.head, last.t, cfg.tol_predictor, cfg.max_newton_iters)?;
    let gap = (&head - &last.head).norm();
    if gap <= 1e-6 * (1.0 + last.head.norm()) {
        return Err(Error::NoConvergence { iterations: 0, residual: gap });
    }
    Ok(TrackPoint::new(head, last.t))
}

#[cfg(test)]
mod tests {
    use super::super::models::{FoldModel, LinearModel};
    use super::*;

    #[test]
    fn fold_model_root_of_augmented_system() {
        let g = deflated_residual(&FoldModel, &TrackPoint::new(DVector::from_vec(vec![0.0]), 0.0), &DVector::from_vec(vec![1.0]), &DVector::from_vec(vec![1.0]))
            .unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn deflation_finds_the_fold() {
        let cfg = EbeConfig::default();
        let start = TrackPoint::new(DVector::from_vec(vec![-0.2]), 0.04);
        let sp = deflate_with_xi(&FoldModel, &start, &DVector::from_vec(vec![1.0]), &cfg).unwrap();
        assert!(sp.residual_norm <= 1e-10);
        assert!(sp.point.head[0].abs() < 1e-6);
        assert!(sp.point.t.abs() < 1e-10);
        assert!((sp.null_vector[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reflection_arithmetic() {
        let star = TrackPoint::new(DVector::from_vec(vec![0.0]), 0.0);
        let last = TrackPoint::new(DVector::from_vec(vec![-0.2]), 0.04);
        let j = richardson_jump(&star, &last);
        assert_eq!(j.head[0], 0.2);
        assert_eq!(j.t, -0.04);
        assert_eq!(richardson_jump(&last, &last), last);
    }

    #[test]
    fn jump_lands_on_the_other_branch() {
        let cfg = EbeConfig::default();
        let last = TrackPoint::new(DVector::from_vec(vec![-0.2]), 0.04);
        let mut deflator = Deflator::new(11);
        let sp = deflate_bifurcation(&FoldModel, &last, &cfg, &mut deflator).unwrap();
        let landed = jump_and_correct(&FoldModel, &sp.point, &last, &cfg).unwrap();
        assert!(landed.head[0] > 0.0);
        assert!((landed.head[0] - 0.2).abs() < 1e-8);
        assert!(FoldModel.residual(&landed.head, landed.t).unwrap().norm() < 1e-10);
    }

    #[test]
    fn regular_system_has_no_singular_point() {
        let cfg = EbeConfig::default();
        let start = TrackPoint::new(DVector::from_vec(vec![0.0, 0.0]), 0.0);
        assert!(deflate_with_xi(&LinearModel::example(), &start, &DVector::from_vec(vec![0.6, 0.8]), &cfg).is_err());
    }

    #[test]
    fn xi_is_unit_and_seeded() {
        let a = Deflator::new(5).sample_xi(4);
        let b = Deflator::new(5).sample_xi(4);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-15);
    }
}
