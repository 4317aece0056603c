//! The moment problem: residuals `F_j`, their Jacobian, the normalization `Z`,
//! and the fitted density.
//!
//! For constraint `j` the residual is the unnormalized integral
//!
//! ```text
//! F_j(lambda) = sum_i (c_j(x_i) - f_j) exp(sum_k lambda_k c_k(x_i)) w_i
//! ```
//!
//! which vanishes exactly when the normalized density reproduces `f_j`.
//! The basis matrix `C[i, k] = c_k(x_i)` and its target-shifted copy
//! `D[i, j] = C[i, j] - f_j` are built once per problem and reused by every
//! evaluation.

use std::io::Write;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::exec::{map_chunks, map_indices, Execution};
use crate::ingest::AffineRescale;
use crate::quadrature::{QuadSpec, QuadratureRule};

/// Largest exponent accepted before `exp` is considered to overflow.
pub const EXPONENT_LIMIT: f64 = 700.0;

/// Lagrange multipliers aligned with the basis order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LagrangeVector(Vec<f64>);

impl LagrangeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite multiplier {v}")));
        }
        Ok(LagrangeVector(values))
    }

    pub fn zeros(n: usize) -> Self {
        LagrangeVector(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for LagrangeVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// On-disk form of a [`MomentProblem`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub basis: BasisSet,
    pub targets: Vec<f64>,
    pub quad: QuadSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<AffineRescale>,
}

#[derive(Clone, Debug)]
pub struct MomentProblem {
    basis: BasisSet,
    targets: Vec<f64>,
    rule: QuadratureRule,
    rescale: Option<AffineRescale>,
    exec: Execution,
    /// `C[i, k] = c_k(x_i)`.
    monomials: DMatrix<f64>,
    /// `D[i, j] = c_j(x_i) - f_j`.
    shifted: DMatrix<f64>,
}

/// Residuals over an active set together with the exponential values they used.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualEvaluation {
    pub active: Vec<usize>,
    pub residuals: DVector<f64>,
    /// `exp(sum_k lambda_k c_k(x_i))` at every node.
    pub exp_values: Vec<f64>,
}

impl ResidualEvaluation {
    pub fn norm(&self) -> f64 {
        self.residuals.norm()
    }
}

impl MomentProblem {
    pub fn new(basis: BasisSet, targets: Vec<f64>, rule: QuadratureRule) -> Result<Self> {
        if targets.len() != basis.len() {
            return Err(Error::DimensionMismatch { expected: basis.len(), got: targets.len() });
        }
        if rule.dimension() != basis.dimension() {
            return Err(Error::DimensionMismatch { expected: basis.dimension(), got: rule.dimension() });
        }
        for (j, (m, &f)) in basis.indices().iter().zip(&targets).enumerate() {
            if !f.is_finite() {
                return Err(Error::InvalidArgument(format!("target {j} is not finite")));
            }
            if m.pure_axis().is_some() && m.total_order() % 2 == 0 && f <= 0.0 {
                return Err(Error::InvalidArgument(format!("even moment {m} must be positive, got {f}")));
            }
        }
        let exec = Execution::default();
        let monomials = basis.eval_matrix(rule.nodes(), exec)?;
        let mut shifted = monomials.clone();
        for (j, mut col) in shifted.column_iter_mut().enumerate() {
            col.add_scalar_mut(-targets[j]);
        }
        Ok(MomentProblem { basis, targets, rule, rescale: None, exec, monomials, shifted })
    }

    pub fn from_file(file: ProblemFile) -> Result<Self> {
        let rule = file.quad.build(file.basis.dimension())?;
        let p = Self::new(file.basis, file.targets, rule)?;
        match file.rescale {
            Some(r) => p.with_rescale(r),
            None => Ok(p),
        }
    }

    pub fn to_file(&self) -> ProblemFile {
        ProblemFile {
            basis: self.basis.clone(),
            targets: self.targets.clone(),
            quad: self.rule.spec(),
            rescale: self.rescale.clone(),
        }
    }

    pub fn with_rescale(mut self, rescale: AffineRescale) -> Result<Self> {
        if rescale.dimension() != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), got: rescale.dimension() });
        }
        self.rescale = Some(rescale);
        Ok(self)
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// Same basis and targets, integrated with a different rule.
    pub fn with_rule(&self, rule: QuadratureRule) -> Result<Self> {
        let mut p = Self::new(self.basis.clone(), self.targets.clone(), rule)?;
        p.rescale = self.rescale.clone();
        p.exec = self.exec;
        Ok(p)
    }

    /// Problem whose targets are the moments of `exp(sum lambda_k c_k)` under `rule`.
    pub fn from_density(basis: BasisSet, lambda: &[f64], rule: QuadratureRule) -> Result<Self> {
        let targets = density_moments(&basis, lambda, &rule)?;
        Self::new(basis, targets, rule)
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn rescale(&self) -> Option<&AffineRescale> {
        self.rescale.as_ref()
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.basis.dimension()
    }

    /// `c_j(x_i)` at quadrature node `i`.
    pub fn basis_value(&self, node: usize, j: usize) -> f64 {
        self.monomials[(node, j)]
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: lambda.len() });
        }
        if let Some(v) = lambda.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite multiplier {v}")));
        }
        Ok(())
    }

    fn check_active(&self, active: &[usize]) -> Result<()> {
        match active.iter().find(|&&j| j >= self.len()) {
            Some(&j) => Err(Error::InvalidArgument(format!("active index {j} out of range"))),
            None => Ok(()),
        }
    }

    /// `exp(sum_k lambda_k c_k(x_i))` at every node, guarding against overflow.
    pub fn exp_values(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        let n = self.len();
        let parts = map_chunks(self.rule.len(), self.exec, |r| {
            let mut out = Vec::with_capacity(r.len());
            for i in r {
                let mut s = 0.0;
                for k in 0..n {
                    s += lambda[k] * self.monomials[(i, k)];
                }
                if !(s <= EXPONENT_LIMIT) {
                    return Err(Error::ExponentOverflow { node: i, exponent: s });
                }
                out.push(s.exp());
            }
            Ok(out)
        });
        let mut all = Vec::with_capacity(self.rule.len());
        for p in parts {
            all.extend(p?);
        }
        Ok(all)
    }

    /// Residuals `F_j` for `j` in `active`. Inactive multipliers still enter the exponent.
    pub fn eval_residuals(&self, lambda: &[f64], active: &[usize]) -> Result<ResidualEvaluation> {
        self.check_active(active)?;
        let exp_values = self.exp_values(lambda)?;
        let residuals = self.residuals_from(&exp_values, active);
        Ok(ResidualEvaluation { active: active.to_vec(), residuals, exp_values })
    }

    pub(crate) fn residuals_from(&self, exp_values: &[f64], active: &[usize]) -> DVector<f64> {
        let w = self.rule.weights();
        let parts = map_chunks(self.rule.len(), self.exec, |r| {
            let mut acc = vec![0.0; active.len()];
            for i in r {
                let ew = exp_values[i] * w[i];
                for (a, &j) in acc.iter_mut().zip(active) {
                    *a += self.shifted[(i, j)] * ew;
                }
            }
            acc
        });
        let mut total = DVector::zeros(active.len());
        for p in parts {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    }

    /// `sum_i (c_r(x_i) - f_r) c_c(x_i) node_weights_i w_i` for `r` in `rows`, `c` in `cols`.
    pub(crate) fn weighted_cross(&self, rows: &[usize], cols: &[usize], node_weights: &[f64]) -> DMatrix<f64> {
        let w = self.rule.weights();
        let parts = map_chunks(self.rule.len(), self.exec, |r| {
            let len = r.len();
            let lhs = DMatrix::from_fn(len, rows.len(), |i, a| self.shifted[(r.start + i, rows[a])]);
            let rhs = DMatrix::from_fn(len, cols.len(), |i, b| {
                let node = r.start + i;
                self.monomials[(node, cols[b])] * node_weights[node] * w[node]
            });
            lhs.tr_mul(&rhs)
        });
        let mut total = DMatrix::zeros(rows.len(), cols.len());
        for p in parts {
            total += p;
        }
        total
    }

    /// Jacobian `dF_j / d lambda_k` for `j, k` in `active`, reusing the
    /// exponentials of a residual evaluation at the same point.
    pub fn eval_jacobian(&self, eval: &ResidualEvaluation) -> DMatrix<f64> {
        self.weighted_cross(&eval.active, &eval.active, &eval.exp_values)
    }

    /// Residuals and Jacobian at `lambda` in one pass over the exponentials.
    pub fn eval_residuals_and_jacobian(
        &self,
        lambda: &[f64],
        active: &[usize],
    ) -> Result<(ResidualEvaluation, DMatrix<f64>)> {
        let eval = self.eval_residuals(lambda, active)?;
        let jac = self.eval_jacobian(&eval);
        Ok((eval, jac))
    }

    /// `Z = sum_i exp(sum_k lambda_k c_k(x_i)) w_i`.
    pub fn normalization(&self, lambda: &[f64]) -> Result<f64> {
        let e = self.exp_values(lambda)?;
        Ok(self.normalization_from(&e))
    }

    fn normalization_from(&self, exp_values: &[f64]) -> f64 {
        let w = self.rule.weights();
        map_chunks(self.rule.len(), self.exec, |r| r.map(|i| exp_values[i] * w[i]).sum::<f64>())
            .into_iter()
            .sum()
    }

    /// The normalized density for `lambda`.
    pub fn normalize(&self, lambda: &[f64]) -> Result<Density> {
        let z = self.normalization(lambda)?;
        Ok(Density {
            basis: self.basis.clone(),
            lambda: lambda.to_vec(),
            z,
            rescale: self.rescale.clone(),
        })
    }

    /// Normalized moments `int c_j rho dx` for `j` in `active`.
    pub fn model_moments(&self, lambda: &[f64], active: &[usize]) -> Result<Vec<f64>> {
        self.check_active(active)?;
        let e = self.exp_values(lambda)?;
        let z = self.normalization_from(&e);
        let w = self.rule.weights();
        let parts = map_chunks(self.rule.len(), self.exec, |r| {
            let mut acc = vec![0.0; active.len()];
            for i in r {
                let ew = e[i] * w[i];
                for (a, &j) in acc.iter_mut().zip(active) {
                    *a += self.monomials[(i, j)] * ew;
                }
            }
            acc
        });
        let mut total = vec![0.0; active.len()];
        for p in parts {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        Ok(total.into_iter().map(|v| v / z).collect())
    }

    /// Euclidean norm of the normalized moment mismatch over `active`.
    pub fn moment_error(&self, lambda: &[f64], active: &[usize]) -> Result<f64> {
        let m = self.model_moments(lambda, active)?;
        Ok(m.iter().zip(active).map(|(mj, &j)| (mj - self.targets[j]).powi(2)).sum::<f64>().sqrt())
    }
}

/// Normalized moments of `exp(sum_k lambda_k c_k)` under `rule`.
pub fn density_moments(basis: &BasisSet, lambda: &[f64], rule: &QuadratureRule) -> Result<Vec<f64>> {
    if lambda.len() != basis.len() {
        return Err(Error::DimensionMismatch { expected: basis.len(), got: lambda.len() });
    }
    let n = basis.len();
    // Bypasses the positivity checks of `MomentProblem::new`, which only apply to targets.
    let c = basis.eval_matrix(rule.nodes(), Execution::default())?;
    let w = rule.weights();
    let mut z = 0.0;
    let mut acc = vec![0.0; n];
    for i in 0..rule.len() {
        let s: f64 = (0..n).map(|k| lambda[k] * c[(i, k)]).sum();
        if !(s <= EXPONENT_LIMIT) {
            return Err(Error::ExponentOverflow { node: i, exponent: s });
        }
        let ew = s.exp() * w[i];
        z += ew;
        for (k, a) in acc.iter_mut().enumerate() {
            *a += c[(i, k)] * ew;
        }
    }
    Ok(acc.into_iter().map(|v| v / z).collect())
}

/// `rho(x) = exp(sum_k lambda_k c_k(x)) / Z` on the hypercube, optionally
/// mapped back to the original data coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub basis: BasisSet,
    pub lambda: Vec<f64>,
    pub z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<AffineRescale>,
}

impl Density {
    pub fn dimension(&self) -> usize {
        self.basis.dimension()
    }

    pub fn exponent(&self, x: &[f64]) -> f64 {
        self.basis.indices().iter().zip(&self.lambda).map(|(m, l)| l * m.eval(x)).sum()
    }

    /// Density at a point of `[-1, 1]^d`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exponent(x).exp() / self.z
    }

    /// Density at a point in original units, including the Jacobian of the
    /// affine map. Identical to [`Density::eval`] when there is no rescale.
    pub fn eval_original(&self, y: &[f64]) -> f64 {
        match &self.rescale {
            Some(r) => self.eval(&r.to_unit(y)) * r.jacobian(),
            None => self.eval(y),
        }
    }

    /// Evaluates on a list of points (row-major).
    pub fn eval_many(&self, points: &[f64], original: bool, exec: Execution) -> Vec<f64> {
        let d = self.dimension();
        map_indices(points.len() / d, exec, |i| {
            let p = &points[i * d..(i + 1) * d];
            if original {
                self.eval_original(p)
            } else {
                self.eval(p)
            }
        })
    }

    /// One-dimensional marginal along `axis` at hypercube coordinates
    /// `xs`, integrating out the other axes with `rule` (dimension `d - 1`).
    /// With `original`, `xs` are in data units and the axis Jacobian is applied.
    pub fn marginal(&self, axis: usize, xs: &[f64], rule: &QuadratureRule, original: bool) -> Result<Vec<f64>> {
        let d = self.dimension();
        if axis >= d {
            return Err(Error::InvalidArgument(format!("axis {axis} out of range for dimension {d}")));
        }
        let (scale, to_unit): (f64, Box<dyn Fn(f64) -> f64>) = match (&self.rescale, original) {
            (Some(r), true) => {
                let (l, h) = (r.lo[axis], r.hi[axis]);
                (2.0 / (h - l), Box::new(move |y| ((2.0 * y - l - h) / (h - l)).clamp(-1.0, 1.0)))
            }
            _ => (1.0, Box::new(|x| x)),
        };
        if d == 1 {
            return Ok(xs.iter().map(|&x| self.eval(&[to_unit(x)]) * scale).collect());
        }
        if rule.dimension() != d - 1 {
            return Err(Error::DimensionMismatch { expected: d - 1, got: rule.dimension() });
        }
        let mut point = vec![0.0; d];
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut acc = 0.0;
            for i in 0..rule.len() {
                let rest = rule.node(i);
                let mut r = 0;
                for (k, p) in point.iter_mut().enumerate() {
                    if k == axis {
                        *p = to_unit(x);
                    } else {
                        *p = rest[r];
                        r += 1;
                    }
                }
                acc += self.eval(&point) * rule.weights()[i];
            }
            out.push(acc * scale);
        }
        Ok(out)
    }

    /// CSV with coordinate columns followed by the density value.
    pub fn write_csv<W: Write>(&self, points: &[f64], values: &[f64], out: W) -> Result<()> {
        let d = self.dimension();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        header.push("density".into());
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for (p, v) in points.chunks_exact(d).zip(values) {
            let mut row: Vec<String> = p.iter().map(|c| format!("{c}")).collect();
            row.push(format!("{v:e}"));
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
