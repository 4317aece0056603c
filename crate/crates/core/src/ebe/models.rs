//! Small analytic systems for exercising the tracker and deflation.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

use super::tracking::{Linearization, ParametrizedSystem};

/// `F(head, t) = A head + b t - c`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl LinearModel {
    pub fn example() -> Self {
        LinearModel {
            a: DMatrix::from_row_slice(2, 2, &[3.0, 1.0, -1.0, 2.0]),
            b: DVector::from_vec(vec![1.0, -2.0]),
            c: DVector::from_vec(vec![0.5, 1.0]),
        }
    }
}

impl ParametrizedSystem for LinearModel {
    fn head_dim(&self) -> usize {
        self.c.len()
    }

    fn residual(&self, head: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(&self.a * head + &self.b * t - &self.c)
    }

    fn linearize(&self, head: &DVector<f64>, t: f64) -> Result<Linearization> {
        Ok(Linearization { residual: self.residual(head, t)?, jac_head: self.a.clone(), jac_param: self.b.clone() })
    }

    fn directional_hessian(&self, _: &DVector<f64>, _: f64, _: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.head_dim();
        Ok((DMatrix::zeros(n, n), DVector::zeros(n)))
    }
}

/// `F(l1, t) = l1^2 - t`: a fold at the origin with branches `l1 = +-sqrt(t)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct FoldModel;

impl ParametrizedSystem for FoldModel {
    fn head_dim(&self) -> usize {
        1
    }

    fn residual(&self, head: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, head[0] * head[0] - t))
    }

    fn linearize(&self, head: &DVector<f64>, t: f64) -> Result<Linearization> {
        Ok(Linearization {
            residual: self.residual(head, t)?,
            jac_head: DMatrix::from_element(1, 1, 2.0 * head[0]),
            jac_param: DVector::from_element(1, -1.0),
        })
    }

    fn directional_hessian(&self, _: &DVector<f64>, _: f64, v: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        Ok((DMatrix::from_element(1, 1, 2.0 * v[0]), DVector::zeros(1)))
    }
}
