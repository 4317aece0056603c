//! Dense linear solves with a pivot-ratio singularity indicator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivot ratio `min |u_kk| / max |u_kk|` below which a matrix is treated as singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// LU factors with partial (row) pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: DMatrix<f64>,
    perm: Vec<usize>,
    pivot_ratio: f64,
}

impl LuFactors {
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix { pivot_ratio: f64::NAN });
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, _) = (k..n).fold((k, -1.0), |best, r| {
                let v = lu[(r, k)].abs();
                if v > best.1 {
                    (r, v)
                } else {
                    best
                }
            });
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
            }
            let pivot = lu[(k, k)];
            if pivot == 0.0 {
                continue;
            }
            for r in k + 1..n {
                let factor = lu[(r, k)] / pivot;
                lu[(r, k)] = factor;
                if factor != 0.0 {
                    for c in k + 1..n {
                        lu[(r, c)] -= factor * lu[(k, c)];
                    }
                }
            }
        }
        let (min, max) = (0..n).map(|k| lu[(k, k)].abs()).fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let pivot_ratio = if n == 0 {
            1.0
        } else if max == 0.0 {
            0.0
        } else {
            min / max
        };
        if pivot_ratio < SINGULAR_PIVOT_RATIO {
            return Err(Error::SingularMatrix { pivot_ratio });
        }
        Ok(LuFactors { lu, perm, pivot_ratio })
    }

    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.lu.nrows();
        let mut x = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }
}

/// Solves `A x = b`; fails with [`Error::SingularMatrix`] when the pivot ratio
/// drops below [`SINGULAR_PIVOT_RATIO`].
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
    }
    Ok(LuFactors::factor(a)?.solve(b))
}

/// Right singular vector of the smallest singular value, with that value.
pub fn smallest_singular_pair(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (k, &s) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    (s, v_t.row(k).transpose())
}

/// Smallest singular value of a square matrix (0 for an empty matrix).
pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    smallest_singular_pair(a).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_returns_rhs() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        assert_eq!(solve_linear(&DMatrix::identity(3, 3), &b).unwrap(), b);
    }

    #[test]
    fn tiny_pivot_is_singular() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-16]));
        let err = solve_linear(&a, &DVector::from_vec(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { pivot_ratio } if pivot_ratio < 1e-12));
    }

    #[test]
    fn random_system_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10;
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..n {
            a[(i, i)] += 4.0;
        }
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x = solve_linear(&a, &b).unwrap();
        assert!((&a * &x - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let x = solve_linear(&a, &DVector::from_vec(vec![2.0, 3.0])).unwrap();
        assert_eq!(x.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn empty_system() {
        let x = solve_linear(&DMatrix::zeros(0, 0), &DVector::zeros(0)).unwrap();
        assert_eq!(x.len(), 0);
    }

    #[test]
    fn null_vector_of_rank_deficient_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let (s, v) = smallest_singular_pair(&a);
        assert!(s < 1e-12);
        assert!((&a * &v).norm() < 1e-12);
    }
}
