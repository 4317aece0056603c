//! Monomial constraint functions `c_j(x) = x^j` indexed by multi-indices.

use std::collections::HashSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};

/// Largest supported total order.
pub const MAX_ORDER: u32 = 16;

/// Exponent vector `(j_1, ..., j_d)` of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Result<Self> {
        if exponents.is_empty() {
            return Err(Error::InvalidArgument("multi-index needs at least one axis".into()));
        }
        let idx = MultiIndex(exponents);
        if idx.total_order() == 0 {
            return Err(Error::InvalidArgument("the zeroth moment is not a constraint".into()));
        }
        Ok(idx)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn total_order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `Some(k)` when this is a pure power `x_k^q`.
    pub fn pure_axis(&self) -> Option<usize> {
        let mut nonzero = self.0.iter().enumerate().filter(|(_, &e)| e > 0);
        match (nonzero.next(), nonzero.next()) {
            (Some((k, _)), None) => Some(k),
            _ => None,
        }
    }

    /// Evaluates `x^j` by repeated multiplication.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.0.len());
        let mut v = 1.0;
        for (&xk, &e) in x.iter().zip(&self.0) {
            for _ in 0..e {
                v *= xk;
            }
        }
        v
    }

    /// Graded order with lexicographically larger exponent vectors first
    /// within a grade: `x1^2, x1 x2, x2^2`.
    fn canonical_key(&self) -> (u32, std::cmp::Reverse<&[u32]>) {
        (self.total_order(), std::cmp::Reverse(self.0.as_slice()))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// Ordered set of constraint multi-indices. Order matters: the EBE solver
/// introduces constraints in this order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BasisSetRepr", into = "BasisSetRepr")]
pub struct BasisSet {
    dimension: usize,
    max_order: u32,
    indices: Vec<MultiIndex>,
}

#[derive(Serialize, Deserialize)]
struct BasisSetRepr {
    dimension: usize,
    max_order: u32,
    indices: Vec<Vec<u32>>,
}

impl TryFrom<BasisSetRepr> for BasisSet {
    type Error = Error;

    fn try_from(r: BasisSetRepr) -> Result<Self> {
        let indices = r.indices.into_iter().map(MultiIndex::new).collect::<Result<Vec<_>>>()?;
        let b = BasisSet::from_indices(r.dimension, indices)?;
        if b.max_order != r.max_order {
            return Err(Error::InvalidArgument(format!(
                "max_order {} does not match the largest index order {}",
                r.max_order, b.max_order
            )));
        }
        Ok(b)
    }
}

impl From<BasisSet> for BasisSetRepr {
    fn from(b: BasisSet) -> Self {
        BasisSetRepr {
            dimension: b.dimension,
            max_order: b.max_order,
            indices: b.indices.into_iter().map(|m| m.0).collect(),
        }
    }
}

/// Number of multi-indices with `1 <= |j| <= p` in dimension `d`.
pub fn full_basis_size(d: usize, p: u32) -> usize {
    (1..=p as usize).map(|j| binomial(j + d - 1, d - 1)).sum()
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl BasisSet {
    /// All multi-indices of total order `1..=p` in canonical graded order.
    pub fn enumerate(d: usize, p: u32) -> Result<Self> {
        if d == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!("need d >= 1 and p >= 1, got d={d}, p={p}")));
        }
        if p > MAX_ORDER {
            return Err(Error::InvalidArgument(format!("order {p} exceeds the supported maximum {MAX_ORDER}")));
        }
        let mut indices = Vec::with_capacity(full_basis_size(d, p));
        let mut buf = vec![0u32; d];
        for grade in 1..=p {
            compositions(grade, 0, &mut buf, &mut indices);
        }
        Ok(BasisSet { dimension: d, max_order: p, indices })
    }

    /// Builds a basis from an explicit, user-ordered list of indices.
    pub fn from_indices(d: usize, indices: Vec<MultiIndex>) -> Result<Self> {
        if d == 0 || indices.is_empty() {
            return Err(Error::InvalidArgument("basis needs d >= 1 and at least one index".into()));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for m in &indices {
            if m.dimension() != d {
                return Err(Error::DimensionMismatch { expected: d, got: m.dimension() });
            }
            if m.total_order() > MAX_ORDER {
                return Err(Error::InvalidArgument(format!("index {m} exceeds order {MAX_ORDER}")));
            }
            if !seen.insert(m) {
                return Err(Error::InvalidArgument(format!("duplicate index {m}")));
            }
        }
        let max_order = indices.iter().map(MultiIndex::total_order).max().unwrap_or(0);
        Ok(BasisSet { dimension: d, max_order, indices })
    }

    /// Full order-`p` basis followed by extra indices (e.g. selected sixth moments).
    pub fn with_extra(d: usize, p: u32, extra: Vec<MultiIndex>) -> Result<Self> {
        let mut indices = Self::enumerate(d, p)?.indices;
        indices.extend(extra);
        Self::from_indices(d, indices)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, m: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|x| x == m)
    }

    /// Permutation (new position -> old position) that sorts into canonical order.
    pub fn canonical_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.sort_by(|&a, &b| self.indices[a].canonical_key().cmp(&self.indices[b].canonical_key()));
        perm
    }

    /// Moves the pure maximal even powers `x_k^p` to the front, keeping the
    /// rest in canonical order. Odd `p` leaves the canonical order unchanged.
    pub fn reorder_for_convexity(&self) -> Reordered {
        let canonical = self.canonical_permutation();
        let p = self.max_order;
        let is_anchor = |m: &MultiIndex| p % 2 == 0 && m.total_order() == p && m.pure_axis().is_some();
        let (mut perm, rest): (Vec<usize>, Vec<usize>) =
            canonical.into_iter().partition(|&i| is_anchor(&self.indices[i]));
        perm.extend(rest);
        Reordered::from_permutation(self, perm)
    }

    pub fn permuted(&self, perm: &[usize]) -> BasisSet {
        BasisSet {
            dimension: self.dimension,
            max_order: self.max_order,
            indices: perm.iter().map(|&i| self.indices[i].clone()).collect(),
        }
    }

    /// Evaluates every constraint at every node; `nodes` is row-major with
    /// `dimension` coordinates per node. Entry `(i, j)` is `c_j(x_i)`.
    pub fn eval_matrix(&self, nodes: &[f64], exec: Execution) -> Result<DMatrix<f64>> {
        let d = self.dimension;
        if nodes.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: nodes.len() % d });
        }
        let count = nodes.len() / d;
        for (i, x) in nodes.chunks_exact(d).enumerate() {
            if x.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::OutsideDomain { node: i, point: x.to_vec() });
            }
        }
        let p = self.max_order as usize;
        let n = self.len();
        let rows = map_indices(count, exec, |i| {
            let x = &nodes[i * d..(i + 1) * d];
            // powers[k][e] = x_k^e, built by repeated multiplication
            let mut powers = vec![1.0f64; d * (p + 1)];
            for k in 0..d {
                for e in 1..=p {
                    powers[k * (p + 1) + e] = powers[k * (p + 1) + e - 1] * x[k];
                }
            }
            let mut row = Vec::with_capacity(n);
            for m in &self.indices {
                let mut v = 1.0;
                for (k, &e) in m.0.iter().enumerate() {
                    v *= powers[k * (p + 1) + e as usize];
                }
                row.push(v);
            }
            row
        });
        Ok(DMatrix::from_row_iterator(count, n, rows.into_iter().flatten()))
    }
}

fn compositions(remaining: u32, axis: usize, buf: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    let d = buf.len();
    if axis == d - 1 {
        buf[axis] = remaining;
        out.push(MultiIndex(buf.clone()));
        return;
    }
    for e in (0..=remaining).rev() {
        buf[axis] = e;
        compositions(remaining - e, axis + 1, buf, out);
    }
}

/// A reordered basis together with the map back to the original order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reordered {
    pub basis: BasisSet,
    /// `permutation[new] = old`.
    pub permutation: Vec<usize>,
}

impl Reordered {
    fn from_permutation(original: &BasisSet, permutation: Vec<usize>) -> Self {
        Reordered { basis: original.permuted(&permutation), permutation }
    }

    /// Puts values given in the new order back into the original order.
    pub fn to_original<T: Clone>(&self, values: &[T]) -> Vec<T> {
        let mut out = values.to_vec();
        for (new, &old) in self.permutation.iter().enumerate() {
            out[old] = values[new].clone();
        }
        out
    }
}
