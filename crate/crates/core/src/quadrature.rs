//! Quadrature on the hypercube `[-1, 1]^d`: nested Clenshaw-Curtis rules,
//! their Smolyak sparse-grid combination, and a uniform trapezoidal grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::basis::binomial;
use crate::error::{Error, Result};
use crate::exec::{map_chunks, Execution};

/// Default limit on the number of nodes a rule may have.
pub const DEFAULT_NODE_CAP: u64 = 10_000_000;

/// How a rule was built; also the JSON form used in problem files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QuadSpec {
    Sparse { level: u32 },
    Uniform { m: usize },
}

impl QuadSpec {
    pub fn build(&self, d: usize) -> Result<QuadratureRule> {
        match *self {
            QuadSpec::Sparse { level } => smolyak_sparse_grid(d, level),
            QuadSpec::Uniform { m } => uniform_grid(d, m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    dimension: usize,
    spec: QuadSpec,
    /// Row-major, `dimension` coordinates per node.
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn spec(&self) -> QuadSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i f(x_i) w_i`. A non-finite `f(x_i)` is reported with its node.
    pub fn integrate<F>(&self, f: F, exec: Execution) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let parts = map_chunks(self.len(), exec, |r| {
            let mut acc = 0.0;
            for i in r {
                let v = f(self.node(i));
                if !v.is_finite() {
                    return Err(Error::NonFinite { node: i, value: v });
                }
                acc += v * self.weights[i];
            }
            Ok(acc)
        });
        parts.into_iter().try_fold(0.0, |s, p| p.map(|p| s + p))
    }

    /// One row per node: coordinates, then weight.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dimension).map(|k| format!("x{k}")).collect();
        header.push("weight".into());
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.node(i).iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", self.weights[i]));
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of 1-D Clenshaw-Curtis nodes at `level`.
pub fn cc_node_count(level: u32) -> u64 {
    match level {
        0 => 0,
        1 => 1,
        l => (1u64 << (l - 1)) + 1,
    }
}

/// Nodes added when going from `level - 1` to `level`.
fn cc_new_nodes(level: u32) -> u64 {
    match level {
        1 => 1,
        2 => 2,
        l => 1u64 << (l - 2),
    }
}

/// Node `k` of the rule with `n` intervals, `x_k = cos(k pi / n)` written as a
/// sine so that nodes are exactly antisymmetric and nested levels reproduce
/// bitwise identical coordinates.
fn cc_node(k: u64, n: u64) -> f64 {
    let num = n as f64 - 2.0 * k as f64;
    (PI * num / (2.0 * n as f64)).sin()
}

/// Weights of the rule with `n` (even, >= 2) intervals, via one FFT of the
/// cosine series `w_k = c_k / n (1 - sum_j b_j / (4 j^2 - 1) cos(2 j k pi / n))`.
fn cc_weights(n: usize) -> Vec<f64> {
    debug_assert!(n >= 2 && n % 2 == 0);
    let half = n / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (j, slot) in buf.iter_mut().enumerate().take(half + 1).skip(1) {
        let b = if j == half { 1.0 } else { 2.0 };
        let jf = j as f64;
        slot.re = b / (4.0 * jf * jf - 1.0);
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut w = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let s = buf[k % n].re;
        let c = if k == 0 || k == n { 1.0 } else { 2.0 };
        w.push(c / n as f64 * (1.0 - s));
    }
    // exact symmetry
    for k in 0..half {
        let avg = 0.5 * (w[k] + w[n - k]);
        w[k] = avg;
        w[n - k] = avg;
    }
    w
}

/// 1-D weights indexed like [`cc_node`] for the given level.
fn cc_level_weights(level: u32) -> Vec<f64> {
    if level == 1 {
        vec![2.0]
    } else {
        cc_weights(1usize << (level - 1))
    }
}

/// The nested Clenshaw-Curtis rule with `2^(level-1) + 1` nodes (one node at
/// level 1), exact for polynomials of degree below the node count.
pub fn clenshaw_curtis_1d(level: u32) -> Result<QuadratureRule> {
    smolyak_sparse_grid(1, level)
}

/// Predicted node count of the Smolyak grid, counting each distinct node once.
pub fn smolyak_node_count(d: usize, level: u32) -> u64 {
    let q = level as usize + d - 1;
    let mut total = 0u64;
    for_each_level_index(d, level, |idx| {
        debug_assert!(idx.iter().sum::<u32>() as usize <= q);
        total += idx.iter().map(|&l| cc_new_nodes(l)).product::<u64>();
    });
    total
}

/// Visits every level multi-index `i >= 1` with `|i| <= level + d - 1`.
fn for_each_level_index(d: usize, level: u32, mut visit: impl FnMut(&[u32])) {
    fn rec(buf: &mut Vec<u32>, axis: usize, budget: u32, visit: &mut dyn FnMut(&[u32])) {
        if axis == buf.len() {
            visit(buf);
            return;
        }
        let axes_left = (buf.len() - axis - 1) as u32;
        for l in 1..=budget - axes_left {
            buf[axis] = l;
            rec(buf, axis + 1, budget - l, visit);
        }
    }
    let mut buf = vec![0u32; d];
    rec(&mut buf, 0, level + d as u32 - 1, &mut visit);
}

pub fn smolyak_sparse_grid(d: usize, level: u32) -> Result<QuadratureRule> {
    smolyak_sparse_grid_capped(d, level, DEFAULT_NODE_CAP)
}

/// Smolyak combination of nested Clenshaw-Curtis rules with level sum at most
/// `level + d - 1`. Coincident nodes are merged by exact integer position on
/// the finest 1-D grid and their weights summed.
pub fn smolyak_sparse_grid_capped(d: usize, level: u32, cap: u64) -> Result<QuadratureRule> {
    if d == 0 || level == 0 {
        return Err(Error::InvalidArgument(format!("need d >= 1 and level >= 1, got d={d}, level={level}")));
    }
    if level > 30 {
        return Err(Error::InvalidArgument(format!("level {level} is too large")));
    }
    let predicted = smolyak_node_count(d, level);
    if predicted > cap {
        return Err(Error::TooManyNodes { predicted, cap });
    }

    // Positions are on the finest grid with `fine` intervals.
    let fine: u64 = 1 << (level.max(2) - 1);
    let position = |l: u32, k: u64| -> u64 {
        if l == 1 {
            fine / 2
        } else {
            k << (level.max(2) - l)
        }
    };
    let rules: Vec<Vec<f64>> = (1..=level).map(cc_level_weights).collect();

    let q = level as usize + d - 1;
    let mut merged: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    let mut key = vec![0u64; d];
    for_each_level_index(d, level, |idx| {
        let s = idx.iter().sum::<u32>() as usize;
        let gap = q - s;
        if gap > d - 1 {
            return;
        }
        let sign = if gap % 2 == 0 { 1.0 } else { -1.0 };
        let coef = sign * binomial(d - 1, gap) as f64;
        // odometer over the tensor product
        let sizes: Vec<usize> = idx.iter().map(|&l| rules[l as usize - 1].len()).collect();
        let mut digits = vec![0usize; d];
        loop {
            let mut w = coef;
            for a in 0..d {
                let l = idx[a];
                w *= rules[l as usize - 1][digits[a]];
                key[a] = position(l, digits[a] as u64);
            }
            *merged.entry(key.clone()).or_insert(0.0) += w;
            let mut a = d;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                digits[a] += 1;
                if digits[a] < sizes[a] {
                    break;
                }
                digits[a] = 0;
            }
        }
    });

    let mut nodes = Vec::with_capacity(merged.len() * d);
    let mut weights = Vec::with_capacity(merged.len());
    for (k, w) in merged {
        nodes.extend(k.iter().map(|&p| cc_node(p, fine)));
        weights.push(w);
    }
    Ok(QuadratureRule { dimension: d, spec: QuadSpec::Sparse { level }, nodes, weights })
}

/// Tensor grid of `m` equispaced points per axis with trapezoidal weights.
pub fn uniform_grid(d: usize, m: usize) -> Result<QuadratureRule> {
    uniform_grid_capped(d, m, DEFAULT_NODE_CAP)
}

pub fn uniform_grid_capped(d: usize, m: usize, cap: u64) -> Result<QuadratureRule> {
    if d == 0 || m < 2 {
        return Err(Error::InvalidArgument(format!("need d >= 1 and m >= 2, got d={d}, m={m}")));
    }
    let predicted = (m as u64).checked_pow(d as u32).unwrap_or(u64::MAX);
    if predicted > cap {
        return Err(Error::TooManyNodes { predicted, cap });
    }
    let h = 2.0 / (m - 1) as f64;
    let axis: Vec<f64> = (0..m).map(|a| if a == m - 1 { 1.0 } else { -1.0 + a as f64 * h }).collect();
    let axis_w: Vec<f64> = (0..m).map(|a| if a == 0 || a == m - 1 { h / 2.0 } else { h }).collect();
    let total = predicted as usize;
    let mut nodes = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    let mut digits = vec![0usize; d];
    for _ in 0..total {
        let mut w = 1.0;
        for &a in &digits {
            nodes.push(axis[a]);
            w *= axis_w[a];
        }
        weights.push(w);
        for a in (0..d).rev() {
            digits[a] += 1;
            if digits[a] < m {
                break;
            }
            digits[a] = 0;
        }
    }
    Ok(QuadratureRule { dimension: d, spec: QuadSpec::Uniform { m }, nodes, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXEC: Execution = Execution::Sequential;

    #[test]
    fn node_counts() {
        assert_eq!(clenshaw_curtis_1d(7).unwrap().len(), 65);
        assert_eq!(cc_node_count(20), 524_289);
        assert_eq!(smolyak_node_count(2, 11), 7169);
        assert_eq!(smolyak_sparse_grid(2, 11).unwrap().len(), 7169);
    }

    #[test]
    fn level_one_is_midpoint() {
        let r = clenshaw_curtis_1d(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert_eq!(r.weights(), &[2.0]);
    }

    #[test]
    fn level_two_is_simpson() {
        let r = clenshaw_curtis_1d(2).unwrap();
        assert_eq!(r.nodes(), &[1.0, 0.0, -1.0]);
        for (w, e) in r.weights().iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn integrates_reference_functions() {
        let r = clenshaw_curtis_1d(7).unwrap();
        assert!((r.integrate(|_| 1.0, EXEC).unwrap() - 2.0).abs() < 1e-13);
        assert!((r.integrate(|x| x[0] * x[0], EXEC).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((r.integrate(|x| x[0].exp(), EXEC).unwrap() - (e - 1.0 / e)).abs() < 1e-10);
    }

    #[test]
    fn non_finite_integrand_names_node() {
        let r = clenshaw_curtis_1d(2).unwrap();
        let err = r.integrate(|x| 1.0 / x[0], EXEC).unwrap_err();
        assert!(matches!(err, Error::NonFinite { node: 1, .. }));
    }

    #[test]
    fn weight_sums() {
        for (d, l) in [(1, 5), (2, 3), (3, 4), (4, 8)] {
            let r = smolyak_sparse_grid(d, l).unwrap();
            let s: f64 = r.weights().iter().sum();
            let exact = 2f64.powi(d as i32);
            assert!(((s - exact) / exact).abs() < 1e-12, "d={d} l={l} sum={s}");
        }
    }

    #[test]
    fn uniform_grid_shapes() {
        let r = uniform_grid(1, 2).unwrap();
        assert_eq!(r.nodes(), &[-1.0, 1.0]);
        assert_eq!(r.weights(), &[1.0, 1.0]);
        assert_eq!(uniform_grid(2, 85).unwrap().len(), 7225);
        let r = uniform_grid(1, 101).unwrap();
        let m2 = r.integrate(|x| x[0] * x[0], EXEC).unwrap() / 2.0;
        assert!((m2 - 1.0 / 3.0).abs() < 1e-3);
        assert!(uniform_grid(1, 1).is_err());
    }

    #[test]
    fn caps_are_enforced() {
        assert!(matches!(smolyak_sparse_grid_capped(3, 6, 10), Err(Error::TooManyNodes { .. })));
        assert!(matches!(uniform_grid_capped(3, 100, 1000), Err(Error::TooManyNodes { .. })));
        assert!(smolyak_sparse_grid(0, 3).is_err());
        assert!(clenshaw_curtis_1d(0).is_err());
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        clenshaw_curtis_1d(2).unwrap().write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 4);
        assert!(s.starts_with("x1,weight"));
    }

    #[test]
    fn spec_json() {
        let s = serde_json::to_string(&QuadSpec::Sparse { level: 7 }).unwrap();
        assert_eq!(s, r#"{"kind":"sparse","level":7}"#);
        let u: QuadSpec = serde_json::from_str(r#"{"kind":"uniform","m":85}"#).unwrap();
        assert_eq!(u, QuadSpec::Uniform { m: 85 });
    }
}
