//! Data-parallel helpers over quadrature nodes and samples.
//!
//! Work is split into fixed-size chunks whose partial results are combined
//! in chunk order, so parallel and sequential execution produce bitwise
//! identical results. Without the `parallel` feature both policies run
//! sequentially.

use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Number of items handled by one unit of work.
pub const CHUNK_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

fn chunk_ranges(len: usize) -> impl Iterator<Item = Range<usize>> + Clone {
    (0..len.div_ceil(CHUNK_SIZE)).map(move |c| c * CHUNK_SIZE..((c + 1) * CHUNK_SIZE).min(len))
}

/// Evaluates `f` on each chunk of `0..len` and returns the results in chunk order.
pub fn map_chunks<T, F>(len: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        let ranges: Vec<Range<usize>> = chunk_ranges(len).collect();
        return ranges.into_par_iter().map(f).collect();
    }
    let _ = exec;
    chunk_ranges(len).map(f).collect()
}

/// Evaluates `f` at each index of `0..len`, preserving order.
pub fn map_indices<T, F>(len: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let parts = map_chunks(1000, Execution::Parallel, |r| (r.start, r.end));
        assert_eq!(parts.first(), Some(&(0, CHUNK_SIZE)));
        assert_eq!(parts.last().unwrap().1, 1000);
        for w in parts.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        assert!(map_chunks(0, Execution::Sequential, |r| r.len()).is_empty());
    }

    #[test]
    fn policies_agree_bitwise() {
        let f = |r: Range<usize>| r.map(|i| (i as f64).sqrt().sin()).sum::<f64>();
        let a: f64 = map_chunks(5000, Execution::Parallel, f).into_iter().sum();
        let b: f64 = map_chunks(5000, Execution::Sequential, f).into_iter().sum();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
