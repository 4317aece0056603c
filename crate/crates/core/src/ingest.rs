//! Sample data to moment targets: rescaling to `[-1, 1]^d` and empirical moments.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::exec::{map_chunks, Execution};

/// Points in original units, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dimension: usize,
    points: Vec<f64>,
}

impl SampleSet {
    pub fn new(dimension: usize, points: Vec<f64>) -> Result<Self> {
        if dimension == 0 || points.len() % dimension != 0 {
            return Err(Error::InvalidArgument("point buffer does not match the dimension".into()));
        }
        if points.len() / dimension < 2 {
            return Err(Error::InvalidArgument("need at least two samples".into()));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite coordinate in sample {}", i / dimension)));
        }
        Ok(SampleSet { dimension, points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        Self::new(d, rows.concat())
    }

    /// Reads one sample per row with `d` numeric columns. A first row that
    /// does not parse as numbers is treated as a header.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
        let mut dimension = 0;
        let mut points = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let line = row + 1;
            let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
            if record.iter().all(str::is_empty) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if row == 0 => continue,
                Err(e) => return Err(Error::Parse { line, message: e.to_string() }),
            };
            if dimension == 0 {
                dimension = values.len();
            } else if values.len() != dimension {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {dimension} columns, found {}", values.len()),
                });
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Parse { line, message: format!("non-finite value {v}") });
            }
            points.extend(values);
        }
        if points.is_empty() {
            return Err(Error::Parse { line: 1, message: "no samples".into() });
        }
        Self::new(dimension, points)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn count(&self) -> usize {
        self.points.len() / self.dimension
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dimension..(i + 1) * self.dimension]
    }
}

/// Per-axis affine map from `[lo, hi]` onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineRescale {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AffineRescale {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        for (axis, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l < h) || !l.is_finite() || !h.is_finite() {
                return Err(Error::DegenerateAxis { axis });
            }
        }
        Ok(AffineRescale { lo, hi })
    }

    pub fn dimension(&self) -> usize {
        self.lo.len()
    }

    /// Original coordinates to the hypercube. Endpoints map exactly to -1 and 1.
    pub fn to_unit(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| {
                if v == l {
                    -1.0
                } else if v == h {
                    1.0
                } else {
                    ((2.0 * v - l - h) / (h - l)).clamp(-1.0, 1.0)
                }
            })
            .collect()
    }

    pub fn to_original(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| 0.5 * (l + h) + 0.5 * (h - l) * v)
            .collect()
    }

    /// `|d x / d y|`, the density factor from hypercube to original units.
    pub fn jacobian(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 2.0 / (h - l)).product()
    }
}

/// Per-axis sample min/max.
pub fn fit_rescale(samples: &SampleSet) -> Result<AffineRescale> {
    let d = samples.dimension();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..samples.count() {
        for (k, &v) in samples.point(i).iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    AffineRescale::new(lo, hi)
}

/// `f_j = (1/N) sum_s c_j(rescaled sample s)`.
pub fn empirical_moments(
    samples: &SampleSet,
    rescale: &AffineRescale,
    basis: &BasisSet,
    exec: Execution,
) -> Result<Vec<f64>> {
    let d = samples.dimension();
    if rescale.dimension() != d || basis.dimension() != d {
        return Err(Error::DimensionMismatch { expected: d, got: basis.dimension() });
    }
    let n = basis.len();
    let parts = map_chunks(samples.count(), exec, |r| {
        let mut acc = vec![0.0; n];
        for s in r {
            let x = rescale.to_unit(samples.point(s));
            if x.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::OutsideDomain { node: s, point: x });
            }
            for (a, m) in acc.iter_mut().zip(basis.indices()) {
                *a += m.eval(&x);
            }
        }
        Ok(acc)
    });
    let mut total = vec![0.0; n];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    let count = samples.count() as f64;
    Ok(total.into_iter().map(|v| v / count).collect())
}
