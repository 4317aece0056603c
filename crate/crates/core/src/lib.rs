//! Maximum-entropy density reconstruction from moments.
//!
//! A density `rho(x) = exp(sum_j lambda_j c_j(x)) / Z` on `[-1, 1]^d` is
//! fitted to prescribed moments of monomials `c_j`. The main solver
//! introduces constraints one at a time ([`ebe::ebe_solve`]); full-system
//! Newton is available in [`baselines`] for comparison.

pub mod baselines;
pub mod basis;
pub mod ebe;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod linalg;
pub mod problem;
pub mod quadrature;
pub mod report;

pub use baselines::{newton_full_solve, Diverged, NewtonConfig};
pub use basis::{BasisSet, MultiIndex};
pub use ebe::{ebe_solve, EbeConfig, OrderMode};
pub use error::{Error, Result};
pub use exec::Execution;
pub use ingest::{empirical_moments, fit_rescale, AffineRescale, SampleSet};
pub use problem::{Density, MomentProblem, ProblemFile};
pub use quadrature::{QuadSpec, QuadratureRule};
pub use report::SolveReport;
