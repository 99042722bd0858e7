//! Exact, enumeration-scale toolkit for discrete determinantal point
//! processes given as L-ensembles.
//!
//! * [`kernel`]: kernels, subsets, sign conjugation, the determinantal graph
//!   and symmetric coordinates.
//! * [`dpp`]: the exact point-probability table, inclusion probabilities,
//!   sampling and empirical frequencies.
//! * [`geometry`]: derivatives of the expected log-likelihood, the Hessian
//!   and its null space, fourth-order curvature and the determinantal
//!   identity checks.
//! * [`mle`]: likelihood maximization, sign-orbit loss and Monte Carlo risk.
//! * [`experiments`]: curvature scans, rate studies and variance growth.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is on (the
//! default); see [`par::Execution`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dpp;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod kernel;
pub mod mle;
pub mod optim;
pub mod par;
pub mod random;
pub mod rng;

pub use dpp::{build_table, empirical_table, sample, DppTable, EmpiricalTable, SampleBatch};
pub use error::{DppError, Result};
pub use kernel::{
    conjugate_by_signs, determinantal_graph, k_to_l, l_to_k, symmetric_basis, CorrelationKernel, DeterminantalGraph,
    KernelMatrix, SignDiagonal, SubsetMask, SymmetricDirection,
};
pub use par::Execution;
