//! Fairness-constrained linear SVMs and the exact path of their dual
//! solutions as the fairness tolerance varies.
//!
//! The crate covers five capabilities:
//!
//! - [`dataset`]: loading, validating and standardizing labeled data with a
//!   binary protected attribute.
//! - [`solver`]: the covariance-constrained soft-margin SVM at a fixed
//!   tolerance, with primal recovery and shadow prices.
//! - [`path`]: the piecewise-linear trajectory of the dual variables, its
//!   breakpoints and the welfare of each group along the way.
//! - [`welfare`]: group welfare, Pareto comparisons and the welfare weights
//!   implied by an allocation.
//! - [`labeling`]: enumeration of every labeling a hyperplane can realize.
//!
//! [`export`] holds the file formats written by the `fairpath` binary, whose
//! argument handling lives in [`cli`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod dataset;
pub mod error;
pub mod export;
mod float_serde;
pub mod kernel;
pub mod labeling;
pub mod linalg;
pub mod path;
pub mod solver;
pub mod synth;
pub mod welfare;

pub use dataset::{group_stats, load_dataset, standardize, Dataset, GroupStats, Schema};
pub use error::{Error, Result};
pub use kernel::{projected_kernel, ProjectedKernel};
pub use labeling::{enumerate_labelings, separability_oracle, LabelingWitness, PointCloud};
pub use path::{
    trace_path, trace_path_with, Breakpoint, EventKind, PathOptions, Segment, SolutionPath,
};
pub use solver::{
    global_sensitivity_bound, partition, recover_primal, shadow_price, solve_dual, BindingSide,
    DualSolution, FairSvm, Membership, Partition, PrimalSolution, SolverOptions,
};
pub use welfare::{implied_weights, pareto_compare, ParetoTag, WeightProfile, WelfareTriple};
