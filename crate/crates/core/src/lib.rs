//! Subspace learning on Grassmann manifolds.
//!
//! Multivariate sequences (one column per frame) are summarised by the
//! leading left singular vectors of their data matrix together with the
//! normalized singular values. On top of that representation the crate
//! provides:
//!
//! * [`kernels`]: the Projection, Binet-Cauchy and scaled Projection kernels,
//!   and the two disturbance Grassmann kernels (pseudo-Gaussian and Dirichlet)
//!   which average the Projection kernel over random perturbations of the
//!   input subspaces in closed form;
//! * [`grassmann`]: manifold geometry plus the Monte-Carlo samplers used to
//!   check the closed-form expectations;
//! * [`svm`]: a dual SMO solver and one-vs-one multiclass wrapper working on
//!   precomputed Gram matrices;
//! * [`harness`]: dataset ingestion, corruption protocols, grid search and
//!   reporting.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grassmann;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod subspace;
pub mod svm;

pub use error::{Error, Result};
pub use kernels::{GramMatrix, KernelFamily, KernelSpec};
pub use subspace::{NullBasis, SequenceMatrix, SubspaceRep};
pub use svm::{MulticlassModel, SvmModel};
