//! Dynamic mixed-membership stochastic block model for weighted labeled networks.
//!
//! Nodes belong to `K` clusters in proportions that change from epoch to
//! epoch; each cluster emits labels from its own distribution. Parameters are
//! fitted by EM under a Dirichlet prior centred on the kernel-weighted
//! average of the same parameter at neighbouring epochs, so memberships may
//! drift but not jump.

// `!(x > 0.0)` is used on purpose to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod model;
pub mod prior;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
pub use inference::{fit, fit_from, BlockMode, FitConfig, FitReport};
pub use model::{
    edge_probability, log_posterior, BlockTensor, Dataset, FittedModel, LogPosterior,
    MembershipTensor, Observation,
};
pub use prior::PriorConfig;
