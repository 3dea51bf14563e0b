//! Probabilistic inference for heterogeneous and attributed multilayer networks.
//!
//! Nodes carry mixed community memberships `U` (out-going) and `V` (in-coming),
//! every layer has a `K x K` affinity matrix `W^l`, and every node attribute has a
//! community-covariate block `H`. All latent variables are real valued with
//! Gaussian priors; the expected value of each observation is obtained by pushing
//! the latent variables through a softmax (memberships) and a type-specific link
//! (`logistic`, `exp`, identity, row softmax).
//!
//! The crate is `no_std` with `alloc`. The default `std` feature only adds
//! data-parallel execution of optimizer restarts, folds and replicas; results are
//! bitwise identical with and without it.
//!
//! Module map:
//! - [`model`]: data model, expected values, log-likelihood / prior / posterior.
//! - [`diff`]: reverse-mode gradients, exact block Hessians, finite-difference checks.
//! - [`inference`]: Adam with restarts (MAP) and Laplace covariance blocks.
//! - [`matching`]: Gaussian posteriors mapped to Dirichlet, log-normal and logit-normal.
//! - [`generator`]: synthetic heterogeneous networks.
//! - [`evaluation`]: cross-validation, prediction metrics, posterior-predictive checks,
//!   interpretation metrics and community recovery.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod math;
mod par;

pub mod diff;
pub mod evaluation;
pub mod generator;
pub mod inference;
pub mod matching;
pub mod model;

pub use error::{Error, Result};
