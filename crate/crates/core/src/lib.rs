//! Dual-view Dirichlet-process mixture model.
//!
//! Users are clustered jointly over observed feature vectors and latent
//! per-user regression coefficients ("catalytic power") that explain the
//! lengths of the threads they start. Inference is by Gibbs sampling with
//! auxiliary components for new clusters and adaptive rejection sampling for
//! the non-conjugate scalars.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ars;
pub mod assignment;
pub mod behavior_view;
pub mod datagen;
pub mod diagnostics;
pub mod dists;
pub mod error;
pub mod feature_view;
pub mod gibbs;
pub mod io;
pub mod kmeans;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod summarize;

pub use error::{Error, Result};
