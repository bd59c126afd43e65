//! Surrogate-based global optimization with gradient information.
//!
//! The crate provides ordinary Kriging, direct and indirect gradient-enhanced
//! Kriging, and a primal-dual aggregation model that blends a Kriging model
//! with a first-order Taylor expansion about the nearest gradient-bearing
//! sample. An Efficient Global Optimization loop drives any of these models
//! against analytic benchmarks or an external solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod cli;
pub mod config;
pub mod crossval;
pub mod ego;
pub mod error;
pub mod evaluator;
pub mod gek;
pub mod kriging;
pub mod modelfile;
pub mod linalg;
pub mod nearest;
pub mod numfmt;
pub mod optim;
pub mod samples;
pub mod space;
pub mod surrogate;

pub use error::{Error, Result};
