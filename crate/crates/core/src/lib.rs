//! Prototype-based self-explainable classifiers with a volumetric
//! (Gram-determinant) prototype diversity loss.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pruning;
pub mod train;

pub use error::{Error, Result};
