//! Shared between the oracle, gradient and acceptance test targets; not every
//! target uses every helper.
#![allow(dead_code)]

pub mod brute;
pub mod gradsuite;
pub mod oracles;
