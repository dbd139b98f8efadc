//! Local asymptotic normality (LAN) based Neyman-Pearson tests for
//! parametric mean/scale time-series models against contiguous alternatives.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod quad;
pub mod rng;
pub mod score;
pub mod stats;
pub mod tsmodel;
pub mod estimate;
pub mod lan;
pub mod mc;
pub mod cli;

pub use error::{Error, Result};
