//! Stable invariant foliations of a stochastic parabolic equation with dynamic boundary conditions.

// Negated comparisons are used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approximation;
pub mod assembly;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod foliation;
pub mod noise;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
