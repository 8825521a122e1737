//! Autoencoders viewed as continuous piecewise-affine (CPA) operators.
//!
//! The crate exposes the per-region affine structure of fully connected
//! ReLU-family autoencoders, their tangent geometry, and training with
//! Lie-group orbit regularizers whose group strengths are solved in closed
//! form.

// `!(x > 0.0)` style guards reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod commands;
pub mod cpa;
pub mod data;
pub mod io;
pub mod liegroup;
pub mod network;
pub mod partition;
pub mod regularizers;
pub mod trainer;
