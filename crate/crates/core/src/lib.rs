//! Channel prediction toolkit for RIS-assisted MIMO links under channel aging.
//!
//! The pipeline synthesizes Jakes-correlated channel traces, estimates them
//! from uplink pilots with a DFT reflection schedule, and predicts future
//! intervals with an autoregressive model. The AR coefficients come either
//! from a window of estimates or from a CNN that recognizes the Doppler class
//! and dispatches a pre-computed model.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ar;
pub mod beamforming;
pub mod bessel;
pub mod channel;
pub mod classifier;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod scenario;

pub use error::{Error, Result};
