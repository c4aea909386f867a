//! Switching-current statistics of a current-biased Josephson junction
//! whose phase obeys a time-dependent Schrödinger equation in the tilted
//! washboard potential, with discrete projective voltage measurements
//! during the bias ramp.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::result_large_err)]

pub mod absorber;
pub mod config;
pub mod error;
pub mod experiments;
pub mod initial;
pub mod io;
pub mod measure;
pub mod potential;
pub mod propagate;
pub mod ratefit;
pub mod state;
pub mod tridiag;
pub mod units;
pub mod wkb;

pub use error::{Error, Result};
