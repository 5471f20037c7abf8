//! Linear time-invariant systems: polynomial and rational transfer-function
//! algebra, state-space realization, discretization, sampled simulation and
//! Bode data export.
//!
//! Polynomials store coefficients in ascending powers of `s`, so the DC gain
//! of a transfer function is the ratio of constant terms.

mod bode;
mod polynomial;
mod signal;
mod state_space;
mod transfer_function;

pub use bode::{bode_data, log_space, write_bode_csv, BodePoint};
pub use polynomial::{poly_mul, Polynomial};
pub use signal::{relative_l2_error, SignalTrace};
pub use state_space::{
    discretize, realize, simulate_inverse, simulate_lti, simulate_mimo, DiscreteStateSpace, Discretization, LtiStepper,
    StateSpace,
};
pub(crate) use state_space::dt_matches;
pub use transfer_function::{
    dc_gain, freq_response, tf_combine, tf_combine_with, tf_inverse, Cancellation, CombineMode,
    TransferFunction,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LtiError {
    #[error("denominator is identically zero")]
    ZeroDenominator,
    #[error("numerator is identically zero")]
    ZeroNumerator,
    #[error("transfer function is improper (relative degree {relative_degree})")]
    ImproperTransferFunction { relative_degree: isize },
    #[error("pole at the origin")]
    PoleAtOrigin,
    #[error("pole on the imaginary axis at omega = {omega} rad/s")]
    PoleOnAxis { omega: f64 },
    #[error("polynomial degree {degree} exceeds the cap of {cap}")]
    DegreeOverflow { degree: usize, cap: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
