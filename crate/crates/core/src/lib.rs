//! Traction-parameter identification: vehicle dynamics, adhesion-slip
//! curves, an adaptive unscented Kalman filter for online estimation, and
//! offline analysis of the estimates.

// `!(x > 0.0)` style checks are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod aukf;
pub mod dynamics;
pub mod estimator;
pub mod harness;
pub mod soil;
pub mod ukf;
