//! Simulation and analysis library for open-loop distributed beamforming.
//!
//! Secondary nodes range to a repeating primary node with a two-tone
//! stepped-frequency waveform, refine the delay with a matched filter,
//! spline interpolation and a scalar Kalman filter, and turn the range into
//! a carrier phase correction so that every node's beamforming signal adds
//! coherently at a distant receiver.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod beamform;
pub mod channel;
pub mod dsp;
pub mod error;
pub mod io;
pub mod ranging;
pub mod scenario;
pub mod signal;
pub mod spline;
pub mod tracking;
pub mod waveform;

pub use error::{Error, Result};
pub use signal::SignalBuffer;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Rounded value used when reproducing hand-worked link budgets.
pub const ROUNDED_SPEED_OF_LIGHT: f64 = 3e8;
