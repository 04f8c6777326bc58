//! Phase correction and coherent summation at the receiver.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

/// Default beamforming carrier, Hz.
pub const DEFAULT_BEAMFORMING_FREQUENCY: f64 = 1.5e9;

/// Carrier phase matching a baseline `d` at steering angle `theta`,
/// `2π (d/λ) cos θ`, wrapped to `[0, 2π)`.
pub fn phase_correction(d: f64, wavelength: f64, theta: f64) -> Result<f64> {
    if !(wavelength > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    let phi = (TAU * (d / wavelength) * theta.cos()).rem_euclid(TAU);
    // rem_euclid can land on TAU itself after rounding.
    Ok(if phi >= TAU { 0.0 } else { phi })
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// One transmitter's contribution at the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEmission {
    /// Transmit amplitude `α_n`.
    pub amplitude: f64,
    /// Channel response `h_n` to the receiver, excluding the path phase.
    pub channel_gain: Complex64,
    /// Applied phase `φ_n`, radians.
    pub phase_offset: f64,
    /// Position on the array axis, meters.
    pub position: f64,
}

impl NodeEmission {
    pub fn new(
        amplitude: f64,
        channel_gain: Complex64,
        phase_offset: f64,
        position: f64,
    ) -> Result<Self> {
        if !(amplitude >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "amplitude must be non-negative, got {amplitude}"
            )));
        }
        Ok(Self {
            amplitude,
            channel_gain,
            phase_offset,
            position,
        })
    }

    /// Emission whose channel is free-space spreading `1/R` to `receiver`.
    pub fn spherical(
        amplitude: f64,
        phase_offset: f64,
        position: f64,
        receiver: &Receiver,
    ) -> Result<Self> {
        let r = (receiver.position - position).abs();
        if !(r > 0.0) {
            return Err(Error::InvalidGeometry("node sits on the receiver".into()));
        }
        Self::new(
            amplitude,
            Complex64::new(1.0 / r, 0.0),
            phase_offset,
            position,
        )
    }
}

/// Receive point and carrier used for summation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receiver {
    pub position: f64,
    pub frequency: f64,
    pub speed_of_light: f64,
}

impl Receiver {
    pub fn new(position: f64, frequency: f64) -> Self {
        Self {
            position,
            frequency,
            speed_of_light: SPEED_OF_LIGHT,
        }
    }

    pub fn wavelength(&self) -> f64 {
        self.speed_of_light / self.frequency
    }

    /// Path phase `2π R / λ` from `position` to the receiver.
    pub fn path_phase(&self, position: f64) -> f64 {
        TAU * (self.position - position).abs() / self.wavelength()
    }

    /// Complex amplitude one emission contributes at time `t`.
    pub fn contribution(&self, node: &NodeEmission, t: f64) -> Complex64 {
        node.channel_gain
            * node.amplitude
            * Complex64::cis(
                TAU * self.frequency * t + node.phase_offset - self.path_phase(node.position),
            )
    }
}

/// Field at the receiver, `Σ h_n α_n exp(j(2πft + φ_n + φ_s,n))`, with the
/// geometric phase `φ_s,n = -2π R_n / λ` taken from exact path lengths.
pub fn received_sum(nodes: &[NodeEmission], receiver: &Receiver, t: f64) -> Result<Complex64> {
    if nodes.is_empty() {
        return Err(Error::InvalidParameter("no nodes to sum".into()));
    }
    Ok(nodes.iter().map(|n| receiver.contribution(n, t)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainResult {
    /// `(actual / ideal)²`.
    pub coherent_gain: f64,
    pub actual_amplitude: f64,
    pub ideal_amplitude: f64,
}

/// Beamformed power with errors relative to the error-free array.
pub fn coherent_gain(
    with_errors: &[NodeEmission],
    ideal: &[NodeEmission],
    receiver: &Receiver,
) -> Result<GainResult> {
    if with_errors.len() != ideal.len() {
        return Err(Error::InvalidParameter(format!(
            "node counts differ ({} vs {})",
            with_errors.len(),
            ideal.len()
        )));
    }
    for (a, b) in with_errors.iter().zip(ideal) {
        let same = (a.amplitude * a.channel_gain.norm() - b.amplitude * b.channel_gain.norm())
            .abs()
            <= 1e-12 * (b.amplitude * b.channel_gain.norm()).max(1.0);
        if !same {
            return Err(Error::InvalidParameter(
                "node amplitudes differ between actual and ideal arrays".into(),
            ));
        }
    }
    let actual_amplitude = received_sum(with_errors, receiver, 0.0)?.norm();
    let ideal_amplitude = received_sum(ideal, receiver, 0.0)?.norm();
    if ideal_amplitude == 0.0 {
        return Err(Error::InvalidParameter(
            "ideal array has zero amplitude".into(),
        ));
    }
    Ok(GainResult {
        coherent_gain: (actual_amplitude / ideal_amplitude).powi(2),
        actual_amplitude,
        ideal_amplitude,
    })
}

/// End-fire array in the far field: each node pre-compensates its own path
/// to the receiver, plus the phase of its range error `δd_n`. Channel gains
/// are unity.
pub fn end_fire_emissions(
    positions: &[f64],
    range_errors: &[f64],
    receiver: &Receiver,
) -> Vec<NodeEmission> {
    let lambda = receiver.wavelength();
    positions
        .iter()
        .zip(range_errors)
        .map(|(&x, &dd)| NodeEmission {
            amplitude: 1.0,
            channel_gain: Complex64::new(1.0, 0.0),
            phase_offset: receiver.path_phase(x) + TAU * dd / lambda,
            position: x,
        })
        .collect()
}
