//! Scalar Kalman filter for the correlation-peak measurement.
//!
//! The state model is a constant with a small random perturbation per step:
//! gain, then estimate, then variance.
//!
//! ```text
//! K_n   = σ²_{n-1} / (σ²_{n-1} + σ²_M)
//! x̂_n   = x̂_{n-1} + K_n (z_n - x̂_{n-1})
//! σ²_n  = (1 - K_n) σ²_{n-1} + σ²_c
//! ```

use serde::Serialize;

use crate::error::{Error, Result};

/// Measurement variance of the peak measurement, in the tracked units squared.
pub const DEFAULT_MEASUREMENT_VARIANCE: f64 = 3e-5;
/// Per-step process variance modelling array motion.
pub const DEFAULT_PROCESS_VARIANCE: f64 = 5e-6;
/// Innovation (in tracked units) beyond which an update is flagged.
pub const DEFAULT_INNOVATION_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KalmanState {
    pub estimate: f64,
    pub variance: f64,
    pub measurement_variance: f64,
    pub process_variance: f64,
    pub step: u64,
}

/// What one update did, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KalmanUpdate {
    pub state: KalmanState,
    pub measurement: f64,
    pub gain: f64,
    pub innovation: f64,
    /// Innovation exceeded the divergence threshold.
    pub diverged: bool,
}

/// Starts a track at the first measurement.
pub fn kalman_init(
    z0: f64,
    sigma0_sq: f64,
    sigma_m_sq: f64,
    sigma_c_sq: f64,
) -> Result<KalmanState> {
    // σ²_c = 0 is allowed: it is the no-process-noise limit.
    if !(sigma0_sq > 0.0) || !(sigma_m_sq > 0.0) || !(sigma_c_sq >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Kalman variances must be positive (σ0²={sigma0_sq}, σM²={sigma_m_sq}, σc²={sigma_c_sq})"
        )));
    }
    if !z0.is_finite() {
        return Err(Error::InvalidParameter(
            "initial measurement is not finite".into(),
        ));
    }
    Ok(KalmanState {
        estimate: z0,
        variance: sigma0_sq,
        measurement_variance: sigma_m_sq,
        process_variance: sigma_c_sq,
        step: 0,
    })
}

impl KalmanState {
    /// Gain the next update will use.
    pub fn next_gain(&self) -> f64 {
        self.variance / (self.variance + self.measurement_variance)
    }

    /// Fixed point of the variance recursion,
    /// `s* = (σ²_c + sqrt(σ⁴_c + 4 σ²_c σ²_M)) / 2`.
    pub fn steady_state_variance(&self) -> f64 {
        steady_state_variance(self.measurement_variance, self.process_variance)
    }
}

pub fn steady_state_variance(sigma_m_sq: f64, sigma_c_sq: f64) -> f64 {
    (sigma_c_sq + (sigma_c_sq * sigma_c_sq + 4.0 * sigma_c_sq * sigma_m_sq).sqrt()) / 2.0
}

/// Gain in steady state, `s* / (s* + σ²_M)`.
pub fn steady_state_gain(sigma_m_sq: f64, sigma_c_sq: f64) -> f64 {
    let s = steady_state_variance(sigma_m_sq, sigma_c_sq);
    s / (s + sigma_m_sq)
}

pub fn kalman_update(state: KalmanState, z: f64) -> KalmanState {
    kalman_step(state, z, f64::INFINITY).state
}

/// Update that also reports gain, innovation and the divergence flag.
pub fn kalman_step(state: KalmanState, z: f64, innovation_threshold: f64) -> KalmanUpdate {
    let gain = state.next_gain();
    let innovation = z - state.estimate;
    let estimate = state.estimate + gain * innovation;
    let variance = (1.0 - gain) * state.variance + state.process_variance;
    KalmanUpdate {
        state: KalmanState {
            estimate,
            variance,
            step: state.step + 1,
            ..state
        },
        measurement: z,
        gain,
        innovation,
        diverged: innovation.abs() > innovation_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_state(z0: f64) -> KalmanState {
        kalman_init(
            z0,
            DEFAULT_MEASUREMENT_VARIANCE,
            DEFAULT_MEASUREMENT_VARIANCE,
            DEFAULT_PROCESS_VARIANCE,
        )
        .unwrap()
    }

    #[test]
    fn init_rejects_bad_variances() {
        assert!(kalman_init(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(kalman_init(0.0, 1.0, -1.0, 1.0).is_err());
        assert!(kalman_init(0.0, 1.0, 1.0, -1e-9).is_err());
        assert!(kalman_init(f64::NAN, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn equal_variances_give_half_gain() {
        let s = default_state(2.0);
        assert_eq!(s.estimate, 2.0);
        assert!((s.next_gain() - 0.5).abs() < 1e-15);
        let u = kalman_step(s, 4.0, 10.0);
        assert!((u.gain - 0.5).abs() < 1e-15);
        assert!((u.state.estimate - 3.0).abs() < 1e-15);
        // (1 - 0.5)·3e-5 + 5e-6
        assert!((u.state.variance - 2e-5).abs() < 1e-18);
    }

    #[test]
    fn converges_to_constant_measurement() {
        let mut s = default_state(0.0);
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            s = kalman_update(s, 1.0);
            let err = (s.estimate - 1.0).abs();
            assert!(err <= prev);
            prev = err;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn steady_state_closed_form() {
        let s_star = steady_state_variance(3e-5, 5e-6);
        assert!((s_star - 1.5e-5).abs() < 1e-18);
        assert!((steady_state_gain(3e-5, 5e-6) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_process_noise_shuts_the_gain() {
        let mut s = kalman_init(0.0, 1.0, 1.0, 0.0).unwrap();
        for _ in 0..10_000 {
            s = kalman_update(s, 0.5);
        }
        assert!(s.variance < 1e-3);
        assert!(s.next_gain() < 1e-3);
    }

    #[test]
    fn large_innovations_are_flagged() {
        let s = default_state(0.0);
        assert!(!kalman_step(s, 2.9, 3.0).diverged);
        assert!(kalman_step(s, -3.1, 3.0).diverged);
    }
}
