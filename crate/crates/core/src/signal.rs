//! Uniformly sampled complex baseband buffers.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A run of complex baseband samples taken at `sample_rate`, the first of
/// which sits at `start_time` seconds on the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBuffer {
    samples: Vec<Complex64>,
    sample_rate: f64,
    start_time: f64,
}

impl SignalBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, start_time: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSignal("buffer has no samples".into()));
        }
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::InvalidSignal(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !start_time.is_finite() {
            return Err(Error::InvalidSignal("start time must be finite".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            start_time,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Time of sample `k` on the simulation clock.
    pub fn time_of(&self, k: usize) -> f64 {
        self.start_time + k as f64 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Mean power over the samples that carry signal.
    ///
    /// A sample counts as active when its power is within 30 dB of the
    /// buffer's peak power, which excludes gated-off gaps (and the low-level
    /// interpolation ringing inside them) without discarding the brief
    /// nulls of a two-tone beat.
    pub fn active_power(&self) -> f64 {
        let peak = self
            .samples
            .iter()
            .map(|s| s.norm_sqr())
            .fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let floor = peak * 1e-3;
        let (sum, count) = self
            .samples
            .iter()
            .map(|s| s.norm_sqr())
            .filter(|&p| p >= floor)
            .fold((0.0, 0usize), |(s, c), p| (s + p, c + 1));
        sum / count as f64
    }

    /// Returns a copy with `before` zeros prepended and `after` appended.
    /// The start time moves back so every original sample keeps its time.
    pub fn padded(&self, before: usize, after: usize) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        let mut samples = Vec::with_capacity(before + self.samples.len() + after);
        samples.resize(before, zero);
        samples.extend_from_slice(&self.samples);
        samples.resize(before + self.samples.len() + after, zero);
        Self {
            samples,
            sample_rate: self.sample_rate,
            start_time: self.start_time - before as f64 / self.sample_rate,
        }
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            sample_rate: self.sample_rate,
            start_time: self.start_time,
        }
    }

    /// Sample-wise sum of two buffers on the same time grid.
    pub fn add(&self, other: &SignalBuffer) -> Result<Self> {
        self.check_aligned(other)?;
        Ok(Self {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            sample_rate: self.sample_rate,
            start_time: self.start_time,
        })
    }

    fn check_aligned(&self, other: &SignalBuffer) -> Result<()> {
        if self.samples.len() != other.samples.len()
            || self.sample_rate != other.sample_rate
            || (self.start_time - other.start_time).abs() > 0.25 / self.sample_rate
        {
            return Err(Error::InvalidSignal(
                "buffers do not share a time grid".into(),
            ));
        }
        Ok(())
    }

    /// Real part of every sample, for export to real-valued hardware paths.
    pub fn real_part(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_bad_rate() {
        assert!(SignalBuffer::new(vec![], 1.0, 0.0).is_err());
        assert!(SignalBuffer::new(vec![Complex64::new(1.0, 0.0)], 0.0, 0.0).is_err());
        assert!(SignalBuffer::new(vec![Complex64::new(1.0, 0.0)], f64::NAN, 0.0).is_err());
    }

    #[test]
    fn padding_preserves_sample_times() {
        let s = SignalBuffer::new(vec![Complex64::new(1.0, 0.0); 4], 10.0, 1.0).unwrap();
        let p = s.padded(3, 2);
        assert_eq!(p.len(), 9);
        assert!((p.time_of(3) - 1.0).abs() < 1e-12);
        assert_eq!(p.samples()[3], Complex64::new(1.0, 0.0));
        assert_eq!(p.samples()[8], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn active_power_ignores_gaps() {
        let mut v = vec![Complex64::new(2.0, 0.0); 10];
        v.extend(vec![Complex64::new(0.0, 0.0); 30]);
        let s = SignalBuffer::new(v, 1.0, 0.0).unwrap();
        assert!((s.active_power() - 4.0).abs() < 1e-12);
    }
}
