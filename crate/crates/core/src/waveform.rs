//! Two-tone stepped-frequency ranging waveform.
//!
//! Each pulse carries a pair of tones separated by `Δf = N·δf`; successive
//! pulses step the pair by `δf`. The order in which a node walks through the
//! frequency steps is its pulse signature, which is what lets several
//! secondaries range against the same repeater at the same time.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::signal::SignalBuffer;

/// Default sample rate of the node receivers, Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 25e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    /// Number of pulses `N`.
    pub n_pulses: usize,
    /// Lower tone of the first frequency step, Hz.
    pub f1: f64,
    /// Frequency step `δf` between pulses, Hz.
    pub delta_f_step: f64,
    /// Active fraction of each pulse period, in (0, 1].
    pub duty_cycle: f64,
    /// Pulse period `T`, seconds.
    pub pulse_period: f64,
    pub sample_rate: f64,
    /// Nominal waveform bandwidth `BW`, Hz. Drives the closed-form
    /// mean-squared bandwidth.
    pub bandwidth: f64,
}

/// Step size `δf = BW / (2N - 1)`.
pub fn derive_step(bandwidth: f64, n_pulses: usize) -> Result<f64> {
    if !(bandwidth > 0.0) || n_pulses == 0 {
        return Err(Error::InvalidParameter(format!(
            "derive_step needs bandwidth > 0 and n_pulses >= 1 (got {bandwidth}, {n_pulses})"
        )));
    }
    Ok(bandwidth / (2 * n_pulses - 1) as f64)
}

/// Tone separation within a pulse, `Δf = N·δf`.
pub fn tone_separation(delta_f_step: f64, n_pulses: usize) -> f64 {
    n_pulses as f64 * delta_f_step
}

impl WaveformSpec {
    /// Builds a spec whose step follows from the bandwidth.
    pub fn from_bandwidth(
        n_pulses: usize,
        f1: f64,
        bandwidth: f64,
        pulse_period: f64,
        duty_cycle: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        let delta_f_step = derive_step(bandwidth, n_pulses)?;
        Ok(Self {
            n_pulses,
            f1,
            delta_f_step,
            duty_cycle,
            pulse_period,
            sample_rate,
            bandwidth,
        })
    }

    /// Single-pulse waveform used between one primary and one secondary:
    /// 1 ms period at 50% duty, tones at 0.5 and 11.5 MHz.
    pub fn two_node() -> Self {
        Self::from_bandwidth(1, 0.5e6, 11e6, 1e-3, 0.5, DEFAULT_SAMPLE_RATE)
            .expect("preset is valid")
    }

    /// Five-pulse waveform for the two-secondary array: 200 µs pulses at
    /// 50% duty, first pair at 0.5/5.5 MHz, 1 MHz steps (BW = 9 MHz).
    pub fn three_node() -> Self {
        Self::from_bandwidth(5, 0.5e6, 9e6, 200e-6, 0.5, DEFAULT_SAMPLE_RATE)
            .expect("preset is valid")
    }

    /// Upper tone of the first step, `f2 = f1 + Δf`.
    pub fn f2(&self) -> f64 {
        self.f1 + self.tone_separation()
    }

    pub fn tone_separation(&self) -> f64 {
        tone_separation(self.delta_f_step, self.n_pulses)
    }

    /// Highest tone the waveform ever occupies.
    pub fn highest_tone(&self) -> f64 {
        self.f2() + (self.n_pulses.saturating_sub(1)) as f64 * self.delta_f_step
    }

    /// Active time per pulse, `T_r = T · duty`.
    pub fn active_duration(&self) -> f64 {
        self.pulse_period * self.duty_cycle
    }

    pub fn total_duration(&self) -> f64 {
        self.n_pulses as f64 * self.pulse_period
    }

    pub fn samples_per_period(&self) -> usize {
        (self.pulse_period * self.sample_rate).round() as usize
    }

    pub fn active_samples_per_pulse(&self) -> usize {
        ((self.active_duration() * self.sample_rate).round() as usize)
            .min(self.samples_per_period())
    }

    pub fn total_samples(&self) -> usize {
        self.n_pulses * self.samples_per_period()
    }

    /// The (lower, upper) tone pair transmitted at frequency step `step`.
    pub fn tones_for_step(&self, step: usize) -> (f64, f64) {
        let shift = step as f64 * self.delta_f_step;
        (self.f1 + shift, self.f2() + shift)
    }

    fn check_invariants(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidWaveform(msg));
        if self.n_pulses == 0 {
            return bad("n_pulses must be at least 1".into());
        }
        if !(self.f1 > 0.0) {
            return bad(format!("f1 must be positive, got {}", self.f1));
        }
        if !(self.delta_f_step >= 0.0) {
            return bad(format!(
                "frequency step must be non-negative, got {}",
                self.delta_f_step
            ));
        }
        if self.delta_f_step == 0.0 && self.n_pulses > 1 {
            return bad("a zero frequency step is only allowed for a single pulse".into());
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return bad(format!(
                "duty cycle must be in (0, 1], got {}",
                self.duty_cycle
            ));
        }
        if !(self.pulse_period > 0.0) {
            return bad(format!(
                "pulse period must be positive, got {}",
                self.pulse_period
            ));
        }
        if !(self.sample_rate > 0.0) {
            return bad(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            ));
        }
        if !(self.bandwidth > 0.0) {
            return bad(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            ));
        }
        if self.active_samples_per_pulse() == 0 {
            return bad("active portion of a pulse is shorter than one sample".into());
        }
        let nyquist = self.sample_rate / 2.0;
        if self.highest_tone() >= nyquist {
            return Err(Error::NyquistViolation {
                highest_hz: self.highest_tone(),
                nyquist_hz: nyquist,
            });
        }
        Ok(())
    }
}

/// `n!` as u128, saturating (only compared against connection counts).
pub fn factorial(n: usize) -> u128 {
    (1..=n as u128).fold(1u128, |acc, k| acc.saturating_mul(k))
}

/// Checks the spec's invariants and that `N!` covers `n_connections`
/// distinct pulse signatures.
pub fn validate_spec(spec: WaveformSpec, n_connections: usize) -> Result<WaveformSpec> {
    spec.check_invariants()?;
    let available = factorial(spec.n_pulses);
    if available < n_connections as u128 {
        return Err(Error::InsufficientSignatures {
            n_pulses: spec.n_pulses,
            available,
            required: n_connections,
        });
    }
    Ok(spec)
}

/// Order in which a node transmits the frequency steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PulseSignature {
    pub node_index: usize,
    /// `pulse_order[k]` is the frequency-step index of the k-th pulse.
    pub pulse_order: Vec<usize>,
}

impl PulseSignature {
    pub fn new(node_index: usize, pulse_order: Vec<usize>) -> Result<Self> {
        let n = pulse_order.len();
        let mut seen = vec![false; n];
        for &p in &pulse_order {
            if p >= n || seen[p] {
                return Err(Error::InvalidParameter(format!(
                    "pulse order {pulse_order:?} is not a permutation of 0..{n}"
                )));
            }
            seen[p] = true;
        }
        if n == 0 {
            return Err(Error::InvalidParameter("empty pulse order".into()));
        }
        Ok(Self {
            node_index,
            pulse_order,
        })
    }

    pub fn ascending(node_index: usize, n_pulses: usize) -> Self {
        Self {
            node_index,
            pulse_order: (0..n_pulses).collect(),
        }
    }

    pub fn descending(node_index: usize, n_pulses: usize) -> Self {
        Self {
            node_index,
            pulse_order: (0..n_pulses).rev().collect(),
        }
    }

    pub fn n_pulses(&self) -> usize {
        self.pulse_order.len()
    }
}

/// Rearranges `v` into its lexicographic successor; false when `v` was the
/// last permutation.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).unwrap();
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Signatures for `count` nodes: node 0 ascends through the steps, node 1
/// descends, and every further node takes the lexicographically next
/// permutation not yet handed out.
pub fn assign_signatures(n_pulses: usize, count: usize) -> Result<Vec<PulseSignature>> {
    if n_pulses == 0 {
        return Err(Error::InvalidParameter(
            "n_pulses must be at least 1".into(),
        ));
    }
    if factorial(n_pulses) < count as u128 {
        return Err(Error::InsufficientSignatures {
            n_pulses,
            available: factorial(n_pulses),
            required: count,
        });
    }
    let mut out: Vec<PulseSignature> = Vec::with_capacity(count);
    let mut cursor: Vec<usize> = (0..n_pulses).collect();
    for node in 0..count {
        let order = match node {
            0 => (0..n_pulses).collect(),
            1 => (0..n_pulses).rev().collect(),
            _ => loop {
                if !out.iter().any(|s| s.pulse_order == cursor) {
                    break cursor.clone();
                }
                if !next_permutation(&mut cursor) {
                    unreachable!("factorial bound guarantees a free permutation");
                }
            },
        };
        out.push(PulseSignature {
            node_index: node,
            pulse_order: order,
        });
    }
    Ok(out)
}

/// How the synthesized samples are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// The `1/N` factor of the waveform definition, nothing else.
    #[default]
    PerPulseCount,
    /// Scale to unit total energy.
    UnitEnergy,
}

/// Samples the waveform for one node's signature.
pub fn synthesize(spec: &WaveformSpec, signature: &PulseSignature) -> Result<SignalBuffer> {
    synthesize_with(spec, signature, Normalization::PerPulseCount)
}

pub fn synthesize_with(
    spec: &WaveformSpec,
    signature: &PulseSignature,
    normalization: Normalization,
) -> Result<SignalBuffer> {
    spec.check_invariants()?;
    if signature.n_pulses() != spec.n_pulses {
        return Err(Error::InvalidParameter(format!(
            "signature has {} pulses, waveform has {}",
            signature.n_pulses(),
            spec.n_pulses
        )));
    }
    let per_period = spec.samples_per_period();
    let active = spec.active_samples_per_pulse();
    let amp = 1.0 / spec.n_pulses as f64;
    let dt = 1.0 / spec.sample_rate;

    let mut samples = vec![Complex64::new(0.0, 0.0); spec.total_samples()];
    for (pulse, &step) in signature.pulse_order.iter().enumerate() {
        let (lo, hi) = spec.tones_for_step(step);
        let base = pulse * per_period;
        for (k, s) in samples[base..base + active].iter_mut().enumerate() {
            let t = (base + k) as f64 * dt;
            *s = amp * (Complex64::cis(2.0 * PI * lo * t) + Complex64::cis(2.0 * PI * hi * t));
        }
    }
    if normalization == Normalization::UnitEnergy {
        let e: f64 = samples.iter().map(|s| s.norm_sqr()).sum();
        let g = 1.0 / e.sqrt();
        samples.iter_mut().for_each(|s| *s *= g);
    }
    SignalBuffer::new(samples, spec.sample_rate, 0.0)
}

/// Closed-form mean-squared bandwidth for `n_pulses` pulses spanning
/// `bandwidth`, rad²/s².
pub fn msbw_closed_form(bandwidth: f64, n_pulses: usize) -> f64 {
    let n = n_pulses as f64;
    let first = (PI * bandwidth / (2.0 - 1.0 / n)).powi(2);
    let sum_sq: f64 = (0..n_pulses).map(|k| (k * k) as f64).sum();
    let second = (2.0 * PI * bandwidth).powi(2) / (n * (4.0 * n * n + 4.0 * n + 1.0)) * sum_sq;
    first + second
}

/// Closed-form mean-squared bandwidth of `spec` (uses `spec.bandwidth`).
pub fn msbw_analytic(spec: &WaveformSpec) -> f64 {
    msbw_closed_form(spec.bandwidth, spec.n_pulses)
}

/// Power-spectrum second moment of a sampled signal, rad²/s², with each bin
/// at its signed baseband frequency (zero Hz as the reference).
pub fn msbw_numeric(signal: &SignalBuffer) -> Result<f64> {
    let (freqs, power) = power_spectrum(signal)?;
    let total: f64 = power.iter().sum();
    let moment: f64 = freqs
        .iter()
        .zip(&power)
        .map(|(f, p)| (2.0 * PI * f).powi(2) * p)
        .sum();
    Ok(moment / total)
}

/// Power-spectrum second moment about the spectral centroid, rad²/s².
///
/// This is the quantity that bounds delay estimation when the carrier phase
/// is unknown, and the one the closed form describes for a single pulse.
pub fn msbw_numeric_centered(signal: &SignalBuffer) -> Result<f64> {
    let (freqs, power) = power_spectrum(signal)?;
    let total: f64 = power.iter().sum();
    let mean: f64 = freqs.iter().zip(&power).map(|(f, p)| f * p).sum::<f64>() / total;
    let moment: f64 = freqs
        .iter()
        .zip(&power)
        .map(|(f, p)| (2.0 * PI * (f - mean)).powi(2) * p)
        .sum();
    Ok(moment / total)
}

fn power_spectrum(signal: &SignalBuffer) -> Result<(Vec<f64>, Vec<f64>)> {
    let spectrum = dsp::fft(signal.samples());
    let power: Vec<f64> = spectrum.iter().map(|x| x.norm_sqr()).collect();
    if power.iter().sum::<f64>() == 0.0 {
        return Err(Error::InvalidSignal(
            "all-zero signal has no defined bandwidth".into(),
        ));
    }
    let n = spectrum.len();
    let fs = signal.sample_rate();
    let freqs = (0..n).map(|k| dsp::bin_frequency(k, n) * fs).collect();
    Ok((freqs, power))
}
