//! Time-of-flight estimation from a repeated ranging waveform.
//!
//! The matched filter correlates the received buffer against a node's own
//! template in the frequency domain and interpolates the result onto a grid
//! `oversample` times finer than the input samples (exact band-limited
//! interpolation by spectral zero padding). The peak is then refined with a
//! not-a-knot cubic spline through the seven lags around it.
//!
//! A two-tone correlation is periodic in `1/Δf` apart from a slow envelope,
//! so neighbouring lobes differ by far less than the grid's own sampling
//! loss. Callers with a coarse idea of the delay should restrict the peak
//! search to half a lobe period around it ([`Ranger::estimate_near`]).
//!
//! SNR conventions used throughout:
//! * input SNR: active signal power over total complex noise power;
//! * post-processing SNR: coherent matched-filter output SNR,
//!   `2·E / σ²`, i.e. peak power over the noise power in one quadrature.
//!   This is the SNR for which the delay bound reads `1 / (ζ² · SNR)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::dsp;
use crate::error::{Error, Result};
use crate::signal::SignalBuffer;
use crate::spline::CubicSpline;
use crate::SPEED_OF_LIGHT;

/// Fine correlation lags per input sample.
pub const DEFAULT_OVERSAMPLE: usize = 8;
/// Spline evaluation points spanning one lag either side of the peak.
pub const DEFAULT_REFINE_POINTS: usize = 1000;
/// Discrete lags fed to the spline, centered on the peak.
pub const SPLINE_WINDOW: usize = 7;

/// Correlation magnitude on a uniform lag grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationBuffer {
    values: Vec<f64>,
    /// Seconds between consecutive entries.
    lag_step: f64,
    /// Lag of entry 0, seconds. A received signal equal to the template
    /// delayed by `τ` peaks at lag `τ`.
    lag_origin: f64,
    peak_index: usize,
}

impl CorrelationBuffer {
    /// Wraps precomputed magnitudes. The peak is the global maximum, ties
    /// going to the smaller lag.
    pub fn new(values: Vec<f64>, lag_step: f64, lag_origin: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSignal("empty correlation".into()));
        }
        if !(lag_step > 0.0) {
            return Err(Error::InvalidParameter("lag step must be positive".into()));
        }
        let peak_index = argmax(&values);
        Ok(Self {
            values,
            lag_step,
            lag_origin,
            peak_index,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lag_step(&self) -> f64 {
        self.lag_step
    }

    pub fn lag_origin(&self) -> f64 {
        self.lag_origin
    }

    pub fn peak_index(&self) -> usize {
        self.peak_index
    }

    pub fn peak_value(&self) -> f64 {
        self.values[self.peak_index]
    }

    pub fn lag_at(&self, index: f64) -> f64 {
        self.lag_origin + index * self.lag_step
    }

    pub fn peak_lag(&self) -> f64 {
        self.lag_at(self.peak_index as f64)
    }

    /// Index nearest to `lag`, if it falls on the buffer.
    pub fn index_of(&self, lag: f64) -> Option<usize> {
        let i = ((lag - self.lag_origin) / self.lag_step).round();
        (i >= 0.0 && (i as usize) < self.values.len()).then_some(i as usize)
    }

    /// Same values with the peak searched only over lags in `[lo, hi]`.
    pub fn with_search_window(mut self, lo: f64, hi: f64) -> Result<Self> {
        let first = ((lo - self.lag_origin) / self.lag_step).ceil().max(0.0) as usize;
        let last = ((hi - self.lag_origin) / self.lag_step).floor();
        if !(last >= first as f64) || first >= self.values.len() {
            return Err(Error::InvalidParameter(format!(
                "search window [{lo}, {hi}] s misses the correlation"
            )));
        }
        let last = (last as usize).min(self.values.len() - 1);
        self.peak_index = first + argmax(&self.values[first..=last]);
        Ok(self)
    }

    /// Largest magnitude over lags within `[lo, hi]` seconds.
    pub fn max_in(&self, lo: f64, hi: f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let l = self.lag_at(*i as f64);
                l >= lo && l <= hi
            })
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Matched filter for one template, reusable across received buffers of a
/// fixed length.
#[derive(Clone)]
pub struct MatchedFilter {
    template_conj_spectrum: Vec<Complex64>,
    template_len: usize,
    template_start: f64,
    template_energy: f64,
    received_len: usize,
    fft_len: usize,
    oversample: usize,
    sample_rate: f64,
}

impl std::fmt::Debug for MatchedFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MatchedFilter")
            .field("template_len", &self.template_len)
            .field("received_len", &self.received_len)
            .field("fft_len", &self.fft_len)
            .field("oversample", &self.oversample)
            .finish()
    }
}

impl MatchedFilter {
    pub fn new(template: &SignalBuffer, received_len: usize, oversample: usize) -> Result<Self> {
        if oversample == 0 {
            return Err(Error::InvalidParameter(
                "oversample must be at least 1".into(),
            ));
        }
        // Leading and trailing zeros contribute nothing to the correlation.
        let s = template.samples();
        let first = s.iter().position(|x| x.norm_sqr() > 0.0);
        let Some(first) = first else {
            return Err(Error::InvalidSignal("template is all zeros".into()));
        };
        let last = s.iter().rposition(|x| x.norm_sqr() > 0.0).unwrap();
        let core = &s[first..=last];
        if core.len() > received_len {
            return Err(Error::InvalidParameter(format!(
                "template ({} samples) longer than received buffer ({received_len})",
                core.len()
            )));
        }
        let fft_len = dsp::fast_len(received_len + core.len() - 1);
        let mut spec = vec![Complex64::new(0.0, 0.0); fft_len];
        spec[..core.len()].copy_from_slice(core);
        dsp::fft_in_place(&mut spec);
        spec.iter_mut().for_each(|x| *x = x.conj());
        Ok(Self {
            template_conj_spectrum: spec,
            template_len: core.len(),
            template_start: template.time_of(first),
            template_energy: core.iter().map(|x| x.norm_sqr()).sum(),
            received_len,
            fft_len,
            oversample,
            sample_rate: template.sample_rate(),
        })
    }

    pub fn template_energy(&self) -> f64 {
        self.template_energy
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    /// Complex cross-correlation on the fine lag grid, together with the
    /// lag of its first entry.
    pub fn correlate_complex(&self, received: &SignalBuffer) -> Result<(Vec<Complex64>, f64)> {
        if received.len() != self.received_len {
            return Err(Error::InvalidParameter(format!(
                "filter built for {} samples, got {}",
                self.received_len,
                received.len()
            )));
        }
        if (received.sample_rate() - self.sample_rate).abs() > 1e-9 * self.sample_rate {
            return Err(Error::InvalidParameter("sample rates differ".into()));
        }
        let l = self.fft_len;
        let u = self.oversample;
        let mut spec = vec![Complex64::new(0.0, 0.0); l];
        spec[..received.len()].copy_from_slice(received.samples());
        dsp::fft_in_place(&mut spec);
        for (x, t) in spec.iter_mut().zip(&self.template_conj_spectrum) {
            *x *= t;
        }

        // Zero-pad the cross spectrum to l·u bins, keeping signed frequencies.
        let big = l * u;
        let mut up = vec![Complex64::new(0.0, 0.0); big];
        let pos = l.div_ceil(2);
        up[..pos].copy_from_slice(&spec[..pos]);
        if l.is_multiple_of(2) && u > 1 {
            let half = spec[l / 2] * 0.5;
            up[l / 2] = half;
            up[big - l / 2] = half;
            up[big - l / 2 + 1..].copy_from_slice(&spec[l / 2 + 1..]);
        } else {
            up[big - (l - pos)..].copy_from_slice(&spec[pos..]);
        }
        dsp::plan_inverse(big).process(&mut up);
        let scale = 1.0 / l as f64;

        // Linear lags run from -(M-1) to (N-1) input samples.
        let m = self.template_len as isize;
        let n = self.received_len as isize;
        let lo = -(m - 1) * u as isize;
        let hi = (n - 1) * u as isize;
        let out: Vec<Complex64> = (lo..=hi)
            .map(|j| up[j.rem_euclid(big as isize) as usize] * scale)
            .collect();
        let ts = 1.0 / self.sample_rate;
        let origin = received.start_time() - self.template_start - (m - 1) as f64 * ts;
        Ok((out, origin))
    }

    pub fn correlate(&self, received: &SignalBuffer) -> Result<CorrelationBuffer> {
        let (c, origin) = self.correlate_complex(received)?;
        let step = 1.0 / (self.sample_rate * self.oversample as f64);
        CorrelationBuffer::new(c.iter().map(|x| x.norm()).collect(), step, origin)
    }
}

/// Magnitude of the cross-correlation of `received` against `template` over
/// all lags, at [`DEFAULT_OVERSAMPLE`] lags per sample.
pub fn matched_filter(
    received: &SignalBuffer,
    template: &SignalBuffer,
) -> Result<CorrelationBuffer> {
    matched_filter_oversampled(received, template, DEFAULT_OVERSAMPLE)
}

pub fn matched_filter_oversampled(
    received: &SignalBuffer,
    template: &SignalBuffer,
    oversample: usize,
) -> Result<CorrelationBuffer> {
    MatchedFilter::new(template, received.len(), oversample)?.correlate(received)
}

/// Sub-lag peak position: a not-a-knot cubic spline through the
/// [`SPLINE_WINDOW`] lags around the discrete peak, evaluated at
/// `refine_points` evenly spaced offsets covering `[-1, 1)` lag. Returns the
/// lag, in seconds, of the largest evaluated value.
pub fn interpolate_peak(corr: &CorrelationBuffer, refine_points: usize) -> Result<f64> {
    let p = corr.peak_index();
    let half = SPLINE_WINDOW / 2;
    if p < half || p + half >= corr.values().len() {
        return Err(Error::PeakAtEdge {
            index: p,
            len: corr.values().len(),
        });
    }
    if refine_points <= 1 {
        return Ok(corr.peak_lag());
    }
    let spline = CubicSpline::not_a_knot(&corr.values()[p - half..=p + half]);
    let mut best_x = 0.0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..refine_points {
        let x = -1.0 + 2.0 * i as f64 / refine_points as f64;
        let v = spline.eval(half as f64 + x);
        if v > best_v {
            best_v = v;
            best_x = x;
        }
    }
    Ok(corr.lag_at(p as f64 + best_x))
}

/// A two-way delay measurement and the one-way range it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeEstimate {
    /// Round-trip delay, seconds.
    pub delay: f64,
    /// One-way range `c·delay/2`, meters.
    pub range: f64,
    pub peak_value: f64,
    pub timestamp: u64,
}

impl RangeEstimate {
    pub fn from_delay(delay: f64, peak_value: f64, timestamp: u64, speed_of_light: f64) -> Self {
        Self {
            delay,
            range: speed_of_light * delay / 2.0,
            peak_value,
            timestamp,
        }
    }
}

/// Matched filter, spline refinement and delay-to-range conversion for one
/// node's template.
#[derive(Debug, Clone)]
pub struct Ranger {
    filter: MatchedFilter,
    refine_points: usize,
    speed_of_light: f64,
}

impl Ranger {
    pub fn new(template: &SignalBuffer, received_len: usize) -> Result<Self> {
        Ok(Self {
            filter: MatchedFilter::new(template, received_len, DEFAULT_OVERSAMPLE)?,
            refine_points: DEFAULT_REFINE_POINTS,
            speed_of_light: SPEED_OF_LIGHT,
        })
    }

    pub fn with_speed_of_light(mut self, c: f64) -> Self {
        self.speed_of_light = c;
        self
    }

    pub fn with_refine_points(mut self, n: usize) -> Self {
        self.refine_points = n;
        self
    }

    pub fn with_oversample(mut self, template: &SignalBuffer, oversample: usize) -> Result<Self> {
        self.filter = MatchedFilter::new(template, self.filter.received_len, oversample)?;
        Ok(self)
    }

    pub fn filter(&self) -> &MatchedFilter {
        &self.filter
    }

    pub fn estimate(&self, received: &SignalBuffer, timestamp: u64) -> Result<RangeEstimate> {
        let corr = self.filter.correlate(received)?;
        self.finish(corr, timestamp)
    }

    /// Estimate with the peak search limited to `expected ± half_width`
    /// seconds of delay.
    pub fn estimate_near(
        &self,
        received: &SignalBuffer,
        expected: f64,
        half_width: f64,
        timestamp: u64,
    ) -> Result<RangeEstimate> {
        let corr = self
            .filter
            .correlate(received)?
            .with_search_window(expected - half_width, expected + half_width)?;
        self.finish(corr, timestamp)
    }

    fn finish(&self, corr: CorrelationBuffer, timestamp: u64) -> Result<RangeEstimate> {
        let delay = interpolate_peak(&corr, self.refine_points)?;
        Ok(RangeEstimate::from_delay(
            delay,
            corr.peak_value(),
            timestamp,
            self.speed_of_light,
        ))
    }
}

/// Half the lobe period of a two-tone correlation, `1 / (2Δf)`: the widest
/// search window that cannot hold two lobes' crests.
pub fn unambiguous_half_width(tone_separation: f64) -> f64 {
    0.5 / tone_separation
}

/// One-shot range estimate with default settings.
pub fn estimate_range(received: &SignalBuffer, template: &SignalBuffer) -> Result<RangeEstimate> {
    Ranger::new(template, received.len())?.estimate(received, 0)
}

/// Coherent post-processing SNR, dB, for a received copy with energy
/// `signal_energy` in complex noise of per-sample variance `noise_variance`.
pub fn post_processing_snr_db(signal_energy: f64, noise_variance: f64) -> f64 {
    10.0 * (2.0 * signal_energy / noise_variance).log10()
}

/// Gain of the matched filter for `signal` under the conventions above:
/// `2·E / P_active`, i.e. twice the number of active samples.
pub fn measured_processing_gain_db(signal: &SignalBuffer) -> f64 {
    10.0 * (2.0 * signal.energy() / signal.active_power()).log10()
}

/// Input SNR that yields `post_snr_db` after matched filtering `signal`.
pub fn input_snr_for_post_snr(signal: &SignalBuffer, post_snr_db: f64) -> f64 {
    post_snr_db - measured_processing_gain_db(signal)
}
