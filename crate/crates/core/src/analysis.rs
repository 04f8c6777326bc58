//! Delay bounds, processing gain, and coherent-gain statistics.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{coherent_gain, end_fire_emissions, Receiver, DEFAULT_BEAMFORMING_FREQUENCY};
use crate::error::{Error, Result};
use crate::waveform::msbw_closed_form;
use crate::SPEED_OF_LIGHT;

/// Lower bounds on delay and range error at a given post-processing SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbReport {
    /// Round-trip delay variance bound, s².
    pub delay_variance: f64,
    /// One-way range standard deviation, `(c/2)·σ_τ`, meters.
    pub range_std: f64,
    pub post_snr_db: f64,
    pub processing_gain_db: f64,
    /// Highest carrier keeping coherent gain near 90%, `c / (20 σ_x)`.
    pub max_frequency: f64,
}

pub fn crlb(msbw: f64, snr_db: f64, processing_gain_db: f64) -> Result<CrlbReport> {
    crlb_with_c(msbw, snr_db, processing_gain_db, SPEED_OF_LIGHT)
}

pub fn crlb_with_c(msbw: f64, snr_db: f64, processing_gain_db: f64, c: f64) -> Result<CrlbReport> {
    if !(msbw > 0.0) || !msbw.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mean-squared bandwidth must be positive, got {msbw}"
        )));
    }
    if snr_db.is_nan() || processing_gain_db.is_nan() || !(c > 0.0) {
        return Err(Error::InvalidParameter(
            "SNR, gain and c must be numbers".into(),
        ));
    }
    let post_snr_db = snr_db + processing_gain_db;
    let delay_variance = 1.0 / (msbw * 10f64.powf(post_snr_db / 10.0));
    let range_std = c / 2.0 * delay_variance.sqrt();
    Ok(CrlbReport {
        delay_variance,
        range_std,
        post_snr_db,
        processing_gain_db,
        max_frequency: c / (20.0 * range_std),
    })
}

/// Time-bandwidth product `N·T_r·BW_n` in dB.
pub fn processing_gain(n_pulses: usize, t_r: f64, noise_bw: f64) -> Result<f64> {
    if n_pulses == 0 || !(t_r > 0.0) || !(noise_bw > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "processing gain needs positive inputs (N={n_pulses}, T_r={t_r}, BW_n={noise_bw})"
        )));
    }
    Ok(10.0 * (n_pulses as f64 * t_r * noise_bw).log10())
}

/// Named parameter sets for the two experiments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrlbPreset {
    pub name: &'static str,
    pub msbw: f64,
    pub snr_db: f64,
    pub n_pulses: usize,
    pub t_r: f64,
    pub noise_bw: f64,
    /// Other mean-squared bandwidth readings of the same setup, for the
    /// side-by-side report.
    pub alternatives: Vec<(&'static str, f64)>,
}

/// Usable bandwidth of a 25 MHz complex sampler.
pub const NOISE_BANDWIDTH: f64 = 12.5e6;

impl CrlbPreset {
    pub fn two_node() -> Self {
        Self {
            name: "two-node",
            msbw: msbw_closed_form(11e6, 1),
            snr_db: 30.0,
            n_pulses: 1,
            t_r: 250e-6,
            noise_bw: NOISE_BANDWIDTH,
            alternatives: vec![("tabulated", 1.942e15)],
        }
    }

    pub fn three_node() -> Self {
        Self {
            name: "three-node",
            msbw: 6.0547e14,
            snr_db: 30.0,
            n_pulses: 5,
            t_r: 100e-6,
            noise_bw: NOISE_BANDWIDTH,
            alternatives: vec![("bw-9MHz", msbw_closed_form(9e6, 5))],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "two-node" => Ok(Self::two_node()),
            "three-node" => Ok(Self::three_node()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected two-node or three-node)"
            ))),
        }
    }

    pub fn processing_gain_db(&self) -> Result<f64> {
        processing_gain(self.n_pulses, self.t_r, self.noise_bw)
    }

    pub fn report(&self, c: f64) -> Result<CrlbReport> {
        crlb_with_c(self.msbw, self.snr_db, self.processing_gain_db()?, c)
    }

    pub fn alternative_reports(&self, c: f64) -> Result<Vec<(&'static str, f64, CrlbReport)>> {
        let g = self.processing_gain_db()?;
        self.alternatives
            .iter()
            .map(|&(label, m)| Ok((label, m, crlb_with_c(m, self.snr_db, g, c)?)))
            .collect()
    }
}

/// `P(G_c ≥ threshold)` against range-error spread for one array size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    pub sigma_d_axis: Vec<f64>,
    pub probability: Vec<f64>,
    pub n_nodes: usize,
    pub threshold: f64,
    pub trials: usize,
    pub seed: u64,
    pub wavelength: f64,
}

impl GainCurve {
    /// σ_d axis in wavelengths.
    pub fn sigma_over_lambda(&self) -> Vec<f64> {
        self.sigma_d_axis
            .iter()
            .map(|s| s / self.wavelength)
            .collect()
    }
}

/// `n` points spaced evenly in log between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi >= lo) || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "log grid needs 0 < lo ≤ hi and n ≥ 1 (lo={lo}, hi={hi}, n={n})"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

pub const DEFAULT_SWEEP_POINTS: usize = 50;
pub const DEFAULT_SWEEP_TRIALS: usize = 10_000;

/// 50 log-spaced σ_d values from λ/200 to λ/2.
pub fn default_sigma_grid(wavelength: f64) -> Vec<f64> {
    log_grid(wavelength / 200.0, wavelength / 2.0, DEFAULT_SWEEP_POINTS).expect("valid grid")
}

pub fn default_wavelength() -> f64 {
    SPEED_OF_LIGHT / DEFAULT_BEAMFORMING_FREQUENCY
}

/// Monte-Carlo estimate of `P(G_c ≥ threshold)` for an end-fire array whose
/// nodes each carry an independent Gaussian range error of std σ_d.
///
/// Trial `k` draws its normals from a ChaCha stream keyed by `(seed, k)` and
/// reuses them, scaled, at every grid point. Counts are integers, so the
/// result does not depend on how rayon splits the work.
pub fn gain_probability_sweep(
    n_nodes: usize,
    sigma_d_grid: &[f64],
    threshold: f64,
    trials: usize,
    seed: u64,
    wavelength: f64,
) -> Result<GainCurve> {
    if n_nodes == 0 {
        return Err(Error::InvalidParameter("need at least one node".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if !(wavelength > 0.0) {
        return Err(Error::InvalidParameter(
            "wavelength must be positive".into(),
        ));
    }
    if sigma_d_grid.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter(
            "σ_d values must be finite and ≥ 0".into(),
        ));
    }

    let receiver = Receiver {
        position: 1000.0,
        frequency: SPEED_OF_LIGHT / wavelength,
        speed_of_light: SPEED_OF_LIGHT,
    };
    let positions: Vec<f64> = (0..n_nodes).map(|i| i as f64 * wavelength / 2.0).collect();
    let ideal = end_fire_emissions(&positions, &vec![0.0; n_nodes], &receiver);
    // Guard against rounding in the ratio at exact alignment.
    let cut = threshold - 1e-12;

    let counts = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let z: Vec<f64> = (0..n_nodes)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let mut hits = vec![0u64; sigma_d_grid.len()];
            let mut errs = vec![0.0; n_nodes];
            for (h, &s) in hits.iter_mut().zip(sigma_d_grid) {
                errs.iter_mut().zip(&z).for_each(|(e, z)| *e = s * z);
                let actual = end_fire_emissions(&positions, &errs, &receiver);
                let g = coherent_gain(&actual, &ideal, &receiver)
                    .expect("matched arrays")
                    .coherent_gain;
                if g >= cut {
                    *h += 1;
                }
            }
            hits
        })
        .reduce(
            || vec![0u64; sigma_d_grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    Ok(GainCurve {
        sigma_d_axis: sigma_d_grid.to_vec(),
        probability: counts.iter().map(|&c| c as f64 / trials as f64).collect(),
        n_nodes,
        threshold,
        trials,
        seed,
        wavelength,
    })
}

/// Exact two-node probability by numerical integration: `Δφ` is normal with
/// variance `2 (2π σ_d / λ)²` and the gain clears `threshold` whenever the
/// wrapped `|Δφ| ≤ 2 arccos(√threshold)`.
pub fn two_node_gain_probability(sigma_over_lambda: f64, threshold: f64) -> f64 {
    let half_width = 2.0 * threshold.sqrt().acos();
    if sigma_over_lambda == 0.0 {
        return 1.0;
    }
    let s = TAU * sigma_over_lambda * 2f64.sqrt();
    let density = |x: f64| (-(x * x) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
    // Wrapped copies beyond 12σ carry nothing.
    let k_max = ((12.0 * s) / TAU).ceil() as i64 + 1;
    let mut p = 0.0;
    for k in -k_max..=k_max {
        let c = TAU * k as f64;
        // Clip to where the density lives so narrow peaks stay resolved.
        let lo = (c - half_width).max(-12.0 * s);
        let hi = (c + half_width).min(12.0 * s);
        if hi > lo {
            p += simpson(&density, lo, hi, 2000);
        }
    }
    p.min(1.0)
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}
