//! Delay estimation against known fractional delays and the delay bound.

use num_complex::Complex64;
use proptest::prelude::*;

use olbf_core::analysis::crlb;
use olbf_core::channel::{add_awgn, fractional_delay};
use olbf_core::ranging::{measured_processing_gain_db, unambiguous_half_width, Ranger};
use olbf_core::waveform::{
    msbw_numeric_centered, synthesize, PulseSignature, WaveformSpec, DEFAULT_SAMPLE_RATE,
};
use olbf_core::SignalBuffer;

const FS: f64 = DEFAULT_SAMPLE_RATE;

/// Single two-tone pulse, 40 µs period: same tones as the two-node preset
/// at a twenty-fifth of the length, so many trials stay cheap.
fn short_spec() -> WaveformSpec {
    WaveformSpec::from_bandwidth(1, 0.5e6, 11e6, 40e-6, 0.5, FS).unwrap()
}

fn template(spec: &WaveformSpec) -> SignalBuffer {
    synthesize(spec, &PulseSignature::ascending(0, spec.n_pulses)).unwrap()
}

struct Rig {
    base: SignalBuffer,
    ranger: Ranger,
    half: f64,
}

impl Rig {
    fn new(spec: &WaveformSpec, oversample: usize) -> Self {
        let t = template(spec);
        let base = t.padded(0, 128);
        let ranger = Ranger::new(&t, base.len())
            .unwrap()
            .with_oversample(&t, oversample)
            .unwrap();
        Self {
            base,
            ranger,
            half: unambiguous_half_width(spec.tone_separation()),
        }
    }

    fn delayed(&self, tau: f64) -> SignalBuffer {
        fractional_delay(&self.base, tau).unwrap()
    }

    fn estimate(&self, rx: &SignalBuffer, expected: f64) -> f64 {
        self.ranger
            .estimate_near(rx, expected, self.half, 0)
            .unwrap()
            .delay
    }
}

#[test]
fn fractional_delays_recovered_within_a_thousandth_of_a_sample() {
    let rig = Rig::new(&short_spec(), 8);
    for k in 0..40 {
        let tau = (5.0 + k as f64 / 40.0) / FS;
        let err = (rig.estimate(&rig.delayed(tau), tau) - tau) * FS;
        assert!(err.abs() < 1e-3, "delay {tau}: error {err} samples");
    }
}

#[test]
fn preset_waveforms_recover_fractional_delays() {
    for spec in [WaveformSpec::two_node(), WaveformSpec::three_node()] {
        let rig = Rig::new(&spec, 8);
        for frac in [0.0, 0.13, 0.5, 0.77] {
            let tau = (20.0 + frac) / FS;
            let err = (rig.estimate(&rig.delayed(tau), tau) - tau) * FS;
            assert!(err.abs() < 1e-3, "N={} frac {frac}: {err}", spec.n_pulses);
        }
    }
}

#[test]
fn eightfold_grid_matches_a_dense_grid() {
    let coarse = Rig::new(&short_spec(), 8);
    let dense = Rig::new(&short_spec(), 64);
    for k in 0..10 {
        let tau = (3.0 + 0.0917 * k as f64) / FS;
        let rx = coarse.delayed(tau);
        let a = coarse.estimate(&rx, tau);
        let b = dense.estimate(&rx, tau);
        assert!(((a - b) * FS).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn estimate_ignores_complex_scaling() {
    let rig = Rig::new(&short_spec(), 8);
    let tau = 7.31 / FS;
    let rx = rig.delayed(tau);
    let a = rig.estimate(&rx, tau);
    for g in [
        Complex64::new(0.01, 0.0),
        Complex64::from_polar(3.0, 2.1),
        Complex64::new(0.0, -1e4),
    ] {
        let b = rig.estimate(&rx.scaled(g), tau);
        assert!(((a - b) * FS).abs() < 1e-9, "gain {g}: {a} vs {b}");
    }
}

#[test]
fn whole_sample_shift_moves_estimate_by_the_shift() {
    let rig = Rig::new(&short_spec(), 8);
    let tau = 4.42 / FS;
    let a = rig.estimate(&rig.delayed(tau), tau);
    for k in [1.0, 9.0, 50.0] {
        let b = rig.estimate(&rig.delayed(tau + k / FS), tau + k / FS);
        assert!(((b - a) * FS - k).abs() < 1e-6, "shift {k}");
    }
}

/// Sample standard deviation of the delay error over `trials` noisy copies.
fn delay_std(rig: &Rig, tau: f64, snr_db: f64, trials: u64, seed: u64) -> f64 {
    let clean = rig.delayed(tau);
    let errs: Vec<f64> = (0..trials)
        .map(|t| {
            let rx =
                add_awgn(&clean, snr_db, seed.wrapping_mul(1_000_003).wrapping_add(t)).unwrap();
            rig.estimate(&rx, tau) - tau
        })
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64).sqrt()
}

#[test]
fn accuracy_improves_with_snr() {
    let rig = Rig::new(&short_spec(), 8);
    let tau = 6.2 / FS;
    let stds: Vec<f64> = [10.0, 20.0, 30.0, 40.0]
        .iter()
        .map(|&snr| delay_std(&rig, tau, snr, 500, snr as u64))
        .collect();
    for w in stds.windows(2) {
        assert!(w[1] < w[0], "std not decreasing: {stds:?}");
    }
}

#[test]
fn empirical_spread_sits_between_one_and_two_bounds() {
    let spec = short_spec();
    let rig = Rig::new(&spec, 8);
    let t = template(&spec);
    let msbw = msbw_numeric_centered(&t).unwrap();
    let gain = measured_processing_gain_db(&t);
    let n = 600;
    for snr in [5.0, 15.0] {
        let bound = crlb(msbw, snr, gain).unwrap().delay_variance.sqrt();
        let s = delay_std(&rig, 3.7 / FS, snr, n, 99 + snr as u64);
        // Sampling error of a standard deviation estimate is about
        // σ/√(2(n-1)); allow three of those below the bound.
        let floor = bound * (1.0 - 3.0 / (2.0 * (n as f64 - 1.0)).sqrt());
        assert!(
            s >= floor && s <= 2.0 * bound,
            "snr {snr}: std {s:e}, bound {bound:e}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_fractional_delay_is_recovered(whole in 0u32..100, frac in 0.0f64..1.0) {
        let rig = Rig::new(&short_spec(), 8);
        let tau = (whole as f64 + frac) / FS;
        let err = (rig.estimate(&rig.delayed(tau), tau) - tau) * FS;
        prop_assert!(err.abs() < 1e-3, "error {} samples", err);
    }
}
