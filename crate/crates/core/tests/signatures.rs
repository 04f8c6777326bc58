//! Two secondaries ranging at once, told apart by pulse order.

use std::collections::HashSet;

use proptest::prelude::*;

use olbf_core::channel::{add_awgn_with_reference, fractional_delay};
use olbf_core::ranging::{matched_filter, unambiguous_half_width, Ranger};
use olbf_core::waveform::{assign_signatures, factorial, synthesize, PulseSignature, WaveformSpec};
use olbf_core::{SignalBuffer, SPEED_OF_LIGHT};

/// Half the pulse period of the three-node waveform is too little: the two
/// orders would then share a frequency step while overlapping. A whole
/// period keeps every overlapping pulse pair on distinct steps.
const OFFSET_SAMPLES: usize = 5000;

fn pair() -> (WaveformSpec, SignalBuffer, SignalBuffer) {
    let spec = WaveformSpec::three_node();
    let up = synthesize(&spec, &PulseSignature::ascending(0, 5)).unwrap();
    let down = synthesize(&spec, &PulseSignature::descending(1, 5)).unwrap();
    (spec, up, down)
}

#[test]
fn cross_peak_is_ten_db_below_auto_peak() {
    let (_, up, down) = pair();
    let auto = matched_filter(&up, &up).unwrap().peak_value();
    for (rx, t) in [(&down, &up), (&up, &down)] {
        let cross = matched_filter(rx, t).unwrap().peak_value();
        let db = 20.0 * (cross / auto).log10();
        assert!(db <= -10.0, "cross/auto {db:.2} dB");
    }
}

fn received(
    up: &SignalBuffer,
    down: &SignalBuffer,
    tau_own: f64,
    tau_other: f64,
    other_amp: f64,
) -> SignalBuffer {
    let len = up.len() + OFFSET_SAMPLES + 256;
    let own = fractional_delay(&up.padded(0, len - up.len()), tau_own).unwrap();
    let start = OFFSET_SAMPLES as f64 / up.sample_rate();
    let other = fractional_delay(&down.padded(0, len - down.len()), start + tau_other)
        .unwrap()
        .scaled(other_amp.into());
    own.add(&other).unwrap()
}

/// Range bias (m) the descending node adds to the ascending node's
/// estimate, averaged over `trials` noise draws at `snr_db`.
fn interference_bias(other_amp: f64, snr_db: f64, trials: u64) -> f64 {
    let (spec, up, down) = pair();
    let tau = 21.37e-9;
    let tau_other = 13.9e-9;
    let half = unambiguous_half_width(spec.tone_separation());
    let clean_alone = received(&up, &down, tau, tau_other, 0.0);
    let clean_both = received(&up, &down, tau, tau_other, other_amp);
    let ranger = Ranger::new(&up, clean_both.len()).unwrap();
    let reference = up.active_power();
    let mean_err = |clean: &SignalBuffer| -> f64 {
        (0..trials)
            .map(|t| {
                let rx = add_awgn_with_reference(clean, reference, snr_db, 500 + t).unwrap();
                ranger.estimate_near(&rx, tau, half, 0).unwrap().delay - tau
            })
            .sum::<f64>()
            / trials as f64
    };
    // Same noise draws with and without the interferer.
    (mean_err(&clean_both) - mean_err(&clean_alone)) * SPEED_OF_LIGHT / 2.0
}

#[test]
fn interferer_bias_is_below_interpolation_tolerance() {
    // 6 mm of range is a thousandth of a sample of round-trip delay, the
    // accuracy the interpolated peak reaches on a clean signal.
    for amp in [0.5, 1.0, 2.0] {
        let noiseless = interference_bias(amp, f64::INFINITY, 1);
        assert!(
            noiseless.abs() < 6e-3,
            "amp {amp}: noiseless bias {noiseless} m"
        );
    }
    let noisy = interference_bias(1.0, 30.0, 40);
    assert!(noisy.abs() < 6e-3, "bias at 30 dB: {noisy} m");
}

#[test]
fn signature_space_guard() {
    assert!(assign_signatures(5, factorial(5) as usize).is_ok());
    assert!(assign_signatures(5, factorial(5) as usize + 1).is_err());
    assert!(assign_signatures(1, 2).is_err());
}

proptest! {
    #[test]
    fn assigned_signatures_are_distinct_permutations(n in 1usize..7, frac in 0.0f64..1.0) {
        let total = factorial(n) as usize;
        let count = 1 + ((total - 1) as f64 * frac) as usize;
        let sigs = assign_signatures(n, count).unwrap();
        prop_assert_eq!(sigs.len(), count);
        let mut seen = HashSet::new();
        for (i, s) in sigs.iter().enumerate() {
            prop_assert_eq!(s.node_index, i);
            let mut sorted = s.pulse_order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            prop_assert!(seen.insert(s.pulse_order.clone()));
        }
        if count >= 2 {
            prop_assert_eq!(&sigs[0].pulse_order, &(0..n).collect::<Vec<_>>());
            prop_assert_eq!(&sigs[1].pulse_order, &(0..n).rev().collect::<Vec<_>>());
        }
    }
}
