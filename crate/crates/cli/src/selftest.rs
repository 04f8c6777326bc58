//! Quick re-run of the headline numbers. Each check prints one line.

use std::io::Write;

use olbf_core::analysis::{
    gain_probability_sweep, log_grid, two_node_gain_probability, CrlbPreset,
};
use olbf_core::ranging::matched_filter;
use olbf_core::scenario::{run_scenario, ScenarioConfig};
use olbf_core::tracking::{kalman_init, kalman_update};
use olbf_core::waveform::{synthesize, PulseSignature, WaveformSpec};
use olbf_core::Result;

type Check = (&'static str, fn(f64) -> Result<(bool, String)>);

const CHECKS: [Check; 7] = [
    ("crlb chain", crlb_chain),
    ("processing gain", processing_gain),
    ("kalman steady state", kalman_steady_state),
    ("two-node gain curve", gain_curve),
    ("signature separation", signature_separation),
    ("two-node scenario", two_node),
    ("three-node scenario", three_node),
];

/// Runs every check; true when all pass.
pub fn run(c: f64, out: &mut impl Write) -> bool {
    let mut all = true;
    for (name, check) in CHECKS {
        let (ok, detail) = match check(c) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        all &= ok;
        let _ = writeln!(out, "{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    all
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    ((x - target) / target).abs() <= rel
}

fn crlb_chain(c: f64) -> Result<(bool, String)> {
    let a = CrlbPreset::two_node().report(c)?;
    let b = CrlbPreset::three_node().report(c)?;
    let ok = within(a.delay_variance, 2.65e-22, 0.02)
        && within(a.range_std, 2.44e-3, 0.02)
        && within(a.max_frequency, 6.14e9, 0.02)
        && within(b.range_std, 2.42e-3, 0.02)
        && within(b.max_frequency, 6.18e9, 0.02);
    Ok((
        ok,
        format!(
            "two-node var {:.3e} s^2, std {:.3} mm, f_max {:.3} GHz; three-node std {:.3} mm, f_max {:.3} GHz",
            a.delay_variance,
            a.range_std * 1e3,
            a.max_frequency / 1e9,
            b.range_std * 1e3,
            b.max_frequency / 1e9
        ),
    ))
}

fn processing_gain(_: f64) -> Result<(bool, String)> {
    let a = CrlbPreset::two_node().processing_gain_db()?;
    let b = CrlbPreset::three_node().processing_gain_db()?;
    let ok = (a - 35.0).abs() <= 0.1 && (b - 38.0).abs() <= 0.1;
    Ok((ok, format!("{a:.2} dB, {b:.2} dB")))
}

fn kalman_steady_state(_: f64) -> Result<(bool, String)> {
    let mut s = kalman_init(0.0, 3e-5, 3e-5, 5e-6)?;
    for _ in 0..200 {
        s = kalman_update(s, 0.0);
    }
    let k = s.next_gain();
    let ok = (s.variance - 1.5e-5).abs() < 1e-9 && (k - 1.0 / 3.0).abs() < 1e-9;
    Ok((ok, format!("variance {:.6e}, gain {k:.9}", s.variance)))
}

fn gain_curve(c: f64) -> Result<(bool, String)> {
    let trials = 2000;
    let wavelength = c / 1.5e9;
    let mut grid = vec![0.0];
    grid.extend(log_grid(wavelength / 200.0, wavelength / 2.0, 12)?);
    let curve = gain_probability_sweep(2, &grid, 0.9, trials, 1, wavelength)?;
    let tol = 3.0 / (trials as f64).sqrt();
    let worst = curve
        .sigma_over_lambda()
        .iter()
        .zip(&curve.probability)
        .map(|(s, p)| (p - two_node_gain_probability(*s, 0.9)).abs())
        .fold(0.0, f64::max);
    // Past λ/4 the curve sits on its floor and may wiggle by sampling noise.
    let sol = curve.sigma_over_lambda();
    let monotone = curve.probability.windows(2).enumerate().all(|(i, w)| {
        let slack = if sol[i + 1] <= 0.25 {
            0.0
        } else {
            3.0 * (w[0] * (1.0 - w[0]) / trials as f64).sqrt()
        };
        w[1] <= w[0] + slack
    });
    let ok = curve.probability[0] == 1.0 && monotone && worst <= tol;
    Ok((
        ok,
        format!("max oracle gap {worst:.4} (tol {tol:.4}), monotone {monotone}"),
    ))
}

fn signature_separation(_: f64) -> Result<(bool, String)> {
    let spec = WaveformSpec::three_node();
    let up = synthesize(&spec, &PulseSignature::ascending(0, spec.n_pulses))?;
    let down = synthesize(&spec, &PulseSignature::descending(1, spec.n_pulses))?;
    let auto = matched_filter(&up, &up)?.peak_value();
    let cross = matched_filter(&down, &up)?.peak_value();
    let db = 20.0 * (cross / auto).log10();
    Ok((db <= -10.0, format!("cross/auto {db:.2} dB")))
}

fn scenario_pair(mut cfg: ScenarioConfig, c: f64) -> Result<(f64, f64)> {
    cfg.speed_of_light = c;
    let on = run_scenario(&cfg)?.summary.min_power_ratio;
    cfg.correction_enabled = false;
    let off = run_scenario(&cfg)?.summary.min_power_ratio;
    Ok((on, off))
}

fn two_node(c: f64) -> Result<(bool, String)> {
    let (on, off) = scenario_pair(ScenarioConfig::two_node(), c)?;
    let (on, off) = (on.sqrt(), off.sqrt());
    Ok((
        on >= 0.9 && off < 0.2,
        format!("min amplitude ratio corrected {on:.4}, uncorrected {off:.4}"),
    ))
}

fn three_node(c: f64) -> Result<(bool, String)> {
    let (on, off) = scenario_pair(ScenarioConfig::three_node(), c)?;
    Ok((
        on >= 0.9 && (off - 0.07).abs() <= 0.05,
        format!("min power ratio corrected {on:.4}, uncorrected {off:.4}"),
    ))
}
