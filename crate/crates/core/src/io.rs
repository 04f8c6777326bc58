//! File formats. Every writer goes through [`write_atomic`], so a reader
//! never sees a half-written file.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::GainCurve;
use crate::channel::NodeId;
use crate::error::{Error, Result};
use crate::ranging::RangeEstimate;
use crate::signal::SignalBuffer;
use crate::tracking::KalmanUpdate;
use crate::waveform::{PulseSignature, WaveformSpec};

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| Error::Io(e.error.to_string()))?;
    Ok(())
}

/// Full-precision float formatting: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes a header and rows to CSV text.
pub fn csv_bytes<S: AsRef<str>>(header: &[S], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(|h| h.as_ref()))?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[S], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

/// Sidecar record stored next to an exported waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformMetadata {
    pub spec: WaveformSpec,
    pub pulse_order: Vec<usize>,
    pub node_index: usize,
    pub sample_rate: f64,
    pub start_time: f64,
    pub n_samples: usize,
}

/// Sidecar path for a waveform CSV: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `time_s, re, im` rows plus the JSON sidecar.
pub fn write_waveform(
    path: &Path,
    signal: &SignalBuffer,
    spec: &WaveformSpec,
    signature: &PulseSignature,
) -> Result<()> {
    let rows: Vec<Vec<String>> = signal
        .samples()
        .iter()
        .enumerate()
        .map(|(k, s)| vec![fmt_f64(signal.time_of(k)), fmt_f64(s.re), fmt_f64(s.im)])
        .collect();
    write_csv(path, &["time_s", "re", "im"], &rows)?;
    let meta = WaveformMetadata {
        spec: *spec,
        pulse_order: signature.pulse_order.clone(),
        node_index: signature.node_index,
        sample_rate: signal.sample_rate(),
        start_time: signal.start_time(),
        n_samples: signal.len(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&sidecar_path(path), json.as_bytes())
}

/// Reads a waveform written by [`write_waveform`].
pub fn read_waveform(path: &Path) -> Result<(SignalBuffer, WaveformMetadata)> {
    let meta_text = std::fs::read_to_string(sidecar_path(path))?;
    let meta: WaveformMetadata = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Config(format!("bad waveform metadata: {e}")))?;
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["time_s", "re", "im"] {
        return Err(Error::Config(format!(
            "unexpected waveform header {header:?}"
        )));
    }
    let mut samples = Vec::with_capacity(meta.n_samples);
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Config("short waveform row".into()))?
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad number in waveform: {e}")))
        };
        samples.push(Complex64::new(field(1)?, field(2)?));
    }
    if samples.len() != meta.n_samples {
        return Err(Error::Config(format!(
            "waveform has {} rows, metadata says {}",
            samples.len(),
            meta.n_samples
        )));
    }
    let signal = SignalBuffer::new(samples, meta.sample_rate, meta.start_time)?;
    Ok((signal, meta))
}

pub fn range_log_rows(entries: &[(NodeId, RangeEstimate)]) -> Vec<Vec<String>> {
    entries
        .iter()
        .map(|(id, e)| {
            vec![
                e.timestamp.to_string(),
                id.to_string(),
                fmt_f64(e.delay),
                fmt_f64(e.range),
                fmt_f64(e.peak_value),
            ]
        })
        .collect()
}

pub const RANGE_LOG_HEADER: [&str; 5] = ["step", "node_id", "delay_s", "range_m", "peak_value"];

pub fn write_range_log(path: &Path, entries: &[(NodeId, RangeEstimate)]) -> Result<()> {
    write_csv(path, &RANGE_LOG_HEADER, &range_log_rows(entries))
}

pub const KALMAN_LOG_HEADER: [&str; 6] =
    ["step", "z", "estimate", "variance", "gain", "diverged_flag"];

pub fn kalman_log_rows(updates: &[KalmanUpdate]) -> Vec<Vec<String>> {
    updates
        .iter()
        .map(|u| {
            vec![
                u.state.step.to_string(),
                fmt_f64(u.measurement),
                fmt_f64(u.state.estimate),
                fmt_f64(u.state.variance),
                fmt_f64(u.gain),
                u8::from(u.diverged).to_string(),
            ]
        })
        .collect()
}

pub fn write_kalman_log(path: &Path, updates: &[KalmanUpdate]) -> Result<()> {
    write_csv(path, &KALMAN_LOG_HEADER, &kalman_log_rows(updates))
}

pub fn write_gain_curve(path: &Path, curve: &GainCurve) -> Result<()> {
    let rows: Vec<Vec<String>> = curve
        .sigma_over_lambda()
        .iter()
        .zip(&curve.probability)
        .map(|(s, p)| vec![fmt_f64(*s), fmt_f64(*p)])
        .collect();
    write_csv(path, &["sigma_d_over_lambda", "probability"], &rows)
}
