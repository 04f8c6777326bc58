//! Moving-array experiments: range, track, correct, then measure what the
//! receiver sees.
//!
//! Each position runs `rounds_per_position` ranging rounds. In a round every
//! secondary transmits its own pulse signature at once; the primary hears
//! the sum, repeats it with gain, and each secondary matched-filters the
//! repeated signal against its own template. The filtered range sets the
//! secondary's beamforming phase, and the receiver then captures the 1.5 GHz
//! carrier the way an oscilloscope would: per-cycle peaks averaged over
//! many short snapshots.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::beamform::{phase_correction, received_sum, wrap_phase, NodeEmission, Receiver};
use crate::channel::{
    add_awgn_with_reference, propagate_noiseless, spreading_gain, ArrayGeometry, NodeId,
    DEFAULT_DOWNLINK_CARRIER, DEFAULT_UPLINK_CARRIER,
};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv, write_kalman_log, write_range_log};
use crate::ranging::{
    unambiguous_half_width, RangeEstimate, Ranger, DEFAULT_OVERSAMPLE, DEFAULT_REFINE_POINTS,
};
use crate::signal::SignalBuffer;
use crate::tracking::{
    kalman_init, kalman_step, KalmanState, KalmanUpdate, DEFAULT_INNOVATION_THRESHOLD,
    DEFAULT_MEASUREMENT_VARIANCE, DEFAULT_PROCESS_VARIANCE,
};
use crate::waveform::{assign_signatures, synthesize, validate_spec, WaveformSpec};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Primary,
    Secondary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: NodeId,
    pub role: Role,
    /// Meters along the array axis.
    pub position: f64,
    /// Beamforming transmit amplitude.
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Start of this node's ranging burst within a round, seconds. Unscheduled
    /// secondaries are not time-aligned; an offset keeps another node's
    /// matched-filter sidelobes away from this node's peak.
    #[serde(default)]
    pub tx_offset_s: f64,
    /// Static hardware phase, radians. Drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardware_phase: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// Either a named waveform or a full parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WaveformChoice {
    Preset { preset: String },
    Custom(WaveformSpec),
}

impl WaveformChoice {
    pub fn spec(&self) -> Result<WaveformSpec> {
        match self {
            WaveformChoice::Custom(s) => Ok(*s),
            WaveformChoice::Preset { preset } => match preset.as_str() {
                "two-node" => Ok(WaveformSpec::two_node()),
                "three-node" => Ok(WaveformSpec::three_node()),
                other => Err(Error::Config(format!("unknown waveform preset '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangingConfig {
    /// Secondary → primary carrier, Hz.
    pub uplink_carrier: f64,
    /// Primary → secondary carrier, Hz.
    pub downlink_carrier: f64,
    /// Input SNR on each hop, dB, against the clean ranging signal.
    pub snr_db: f64,
    pub repeater_gain_db: f64,
    pub rounds_per_position: usize,
    pub oversample: usize,
    pub refine_points: usize,
}

impl Default for RangingConfig {
    fn default() -> Self {
        Self {
            uplink_carrier: DEFAULT_UPLINK_CARRIER,
            downlink_carrier: DEFAULT_DOWNLINK_CARRIER,
            snr_db: 30.0,
            repeater_gain_db: 0.0,
            rounds_per_position: 5,
            oversample: DEFAULT_OVERSAMPLE,
            refine_points: DEFAULT_REFINE_POINTS,
        }
    }
}

/// What the Kalman filter smooths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrackingMode {
    /// Interpolated peak delay in input samples; the filtered value sets
    /// the range.
    #[default]
    Delay,
    /// Peak magnitude. The range then comes from the raw delay.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    pub measurement_variance: f64,
    pub process_variance: f64,
    pub innovation_threshold: f64,
    pub mode: TrackingMode,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            measurement_variance: DEFAULT_MEASUREMENT_VARIANCE,
            process_variance: DEFAULT_PROCESS_VARIANCE,
            innovation_threshold: DEFAULT_INNOVATION_THRESHOLD,
            mode: TrackingMode::Delay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureConfig {
    pub snapshots_per_position: usize,
    pub cycles_per_snapshot: usize,
    pub samples_per_cycle: usize,
    /// Receiver SNR, dB, against a fully coherent array.
    pub snr_db: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            snapshots_per_position: 100,
            cycles_per_snapshot: 15,
            samples_per_cycle: 32,
            snr_db: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    pub node: NodeId,
    /// Meters per step.
    pub step_size: f64,
    pub n_steps: usize,
    /// +1 moves toward larger coordinates, -1 toward smaller.
    pub direction: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bf_frequency")]
    pub beamforming_frequency: f64,
    #[serde(default = "default_c")]
    pub speed_of_light: f64,
    #[serde(default = "yes")]
    pub correction_enabled: bool,
    #[serde(default = "yes")]
    pub calibrate: bool,
    #[serde(default)]
    pub receiver_position: f64,
    pub waveform: WaveformChoice,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub ranging: RangingConfig,
    #[serde(default)]
    pub tracking: TrackingConfig,
    #[serde(default)]
    pub capture: CaptureConfig,
    #[serde(default)]
    pub motion: Vec<MotionConfig>,
}

fn default_bf_frequency() -> f64 {
    1.5e9
}

fn default_c() -> f64 {
    SPEED_OF_LIGHT
}

fn yes() -> bool {
    true
}

impl ScenarioConfig {
    /// Receiver at 0, secondary at 1.5 m, primary at 3 m walking 10 × 2 cm
    /// toward the secondary. Transmit amplitudes make both nodes arrive
    /// with equal strength at the start.
    pub fn two_node() -> Self {
        Self {
            name: "two_node".into(),
            seed: 1,
            beamforming_frequency: default_bf_frequency(),
            speed_of_light: SPEED_OF_LIGHT,
            correction_enabled: true,
            calibrate: true,
            receiver_position: 0.0,
            waveform: WaveformChoice::Preset {
                preset: "two-node".into(),
            },
            nodes: vec![
                NodeConfig {
                    id: NodeId(1),
                    role: Role::Primary,
                    position: 3.0,
                    amplitude: 3.0,
                    tx_offset_s: 0.0,
                    hardware_phase: None,
                },
                NodeConfig {
                    id: NodeId(2),
                    role: Role::Secondary,
                    position: 1.5,
                    amplitude: 1.5,
                    tx_offset_s: 0.0,
                    hardware_phase: None,
                },
            ],
            ranging: RangingConfig::default(),
            tracking: TrackingConfig::default(),
            capture: CaptureConfig::default(),
            motion: vec![MotionConfig {
                node: NodeId(1),
                step_size: 0.02,
                n_steps: 10,
                direction: -1,
            }],
        }
    }

    /// Secondaries 0.6 m apart with the first 1 m from the receiver, the
    /// primary 1 m beyond the second, walking 10 × 2 cm toward them.
    pub fn three_node() -> Self {
        Self {
            name: "three_node".into(),
            waveform: WaveformChoice::Preset {
                preset: "three-node".into(),
            },
            nodes: vec![
                NodeConfig {
                    id: NodeId(1),
                    role: Role::Primary,
                    position: 2.6,
                    amplitude: 3.0,
                    tx_offset_s: 0.0,
                    hardware_phase: None,
                },
                NodeConfig {
                    id: NodeId(2),
                    role: Role::Secondary,
                    position: 1.0,
                    amplitude: 1.0,
                    tx_offset_s: 0.0,
                    hardware_phase: None,
                },
                NodeConfig {
                    id: NodeId(3),
                    role: Role::Secondary,
                    position: 1.6,
                    amplitude: 1.6,
                    tx_offset_s: 200e-6,
                    hardware_phase: None,
                },
            ],
            ..Self::two_node()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn waveform_spec(&self) -> Result<WaveformSpec> {
        self.waveform.spec()
    }

    pub fn primary_index(&self) -> Result<usize> {
        let mut it = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == Role::Primary);
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Ok(i),
            _ => Err(Error::Config("exactly one primary node is required".into())),
        }
    }

    pub fn secondary_indices(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == Role::Secondary)
            .map(|(i, _)| i)
            .collect()
    }

    /// Positions visited, counting the starting one.
    pub fn n_positions(&self) -> usize {
        self.motion.iter().map(|m| m.n_steps).max().unwrap_or(0) + 1
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(
            self.nodes.iter().map(|n| (n.id, n.position)),
            self.receiver_position,
        )
    }

    /// Node positions at position index `k`.
    pub fn positions_at(&self, k: usize) -> Result<ArrayGeometry> {
        let mut g = self.geometry()?;
        for m in &self.motion {
            let x0 = g.position(m.node).ok_or_else(|| {
                Error::Config(format!("motion refers to unknown node {}", m.node))
            })?;
            let steps = k.min(m.n_steps) as f64;
            g.set_position(m.node, x0 + f64::from(m.direction) * m.step_size * steps)?;
        }
        check_separation(&g)?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.nodes.is_empty() {
            return cfg("no nodes".into());
        }
        self.primary_index()?;
        let n_sec = self.secondary_indices().len();
        if n_sec == 0 {
            return cfg("at least one secondary node is required".into());
        }
        if !(self.beamforming_frequency > 0.0) || !(self.speed_of_light > 0.0) {
            return cfg("beamforming_frequency and speed_of_light must be positive".into());
        }
        for n in &self.nodes {
            if !(n.amplitude >= 0.0) {
                return cfg(format!("node {} amplitude must be non-negative", n.id));
            }
            if !(n.tx_offset_s >= 0.0) || !n.tx_offset_s.is_finite() {
                return cfg(format!("node {} tx_offset_s must be finite and ≥ 0", n.id));
            }
        }
        let r = &self.ranging;
        if !(r.uplink_carrier > 0.0) || !(r.downlink_carrier > 0.0) {
            return cfg("ranging carriers must be positive".into());
        }
        if r.snr_db.is_nan() || r.repeater_gain_db.is_nan() || !r.repeater_gain_db.is_finite() {
            return cfg("ranging snr_db and repeater_gain_db must be numbers".into());
        }
        if r.rounds_per_position == 0 || r.oversample == 0 {
            return cfg("rounds_per_position and oversample must be at least 1".into());
        }
        let t = &self.tracking;
        if !(t.measurement_variance > 0.0)
            || !(t.process_variance >= 0.0)
            || !(t.innovation_threshold > 0.0)
        {
            return cfg("tracking variances and threshold out of range".into());
        }
        let c = &self.capture;
        if c.snapshots_per_position == 0 || c.cycles_per_snapshot == 0 {
            return cfg("snapshot and cycle counts must be at least 1".into());
        }
        if c.samples_per_cycle < 16 {
            return cfg("samples_per_cycle must be at least 16".into());
        }
        if c.snr_db.is_nan() {
            return cfg("capture snr_db must be a number".into());
        }
        for m in &self.motion {
            if m.n_steps == 0 {
                return cfg(format!("motion of node {} needs at least one step", m.node));
            }
            if !(m.step_size >= 0.0) || !m.step_size.is_finite() {
                return cfg(format!("motion of node {} has a bad step size", m.node));
            }
            if m.direction != 1 && m.direction != -1 {
                return cfg(format!(
                    "motion direction must be +1 or -1, got {}",
                    m.direction
                ));
            }
        }
        validate_spec(self.waveform_spec()?, n_sec)?;
        for k in 0..self.n_positions() {
            self.positions_at(k)?;
        }
        Ok(())
    }
}

fn check_separation(g: &ArrayGeometry) -> Result<()> {
    let xs: Vec<(NodeId, f64)> = g.nodes().collect();
    for (i, (a, xa)) in xs.iter().enumerate() {
        if (xa - g.receiver_position()).abs() < 1e-9 {
            return Err(Error::InvalidGeometry(format!(
                "node {a} sits on the receiver"
            )));
        }
        for (b, xb) in &xs[i + 1..] {
            if (xa - xb).abs() < 1e-9 {
                return Err(Error::InvalidGeometry(format!(
                    "nodes {a} and {b} coincide"
                )));
            }
        }
    }
    Ok(())
}

/// Mixes a master seed with labels into an independent stream seed
/// (splitmix64 finalizer per word).
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    labels.iter().fold(mix(master), |acc, &l| mix(acc ^ mix(l)))
}

const TAG_HARDWARE: u64 = 1;
const TAG_UPLINK: u64 = 2;
const TAG_DOWNLINK: u64 = 3;
const TAG_CAPTURE: u64 = 4;

/// Per-position outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionRecord {
    pub index: usize,
    /// Position of the first moving node (the primary when nothing moves).
    pub position: f64,
    pub node_positions: Vec<f64>,
    /// Captured amplitude with one node on, in config node order.
    pub solo_amplitudes: Vec<f64>,
    pub combined_amplitude: f64,
    /// Sum of the solo amplitudes.
    pub ideal_amplitude: f64,
    pub corrected: bool,
    /// Range each secondary used for its phase, in secondary order.
    pub ranges: Vec<f64>,
    pub applied_phases: Vec<f64>,
}

impl PositionRecord {
    pub fn amplitude_ratio(&self) -> f64 {
        self.combined_amplitude / self.ideal_amplitude
    }

    pub fn power_ratio(&self) -> f64 {
        self.amplitude_ratio().powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub min_amplitude_ratio: f64,
    pub mean_amplitude_ratio: f64,
    pub min_power_ratio: f64,
    /// Position index of the weakest combined amplitude.
    pub min_index: usize,
    pub diverged_updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub node_ids: Vec<NodeId>,
    pub secondary_ids: Vec<NodeId>,
    pub records: Vec<PositionRecord>,
    pub range_log: Vec<(NodeId, RangeEstimate)>,
    pub kalman_logs: Vec<(NodeId, Vec<KalmanUpdate>)>,
    pub hardware_phases: Vec<f64>,
    pub calibration: Vec<f64>,
    pub summary: ScenarioSummary,
}

impl ScenarioResult {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["position_m".to_string()];
        h.extend(self.node_ids.iter().map(|id| format!("solo_amp_node{id}")));
        h.push("combined_amp".into());
        h.push("corrected_flag".into());
        h
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .map(|r| {
                let mut row = vec![fmt_f64(r.position)];
                row.extend(r.solo_amplitudes.iter().map(|a| fmt_f64(*a)));
                row.push(fmt_f64(r.combined_amplitude));
                row.push(u8::from(r.corrected).to_string());
                row
            })
            .collect()
    }

    /// Writes `<name>_result.csv`, `<name>_ranges.csv` and one Kalman log
    /// per secondary into `dir`; returns the paths.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut out = Vec::new();
        let p = dir.join(format!("{}_result.csv", self.name));
        write_csv(&p, &self.csv_header(), &self.csv_rows())?;
        out.push(p);
        let p = dir.join(format!("{}_ranges.csv", self.name));
        write_range_log(&p, &self.range_log)?;
        out.push(p);
        for (id, log) in &self.kalman_logs {
            let p = dir.join(format!("{}_kalman_node{id}.csv", self.name));
            write_kalman_log(&p, log)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Ranging hardware shared by all rounds: one transmit buffer and one
/// matched filter per secondary, all on a common time axis.
struct RangingRig {
    tx: Vec<SignalBuffer>,
    rangers: Vec<Ranger>,
    half_window: f64,
}

impl RangingRig {
    fn new(cfg: &ScenarioConfig, secondaries: &[usize]) -> Result<Self> {
        let spec = cfg.waveform_spec()?;
        let fs = spec.sample_rate;
        let sigs = assign_signatures(spec.n_pulses, secondaries.len())?;
        let offsets: Vec<usize> = secondaries
            .iter()
            .map(|&i| (cfg.nodes[i].tx_offset_s * fs).round() as usize)
            .collect();
        // Guard zeros absorb the sub-sample propagation shifts.
        let guard = 64;
        let len = spec.total_samples() + offsets.iter().max().copied().unwrap_or(0) + guard;
        let mut tx = Vec::new();
        let mut rangers = Vec::new();
        for (sig, &k) in sigs.iter().zip(&offsets) {
            let w = synthesize(&spec, sig)?;
            let mut samples = vec![Complex64::new(0.0, 0.0); len];
            samples[k..k + w.len()].copy_from_slice(w.samples());
            tx.push(SignalBuffer::new(samples, fs, 0.0)?);
            let template = SignalBuffer::new(w.samples().to_vec(), fs, k as f64 / fs)?;
            let mut r = Ranger::new(&template, len)?
                .with_speed_of_light(cfg.speed_of_light)
                .with_refine_points(cfg.ranging.refine_points);
            if cfg.ranging.oversample != DEFAULT_OVERSAMPLE {
                r = r.with_oversample(&template, cfg.ranging.oversample)?;
            }
            rangers.push(r);
        }
        Ok(Self {
            tx,
            rangers,
            half_window: unambiguous_half_width(spec.tone_separation()),
        })
    }

    /// One simultaneous round. `distances[j]` is secondary j's distance to
    /// the primary and `expected[j]` its prior round-trip delay.
    fn round(
        &self,
        cfg: &ScenarioConfig,
        distances: &[f64],
        expected: &[f64],
        seed: u64,
        step: u64,
    ) -> Result<Vec<RangeEstimate>> {
        let r = &cfg.ranging;
        let c = cfg.speed_of_light;
        let mut at_primary: Option<SignalBuffer> = None;
        let mut up_ref = 0.0;
        for (tx, &d) in self.tx.iter().zip(distances) {
            let s = propagate_noiseless(tx, d, r.uplink_carrier, c)?;
            up_ref += s.active_power() / distances.len() as f64;
            at_primary = Some(match at_primary {
                None => s,
                Some(acc) => acc.add(&s)?,
            });
        }
        let at_primary = at_primary.expect("at least one secondary");
        let at_primary = add_awgn_with_reference(
            &at_primary,
            up_ref,
            r.snr_db,
            derive_seed(seed, &[TAG_UPLINK]),
        )?;
        let g = 10f64.powf(r.repeater_gain_db / 20.0);
        let repeated = at_primary.scaled(Complex64::new(g, 0.0));

        let mut out = Vec::with_capacity(distances.len());
        for (j, (ranger, &d)) in self.rangers.iter().zip(distances).enumerate() {
            let down = propagate_noiseless(&repeated, d, r.downlink_carrier, c)?;
            let reference = up_ref * (g * spreading_gain(d)).powi(2);
            let rx = add_awgn_with_reference(
                &down,
                reference,
                r.snr_db,
                derive_seed(seed, &[TAG_DOWNLINK, j as u64]),
            )?;
            out.push(ranger.estimate_near(&rx, expected[j], self.half_window, step)?);
        }
        Ok(out)
    }
}

/// Per-cycle peaks of the real carrier `|a| cos(ωt + ψ)` in white noise,
/// averaged over every cycle of every snapshot. Each snapshot starts at a
/// random carrier phase.
pub fn capture_amplitude(
    amplitude: f64,
    noise_reference: f64,
    capture: &CaptureConfig,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = if capture.snr_db == f64::INFINITY {
        0.0
    } else {
        noise_reference / 2f64.sqrt() * 10f64.powf(-capture.snr_db / 20.0)
    };
    let s = capture.samples_per_cycle;
    let mut total = 0.0;
    for _ in 0..capture.snapshots_per_position {
        let psi: f64 = rng.random::<f64>() * TAU;
        for cycle in 0..capture.cycles_per_snapshot {
            let mut peak = f64::NEG_INFINITY;
            for i in 0..s {
                let phase = TAU * (cycle * s + i) as f64 / s as f64 + psi;
                let n: f64 = StandardNormal.sample(&mut rng);
                peak = peak.max(amplitude * phase.cos() + sigma * n);
            }
            total += peak;
        }
    }
    total / (capture.snapshots_per_position * capture.cycles_per_snapshot) as f64
}

/// Sequential 1° grid search: the reference node keeps phase 0, then each
/// other node in turn takes the offset that maximizes the magnitude of the
/// running sum. Offsets are wrapped to `(-π, π]`.
pub fn calibrate_phases(nodes: &[NodeEmission], receiver: &Receiver, reference: usize) -> Vec<f64> {
    let mut offsets = vec![0.0; nodes.len()];
    let mut acc = receiver.contribution(&nodes[reference], 0.0);
    for (i, node) in nodes.iter().enumerate() {
        if i == reference {
            continue;
        }
        let c = receiver.contribution(node, 0.0);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for deg in 0..360 {
            let phi = (deg as f64).to_radians();
            let m = (acc + c * Complex64::cis(phi)).norm();
            if m > best.0 {
                best = (m, phi);
            }
        }
        offsets[i] = wrap_phase(best.1);
        acc += c * Complex64::cis(best.1);
    }
    offsets
}

/// Carrier phase a secondary applies for its estimated range `d` to the
/// primary: it retards by the path-difference phase when the receiver is on
/// its side of the primary and advances otherwise.
pub fn secondary_phase(
    d: f64,
    wavelength: f64,
    secondary: f64,
    primary: f64,
    receiver: f64,
) -> Result<f64> {
    let theta = if (receiver - secondary).abs() < (receiver - primary).abs() {
        0.0
    } else {
        PI
    };
    Ok(-phase_correction(d, wavelength, theta)?)
}

struct Tracker {
    state: Option<KalmanState>,
    log: Vec<KalmanUpdate>,
    /// Round-trip delay the next peak search centers on.
    prior_delay: f64,
}

/// Runs the experiment described by `config`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    Simulation::new(config)?.run()
}

/// Static phase offsets chosen by the start-up calibration, in config node
/// order (the primary keeps 0).
pub fn calibrate(config: &ScenarioConfig) -> Result<Vec<f64>> {
    let mut sim = Simulation::new(config)?;
    let (ranges, _) = sim.range_position(0)?;
    let g = config.positions_at(0)?;
    let tracking = sim.tracking_phases(&g, &ranges)?;
    sim.calibration_for(&g, &tracking)
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    primary: usize,
    secondaries: Vec<usize>,
    rig: RangingRig,
    trackers: Vec<Tracker>,
    range_log: Vec<(NodeId, RangeEstimate)>,
    hardware: Vec<f64>,
    receiver: Receiver,
    fs: f64,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let primary = cfg.primary_index()?;
        let secondaries = cfg.secondary_indices();
        let rig = RangingRig::new(cfg, &secondaries)?;
        let hardware = cfg
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.hardware_phase.unwrap_or_else(|| {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_HARDWARE, i as u64]));
                    rng.random::<f64>() * TAU
                })
            })
            .collect();
        let receiver = Receiver {
            position: cfg.receiver_position,
            frequency: cfg.beamforming_frequency,
            speed_of_light: cfg.speed_of_light,
        };
        Ok(Self {
            cfg,
            primary,
            // Deployment distances are known coarsely; the first search
            // centers on them.
            trackers: secondaries
                .iter()
                .map(|&i| Tracker {
                    state: None,
                    log: Vec::new(),
                    prior_delay: 2.0 * (cfg.nodes[i].position - cfg.nodes[primary].position).abs()
                        / cfg.speed_of_light,
                })
                .collect(),
            secondaries,
            rig,
            range_log: Vec::new(),
            hardware,
            receiver,
            fs: cfg.waveform_spec()?.sample_rate,
        })
    }

    /// Ranging rounds at position `k`; returns the range each secondary
    /// will use and how many updates tripped the innovation check.
    fn range_position(&mut self, k: usize) -> Result<(Vec<f64>, usize)> {
        let cfg = self.cfg;
        let g = cfg.positions_at(k)?;
        let xp = g.position(cfg.nodes[self.primary].id).expect("primary");
        let distances: Vec<f64> = self
            .secondaries
            .iter()
            .map(|&i| (g.position(cfg.nodes[i].id).expect("node") - xp).abs())
            .collect();
        let rounds = cfg.ranging.rounds_per_position;
        let t = &cfg.tracking;
        let mut raw = vec![0.0; self.secondaries.len()];
        let mut diverged = 0;
        for round in 0..rounds {
            let step = (k * rounds + round) as u64;
            let seed = derive_seed(cfg.seed, &[k as u64, round as u64]);
            let expected: Vec<f64> = self.trackers.iter().map(|t| t.prior_delay).collect();
            let estimates = self.rig.round(cfg, &distances, &expected, seed, step)?;
            for (j, e) in estimates.into_iter().enumerate() {
                self.range_log.push((cfg.nodes[self.secondaries[j]].id, e));
                raw[j] = e.range;
                let z = match t.mode {
                    TrackingMode::Delay => e.delay * self.fs,
                    TrackingMode::Magnitude => e.peak_value,
                };
                let tr = &mut self.trackers[j];
                tr.prior_delay = e.delay;
                match tr.state {
                    None => {
                        tr.state = Some(kalman_init(
                            z,
                            t.measurement_variance,
                            t.measurement_variance,
                            t.process_variance,
                        )?)
                    }
                    Some(s) => {
                        let u = kalman_step(s, z, t.innovation_threshold);
                        diverged += usize::from(u.diverged);
                        tr.log.push(u);
                        tr.state = Some(u.state);
                    }
                }
            }
        }
        let ranges = match t.mode {
            TrackingMode::Delay => self
                .trackers
                .iter()
                .map(|tr| cfg.speed_of_light * tr.state.expect("tracked").estimate / self.fs / 2.0)
                .collect(),
            TrackingMode::Magnitude => raw,
        };
        Ok((ranges, diverged))
    }

    /// Correction phase per node (zero for the primary, and for everyone
    /// when correction is off).
    fn tracking_phases(&self, g: &ArrayGeometry, ranges: &[f64]) -> Result<Vec<f64>> {
        let cfg = self.cfg;
        let mut phases = vec![0.0; cfg.nodes.len()];
        if !cfg.correction_enabled {
            return Ok(phases);
        }
        let xp = g.position(cfg.nodes[self.primary].id).expect("primary");
        let lambda = self.receiver.wavelength();
        for (j, &i) in self.secondaries.iter().enumerate() {
            let xs = g.position(cfg.nodes[i].id).expect("node");
            phases[i] = secondary_phase(ranges[j], lambda, xs, xp, g.receiver_position())?;
        }
        Ok(phases)
    }

    fn emissions(&self, g: &ArrayGeometry, phases: &[f64]) -> Result<Vec<NodeEmission>> {
        self.cfg
            .nodes
            .iter()
            .zip(phases)
            .map(|(n, &phi)| {
                let x = g.position(n.id).expect("node");
                NodeEmission::spherical(n.amplitude, phi, x, &self.receiver)
            })
            .collect()
    }

    fn calibration_for(&self, g: &ArrayGeometry, tracking: &[f64]) -> Result<Vec<f64>> {
        if !self.cfg.calibrate {
            return Ok(vec![0.0; self.cfg.nodes.len()]);
        }
        let phases: Vec<f64> = self
            .hardware
            .iter()
            .zip(tracking)
            .map(|(h, t)| h + t)
            .collect();
        let e = self.emissions(g, &phases)?;
        Ok(calibrate_phases(&e, &self.receiver, self.primary))
    }

    fn run(mut self) -> Result<ScenarioResult> {
        let cfg = self.cfg;
        let moving = cfg
            .motion
            .first()
            .map(|m| m.node)
            .unwrap_or(cfg.nodes[self.primary].id);
        let mut calibration: Option<Vec<f64>> = None;
        let mut records = Vec::new();
        let mut diverged_total = 0;
        for k in 0..cfg.n_positions() {
            let g = cfg.positions_at(k)?;
            let (ranges, diverged) = self.range_position(k)?;
            diverged_total += diverged;
            let tracking = self.tracking_phases(&g, &ranges)?;
            if calibration.is_none() {
                calibration = Some(self.calibration_for(&g, &tracking)?);
            }
            let cal = calibration.as_ref().expect("set above");
            let phases: Vec<f64> = (0..cfg.nodes.len())
                .map(|i| self.hardware[i] + cal[i] + tracking[i])
                .collect();
            let emissions = self.emissions(&g, &phases)?;

            let solo_exact: Vec<f64> = emissions
                .iter()
                .map(|e| self.receiver.contribution(e, 0.0).norm())
                .collect();
            let noise_ref: f64 = solo_exact.iter().sum();
            let capture_seed = |label: u64| derive_seed(cfg.seed, &[TAG_CAPTURE, k as u64, label]);
            let solo: Vec<f64> = solo_exact
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    capture_amplitude(a, noise_ref, &cfg.capture, capture_seed(i as u64 + 1))
                })
                .collect();
            let combined_exact = received_sum(&emissions, &self.receiver, 0.0)?.norm();
            let combined =
                capture_amplitude(combined_exact, noise_ref, &cfg.capture, capture_seed(0));

            records.push(PositionRecord {
                index: k,
                position: g.position(moving).expect("moving node"),
                node_positions: cfg
                    .nodes
                    .iter()
                    .map(|n| g.position(n.id).expect("node"))
                    .collect(),
                ideal_amplitude: solo.iter().sum(),
                solo_amplitudes: solo,
                combined_amplitude: combined,
                corrected: cfg.correction_enabled,
                ranges,
                applied_phases: phases,
            });
        }

        let ratios: Vec<f64> = records.iter().map(|r| r.amplitude_ratio()).collect();
        let (min_index, min_ratio) =
            ratios
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |best, (i, r)| if r < best.1 { (i, r) } else { best },
                );
        let summary = ScenarioSummary {
            min_amplitude_ratio: min_ratio,
            mean_amplitude_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
            min_power_ratio: min_ratio * min_ratio,
            min_index,
            diverged_updates: diverged_total,
        };
        let secondary_ids: Vec<NodeId> =
            self.secondaries.iter().map(|&i| cfg.nodes[i].id).collect();
        Ok(ScenarioResult {
            name: cfg.name.clone(),
            node_ids: cfg.nodes.iter().map(|n| n.id).collect(),
            kalman_logs: secondary_ids
                .iter()
                .zip(self.trackers)
                .map(|(id, t)| (*id, t.log))
                .collect(),
            secondary_ids,
            records,
            range_log: self.range_log,
            hardware_phases: self.hardware,
            calibration: calibration.unwrap_or_default(),
            summary,
        })
    }
}
