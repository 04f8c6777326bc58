//! Line-of-sight propagation between nodes on a 1-D axis.
//!
//! A hop delays the baseband envelope by `d/c`, scales its amplitude by
//! `REFERENCE_DISTANCE / d` (unit gain at one meter), rotates it by the
//! carrier phase `-2π f_c d / c` and adds receiver noise. The repeater path
//! chains two hops with a gain stage at the primary.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::signal::SignalBuffer;
use crate::SPEED_OF_LIGHT;

/// Distance at which a hop has unit amplitude gain, meters.
pub const REFERENCE_DISTANCE: f64 = 1.0;

/// Default uplink (secondary to primary) ranging carrier, Hz.
pub const DEFAULT_UPLINK_CARRIER: f64 = 4.25e9;
/// Default downlink (repeated) ranging carrier, Hz.
pub const DEFAULT_DOWNLINK_CARRIER: f64 = 5.25e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Node and receiver coordinates along the array axis, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: BTreeMap<NodeId, f64>,
    receiver_position: f64,
}

impl ArrayGeometry {
    pub fn new(
        nodes: impl IntoIterator<Item = (NodeId, f64)>,
        receiver_position: f64,
    ) -> Result<Self> {
        if !receiver_position.is_finite() {
            return Err(Error::InvalidGeometry(
                "receiver position is not finite".into(),
            ));
        }
        let mut positions = BTreeMap::new();
        for (id, x) in nodes {
            if !x.is_finite() {
                return Err(Error::InvalidGeometry(format!(
                    "node {id} position is not finite"
                )));
            }
            if positions.insert(id, x).is_some() {
                return Err(Error::InvalidGeometry(format!("duplicate node id {id}")));
            }
        }
        Ok(Self {
            positions,
            receiver_position,
        })
    }

    pub fn position(&self, id: NodeId) -> Option<f64> {
        self.positions.get(&id).copied()
    }

    pub fn set_position(&mut self, id: NodeId, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "node {id} position is not finite"
            )));
        }
        match self.positions.get_mut(&id) {
            Some(p) => {
                *p = x;
                Ok(())
            }
            None => Err(Error::InvalidGeometry(format!("unknown node {id}"))),
        }
    }

    pub fn receiver_position(&self) -> f64 {
        self.receiver_position
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.positions.iter().map(|(&id, &x)| (id, x))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// One radio hop's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub carrier_frequency: f64,
    /// Receiver SNR in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Gain applied when this hop's signal is retransmitted, dB.
    pub repeater_gain_db: f64,
    pub seed: u64,
    pub speed_of_light: f64,
}

impl LinkParams {
    pub fn new(carrier_frequency: f64, snr_db: f64, seed: u64) -> Self {
        Self {
            carrier_frequency,
            snr_db,
            repeater_gain_db: 0.0,
            seed,
            speed_of_light: SPEED_OF_LIGHT,
        }
    }

    pub fn noiseless(carrier_frequency: f64) -> Self {
        Self::new(carrier_frequency, f64::INFINITY, 0)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.carrier_frequency > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "carrier frequency must be positive, got {}",
                self.carrier_frequency
            )));
        }
        if !(self.speed_of_light > 0.0) {
            return Err(Error::InvalidParameter(
                "speed of light must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Band-limited circular delay of the whole buffer by `delay` seconds.
///
/// The shift is applied as a linear phase ramp in the frequency domain, so
/// it is exact for content that is band-limited and does not wrap around
/// the buffer ends. Callers pad with guard zeros to keep it that way.
pub fn fractional_delay(signal: &SignalBuffer, delay: f64) -> Result<SignalBuffer> {
    let duration = signal.duration();
    if !delay.is_finite() || delay.abs() >= duration {
        return Err(Error::DelayOutOfRange {
            delay_s: delay,
            duration_s: duration,
        });
    }
    if delay == 0.0 {
        return Ok(signal.clone());
    }
    let n = signal.len();
    let shift = delay * signal.sample_rate();
    if shift.fract() == 0.0 {
        let k = shift.rem_euclid(n as f64) as usize;
        let mut out = signal.samples().to_vec();
        out.rotate_right(k);
        return SignalBuffer::new(out, signal.sample_rate(), signal.start_time());
    }
    let mut spec = signal.samples().to_vec();
    dsp::fft_in_place(&mut spec);
    for (k, x) in spec.iter_mut().enumerate() {
        let f = dsp::bin_frequency(k, n);
        if n.is_multiple_of(2) && k == n / 2 {
            // The Nyquist bin stands for both +fs/2 and -fs/2.
            *x *= (PI * shift).cos();
        } else {
            *x *= Complex64::cis(-2.0 * PI * f * shift);
        }
    }
    dsp::ifft_in_place(&mut spec);
    SignalBuffer::new(spec, signal.sample_rate(), signal.start_time())
}

/// Amplitude gain of a single hop over `distance` meters.
pub fn spreading_gain(distance: f64) -> f64 {
    REFERENCE_DISTANCE / distance
}

/// Carrier phase picked up over `distance`, radians (not wrapped).
pub fn carrier_phase(distance: f64, carrier_frequency: f64, speed_of_light: f64) -> f64 {
    -2.0 * PI * carrier_frequency * distance / speed_of_light
}

/// Delay, spreading and carrier rotation of one hop, without noise.
pub fn propagate_noiseless(
    signal: &SignalBuffer,
    distance: f64,
    carrier_frequency: f64,
    speed_of_light: f64,
) -> Result<SignalBuffer> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::InvalidGeometry(format!(
            "propagation distance must be positive, got {distance}"
        )));
    }
    let delayed = fractional_delay(signal, distance / speed_of_light)?;
    let gain = Complex64::from_polar(
        spreading_gain(distance),
        carrier_phase(distance, carrier_frequency, speed_of_light),
    );
    Ok(delayed.scaled(gain))
}

/// One hop including receiver noise at `link.snr_db` relative to the
/// arriving signal's active power.
pub fn propagate(signal: &SignalBuffer, distance: f64, link: &LinkParams) -> Result<SignalBuffer> {
    link.check()?;
    let clean = propagate_noiseless(
        signal,
        distance,
        link.carrier_frequency,
        link.speed_of_light,
    )?;
    if link.snr_db.is_infinite() && link.snr_db > 0.0 {
        return Ok(clean);
    }
    let reference = clean.active_power();
    add_awgn_with_reference(&clean, reference, link.snr_db, link.seed)
}

/// Secondary → primary → repeater gain → secondary.
///
/// The uplink and downlink hops use their own carriers, SNRs and seeds. The
/// downlink SNR is referenced to the repeated ranging signal alone, so the
/// uplink noise riding on it adds to the downlink noise.
pub fn round_trip(
    signal: &SignalBuffer,
    secondary_pos: f64,
    primary_pos: f64,
    uplink: &LinkParams,
    downlink: &LinkParams,
) -> Result<SignalBuffer> {
    uplink.check()?;
    downlink.check()?;
    let d = (primary_pos - secondary_pos).abs();
    if !(d > 0.0) {
        return Err(Error::InvalidGeometry(
            "secondary and primary positions coincide".into(),
        ));
    }
    let up_clean = propagate_noiseless(signal, d, uplink.carrier_frequency, uplink.speed_of_light)?;
    let up_ref = up_clean.active_power();
    let at_primary = maybe_noise(&up_clean, up_ref, uplink)?;

    let g = db_to_amplitude(downlink.repeater_gain_db);
    let repeated = at_primary.scaled(Complex64::new(g, 0.0));
    let down = propagate_noiseless(
        &repeated,
        d,
        downlink.carrier_frequency,
        downlink.speed_of_light,
    )?;
    let down_ref = up_ref * (g * spreading_gain(d)).powi(2);
    maybe_noise(&down, down_ref, downlink)
}

fn maybe_noise(signal: &SignalBuffer, reference: f64, link: &LinkParams) -> Result<SignalBuffer> {
    if link.snr_db == f64::INFINITY {
        Ok(signal.clone())
    } else {
        add_awgn_with_reference(signal, reference, link.snr_db, link.seed)
    }
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Complex noise variance giving `snr_db` against `signal_power`.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    signal_power / db_to_power(snr_db)
}

/// Adds circular complex white Gaussian noise so that the signal's active
/// power over the noise power equals `snr_db`. `+∞` returns the input.
pub fn add_awgn(signal: &SignalBuffer, snr_db: f64, seed: u64) -> Result<SignalBuffer> {
    let reference = signal.active_power();
    add_awgn_with_reference(signal, reference, snr_db, seed)
}

/// As [`add_awgn`], with the reference signal power supplied by the caller.
pub fn add_awgn_with_reference(
    signal: &SignalBuffer,
    reference_power: f64,
    snr_db: f64,
    seed: u64,
) -> Result<SignalBuffer> {
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    if !(reference_power > 0.0) {
        return Err(Error::InvalidSignal(
            "cannot set an SNR against a signal with zero power".into(),
        ));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidParameter("SNR is NaN".into()));
    }
    let variance = noise_variance(reference_power, snr_db);
    Ok(add_noise_variance(signal, variance, seed))
}

/// Adds complex white Gaussian noise of total variance `variance` (half in
/// each quadrature).
pub fn add_noise_variance(signal: &SignalBuffer, variance: f64, seed: u64) -> SignalBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (variance / 2.0).sqrt();
    let mut out = signal.clone();
    for s in out.samples_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *s += Complex64::new(sigma * re, sigma * im);
    }
    out
}
