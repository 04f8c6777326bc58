use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("signature space too small: {n_pulses}! = {available} < {required} connections")]
    InsufficientSignatures {
        n_pulses: usize,
        available: u128,
        required: usize,
    },

    #[error("highest tone {highest_hz} Hz is not below Nyquist ({nyquist_hz} Hz)")]
    NyquistViolation { highest_hz: f64, nyquist_hz: f64 },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("delay {delay_s} s exceeds buffer duration {duration_s} s")]
    DelayOutOfRange { delay_s: f64, duration_s: f64 },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("correlation peak at index {index} is too close to the buffer edge (len {len})")]
    PeakAtEdge { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
