//! Simulation library for rate-adaptive channel estimation over sparse
//! single-path mmWave MIMO links.
//!
//! The estimation problem: a transmitter and receiver, each with an N-element
//! ULA and a single RF chain, probe the channel one beam pair at a time to
//! locate the (AOD, AOA) grid pair of the dominant path and its fading
//! coefficient. Three procedures are provided:
//!
//! * a fixed-rate multi-stage baseline that always spends `sum(K_s^2)`
//!   measurements ([`schemes::run_fixed`]),
//! * the RACE procedure, which keeps re-measuring the most likely pair until
//!   its posterior clears a confidence threshold or a global budget runs out
//!   ([`schemes::run_race`]),
//! * a rate-switching benchmark that picks a fixed-rate plan per SNR region
//!   ([`schemes::select_scheme`]).
//!
//! [`harness`] drives Monte Carlo sweeps over SNR and emits CSV/JSON metric
//! tables; the `race-sim` binary exposes it on the command line.

pub mod array_channel;
pub mod codebook;
pub mod harness;
pub mod ml_estimator;
mod par;
pub mod schemes;
pub mod seed;
pub mod sounding;

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
