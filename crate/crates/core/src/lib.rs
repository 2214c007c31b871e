//! Spike encoding toolkit for one-dimensional sensor signals.
//!
//! The crate converts normalized multi-channel time series into ternary
//! spike tensors (rate, time-to-first-spike, binary and multi-threshold
//! delta encodings), reconstructs signals from those tensors, and measures
//! firing rate, reconstruction SNR and robustness to spike errors. A small
//! current-based LIF network with surrogate-gradient training is included
//! so that encodings can also be compared on classification accuracy.

pub mod checkpoint;
pub mod cli;
pub mod dataio;
pub mod decoders;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod snn;
pub mod special;
pub mod types;

pub use error::{Error, Result};
pub use types::{EncodingConfig, Rng, Scheme, Signal, SpikeTensor, ThresholdBanks};
