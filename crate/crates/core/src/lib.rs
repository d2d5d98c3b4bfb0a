//! Blind OFDM modulation detection.
//!
//! The signal side synthesizes impaired OFDM captures ([`waveform`],
//! [`channel`]) and recovers their grid without side information
//! ([`blindsync`]). Recovered symbols become constellation images
//! ([`featurize`]) that a small residual CNN labels ([`classifier`]);
//! [`evalpipe`] strings the pieces into a receiver and scores it.

pub mod blindsync;
pub mod channel;
pub mod classifier;
pub mod error;
pub mod evalpipe;
pub mod featurize;
pub mod formats;
pub mod numerics;
pub mod rng;
pub mod waveform;

pub use error::{Error, Result};
