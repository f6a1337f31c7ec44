//! Keyword-cued target speaker enhancement.
//!
//! A frame-wise mask estimator separates a detected wake-up keyword from
//! background speech; the masked keyword region yields spatial covariance
//! estimates from which a fixed MVDR beamformer is built and applied to the
//! command that follows.

pub mod audio_io;
pub mod beamformer;
pub mod config;
pub mod error;
pub mod features;
pub mod masknet;
pub mod metrics;
pub mod pipeline;
pub mod simulator;
pub mod stft;

pub use error::{Error, Result};
