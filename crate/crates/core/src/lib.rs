//! Streaming joint echo cancellation and noise suppression with
//! time/frequency compression, plus analytic complexity accounting.

pub mod aec;
pub mod config;
pub mod dsp;
pub mod engine;
pub mod error;
pub mod freq;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod postnet;
pub mod profiler;
pub mod simulator;
pub mod time;
pub mod wav;
pub mod weights;

pub use error::{Error, Result};
