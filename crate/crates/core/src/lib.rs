//! VNet vocoder: mel-conditioned GAN generator, multi-tier and multi-period
//! discriminators, the adversarial loss families, training and metrics.

pub mod checks;
pub mod config;
pub mod discriminators;
pub mod dsp;
mod error;
pub mod losses;
pub mod metrics;
pub mod generator;
pub mod nn;
pub mod trainer;

pub use error::{Result, VnetError};
