//! Deterministic signal processing shared by training, synthesis and
//! evaluation.

mod audio;
mod mel;
pub mod melfile;
pub mod pgm;
mod resample;
mod stft;
pub mod wav;

pub use audio::{avg_pool, reshape2d, AudioClip};
pub use mel::{hz_to_mel, log_mel, mel_to_hz, MelFilterbank, LOG_FLOOR};
pub use resample::resample;
pub use stft::{stft_magnitude, Spectrogram, SpectrogramKind, StftParams, MAG_GUARD};

/// Canonical sample rate of every pipeline stage after ingestion.
pub const SAMPLE_RATE: u32 = 24_000;
/// Samples per conditioning frame.
pub const HOP: usize = 256;
/// Mel bands of the conditioning features.
pub const N_MELS: usize = 100;
