//! Objective evaluation: multi-resolution STFT distance, mel-cepstral
//! distortion, pitch error and voicing F1.

pub mod corpus;
pub mod mcd;
pub mod mstft;
pub mod pitch;

pub use corpus::{corpus_eval, MetricReport, Summary};
pub use mcd::{dtw, mcd, mel_cepstra};
pub use mstft::m_stft;
pub use pitch::{periodicity_and_vuv, pitch_track, PitchTrack};

use crate::dsp::MelFilterbank;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct FileMetrics {
    pub m_stft: f64,
    pub mcd: Option<f64>,
    pub periodicity: Option<f64>,
    pub vuv_f1: f64,
}

/// All four metrics of a generated signal against its reference.
pub fn evaluate_pair(real: &[f64], generated: &[f64], fb: &MelFilterbank) -> Result<FileMetrics> {
    let (x, y) = mstft::pad_to_common(real, generated);
    let (periodicity, vuv_f1) = periodicity_and_vuv(&pitch_track(real), &pitch_track(generated));
    Ok(FileMetrics {
        m_stft: m_stft(&x, &y)?,
        mcd: mcd(&x, &y, fb)?,
        periodicity,
        vuv_f1,
    })
}
