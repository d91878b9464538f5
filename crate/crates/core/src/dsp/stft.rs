use vnet_tensor::ops::stft::StftGeometry;
use vnet_tensor::Tensor;

use crate::error::{Result, VnetError};

/// Guard inside the differentiable magnitude, `sqrt(re^2 + im^2 + guard)`.
pub const MAG_GUARD: f64 = 1e-9;

/// STFT framing with a periodic Hann window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop_length: usize,
    pub win_length: usize,
}

impl StftParams {
    pub const fn new(n_fft: usize, hop_length: usize, win_length: usize) -> Self {
        StftParams {
            n_fft,
            hop_length,
            win_length,
        }
    }

    /// Conditioning features: 1024-point FFT, 1024 window, 256 hop.
    pub const MEL: StftParams = StftParams::new(1024, 256, 1024);

    /// Three analysis resolutions shared by the spectrogram tiers and the
    /// multi-resolution distance.
    pub const RESOLUTIONS: [StftParams; 3] = [
        StftParams::new(1024, 120, 600),
        StftParams::new(2048, 240, 1200),
        StftParams::new(512, 50, 240),
    ];

    pub fn geometry(&self) -> StftGeometry {
        StftGeometry {
            n_fft: self.n_fft,
            hop: self.hop_length,
            win: self.win_length,
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Centred framing: `1 + T / hop`.
    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop_length
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.hop_length == 0 || self.win_length > self.n_fft || self.hop_length > self.win_length {
            return Err(VnetError::Input(format!(
                "STFT parameters need 0 < hop <= win <= n_fft, got {}:{}:{}",
                self.n_fft, self.hop_length, self.win_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrogramKind {
    LinearMagnitude,
    LogMel,
}

/// `[bins, frames]` row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub kind: SpectrogramKind,
    pub params: StftParams,
}

impl Spectrogram {
    pub fn num_elements(&self) -> usize {
        self.values.len()
    }

    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    /// Column of one frame.
    pub fn frame(&self, f: usize) -> Vec<f64> {
        (0..self.bins).map(|b| self.at(b, f)).collect()
    }
}

/// `|STFT|` of a signal with centred reflect framing and the magnitude guard.
pub fn stft_magnitude(x: &[f64], params: StftParams) -> Result<Spectrogram> {
    stft_magnitude_guarded(x, params, MAG_GUARD)
}

pub(crate) fn stft_magnitude_guarded(x: &[f64], params: StftParams, guard: f64) -> Result<Spectrogram> {
    params.validate()?;
    if x.len() < params.win_length {
        return Err(VnetError::Input(format!(
            "signal of {} samples is shorter than one {}-sample window",
            x.len(),
            params.win_length
        )));
    }
    let t = Tensor::<f64>::new(&[1, x.len()], x.to_vec())?;
    let mag = t.stft_magnitude(params.geometry(), guard)?;
    Ok(Spectrogram {
        bins: mag.dim(1),
        frames: mag.dim(2),
        values: mag.to_vec(),
        kind: SpectrogramKind::LinearMagnitude,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_frame_magnitude(frame: &[f64], window: &[f64], k: usize) -> f64 {
        let n = frame.len();
        let (mut re, mut im) = (0.0, 0.0);
        for (i, (&x, &w)) in frame.iter().zip(window).enumerate() {
            let a = -2.0 * PI * (k * i) as f64 / n as f64;
            re += x * w * a.cos();
            im += x * w * a.sin();
        }
        (re * re + im * im + MAG_GUARD).sqrt()
    }

    #[test]
    fn zero_input_hits_guard_floor() {
        let s = stft_magnitude(&[0.0; 2048], StftParams::MEL).unwrap();
        assert!(s.values.iter().all(|&v| (v - MAG_GUARD.sqrt()).abs() < 1e-15));
        assert_eq!((s.bins, s.frames), (513, 9));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let x: Vec<f64> = (0..4096).map(|i| (2.0 * PI * 1000.0 * i as f64 / 24_000.0).sin()).collect();
        let s = stft_magnitude(&x, StftParams::MEL).unwrap();
        let col = s.frame(8);
        let peak = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
        assert_eq!(peak, 43);
    }

    #[test]
    fn interior_frame_matches_naive_dft() {
        let x: Vec<f64> = (0..600).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let p = StftParams::new(64, 16, 48);
        let s = stft_magnitude(&x, p).unwrap();
        let window = p.geometry().window();
        // Frame f covers samples f*hop - n_fft/2 .. + n_fft.
        let f = 10;
        let frame: Vec<f64> = (0..64).map(|i| x[f * 16 + i - 32]).collect();
        for k in 0..s.bins {
            let want = naive_frame_magnitude(&frame, &window, k);
            assert!((s.at(k, f) - want).abs() < 1e-8, "bin {k}");
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        assert!(stft_magnitude(&[0.0; 100], StftParams::MEL).is_err());
    }
}
