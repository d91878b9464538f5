use crate::dsp::stft::{stft_magnitude_guarded, Spectrogram, SpectrogramKind, StftParams};
use crate::error::{Result, VnetError};

/// Floor applied before every logarithm of a spectrogram.
pub const LOG_FLOOR: f64 = 1e-5;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    }
}

/// Triangular filters on the mel scale with unit peak, `[bands, n_fft/2 + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub matrix: Vec<f64>,
    pub bands: usize,
    pub bins: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
    pub f_min: f64,
    pub f_max: f64,
    /// Centre frequency of each band in Hz.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, sample_rate: u32, bands: usize, f_min: f64, f_max: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if bands == 0 {
            return Err(VnetError::Input("mel band count must be >= 1".into()));
        }
        if !(0.0..f_max).contains(&f_min) || f_max > nyquist {
            return Err(VnetError::Input(format!(
                "mel range [{f_min}, {f_max}] Hz must lie within [0, {nyquist}]"
            )));
        }
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
            .collect();
        let mut matrix = vec![0.0; bands * bins];
        for b in 0..bands {
            let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
            for k in 0..bins {
                let f = k as f64 * sample_rate as f64 / n_fft as f64;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c));
                matrix[b * bins + k] = w.max(0.0);
            }
            if matrix[b * bins..][..bins].iter().all(|&w| w == 0.0) {
                return Err(VnetError::Input(format!(
                    "mel band {b} ({l:.1}-{r:.1} Hz) falls between FFT bins; use fewer bands or a longer FFT"
                )));
            }
        }
        Ok(MelFilterbank {
            matrix,
            bands,
            bins,
            n_fft,
            sample_rate,
            f_min,
            f_max,
            centers: edges[1..=bands].to_vec(),
        })
    }

    /// 100 bands over [0, 12] kHz at 24 kHz for a 1024-point FFT.
    pub fn standard() -> Self {
        MelFilterbank::new(1024, 24_000, 100, 0.0, 12_000.0).expect("standard mel filterbank")
    }

    /// Applies the bank to a linear magnitude spectrogram.
    pub fn apply(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        if spec.bins != self.bins {
            return Err(VnetError::Input(format!(
                "filterbank expects {} bins, spectrogram has {}",
                self.bins, spec.bins
            )));
        }
        let mut out = vec![0.0; self.bands * spec.frames];
        for b in 0..self.bands {
            let row = &self.matrix[b * self.bins..][..self.bins];
            for (k, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &spec.values[k * spec.frames..][..spec.frames];
                for (o, &s) in out[b * spec.frames..][..spec.frames].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(out)
    }
}

/// Natural-log mel spectrogram, clamped below at `ln(LOG_FLOOR)`.
pub fn log_mel(x: &[f64], params: StftParams, fb: &MelFilterbank) -> Result<Spectrogram> {
    if fb.n_fft != params.n_fft {
        return Err(VnetError::Input(format!(
            "filterbank built for n_fft {} used with n_fft {}",
            fb.n_fft, params.n_fft
        )));
    }
    // Unguarded magnitude so silence reaches the clamp exactly.
    let spec = stft_magnitude_guarded(x, params, 0.0)?;
    let values = fb.apply(&spec)?.into_iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
    Ok(Spectrogram {
        values,
        bins: fb.bands,
        frames: spec.frames,
        kind: SpectrogramKind::LogMel,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 300.0, 999.0, 1000.0, 4321.0, 12_000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn standard_bank_shape_and_coverage() {
        let fb = MelFilterbank::standard();
        assert_eq!((fb.bands, fb.bins), (100, 513));
        assert!(fb.matrix.iter().all(|&w| w >= 0.0));
        for k in 1..512 {
            let total: f64 = (0..100).map(|b| fb.matrix[b * 513 + k]).sum();
            assert!(total > 0.0, "bin {k} uncovered");
        }
        assert!(fb.centers.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_invalid_setup() {
        assert!(MelFilterbank::new(1024, 24_000, 0, 0.0, 12_000.0).is_err());
        assert!(MelFilterbank::new(1024, 24_000, 100, 0.0, 13_000.0).is_err());
        let fb = MelFilterbank::standard();
        assert!(log_mel(&[0.0; 4096], StftParams::new(2048, 256, 1024), &fb).is_err());
    }

    #[test]
    fn zero_input_clamps_and_frames_follow_hop() {
        let fb = MelFilterbank::standard();
        let s = log_mel(&vec![0.0; 5000], StftParams::MEL, &fb).unwrap();
        assert_eq!(s.frames, 1 + 5000 / 256);
        assert!(s.values.iter().all(|&v| v == LOG_FLOOR.ln()));
        assert!((LOG_FLOOR.ln() + 11.5129).abs() < 1e-4);
    }

    #[test]
    fn doubling_shifts_by_ln2() {
        let fb = MelFilterbank::standard();
        let x: Vec<f64> = (0..4096).map(|i| 0.3 * (i as f64 * 0.05).sin() + 0.1 * (i as f64 * 0.71).cos()).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = log_mel(&x, StftParams::MEL, &fb).unwrap();
        let b = log_mel(&x2, StftParams::MEL, &fb).unwrap();
        for (va, vb) in a.values.iter().zip(&b.values) {
            if *va > LOG_FLOOR.ln() + 1.0 {
                assert!((vb - va - 2f64.ln()).abs() < 1e-9);
            }
        }
    }
}
