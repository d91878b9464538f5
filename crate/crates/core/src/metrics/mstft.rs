use crate::dsp::{stft_magnitude, StftParams};
use crate::error::{Result, VnetError};
use crate::losses::{LOG_FLOOR, NORM_GUARD};

/// Zero pads the shorter signal so both have the same length.
pub fn pad_to_common(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len().max(y.len());
    let pad = |v: &[f64]| {
        let mut v = v.to_vec();
        v.resize(n, 0.0);
        v
    };
    (pad(x), pad(y))
}

/// Spectral convergence plus mean log-magnitude distance, averaged over
/// the three analysis resolutions.
pub fn m_stft(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    let (x, y) = pad_to_common(x, x_hat);
    let need = StftParams::RESOLUTIONS.iter().map(|p| p.win_length).max().unwrap_or(0);
    if x.len() < need {
        return Err(VnetError::Input(format!("m_stft needs at least {need} samples, got {}", x.len())));
    }
    let mut total = 0.0;
    for p in StftParams::RESOLUTIONS {
        let s = stft_magnitude(&x, p)?.values;
        let t = stft_magnitude(&y, p)?.values;
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = s.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let sc = if norm < NORM_GUARD { 0.0 } else { diff / norm };
        let log = s
            .iter()
            .zip(&t)
            .map(|(a, b)| (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln()).abs())
            .sum::<f64>()
            / s.len() as f64;
        total += sc + log;
    }
    Ok(total / StftParams::RESOLUTIONS.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(n: usize) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn identity_and_sign_invariance() {
        let x = noise(4000);
        assert_eq!(m_stft(&x, &x).unwrap(), 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(m_stft(&x, &neg).unwrap(), 0.0);
    }

    #[test]
    fn noise_against_silence_exceeds_one() {
        let x = noise(4000);
        assert!(m_stft(&x, &vec![0.0; 4000]).unwrap() > 1.0);
    }

    #[test]
    fn shorter_input_is_zero_padded() {
        let x = noise(4000);
        let v = m_stft(&x, &x[..3000]).unwrap();
        assert!(v > 0.0 && v.is_finite());
    }
}
