use crate::dsp::AudioClip;
use crate::error::{Result, VnetError};

/// Filter half-width in output-rate zero crossings (64 taps).
const HALF_TAPS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        bessel_i0(KAISER_BETA * (1.0 - t * t).sqrt()) / bessel_i0(KAISER_BETA)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Kaiser-windowed sinc resampling. The cutoff sits at the lower of the two
/// Nyquist rates.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(VnetError::Input("target sample rate must be positive".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let cutoff = ratio.min(1.0);
    let half_width = HALF_TAPS / cutoff;
    let n_out = (clip.len() as f64 * ratio).round() as usize;
    let x = &clip.samples;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let t = n as f64 / ratio;
        let lo = (t - half_width).ceil().max(0.0) as usize;
        let hi = ((t + half_width).floor() as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let d = t - k as f64;
            acc += xk * cutoff * sinc(cutoff * d) * kaiser(d / half_width);
        }
        out.push(acc);
    }
    AudioClip::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Mean frequency between the first and last rising zero crossing.
    fn zero_crossing_frequency(x: &[f64], rate: f64) -> f64 {
        let mut crossings = Vec::new();
        for i in 1..x.len() {
            if x[i - 1] < 0.0 && x[i] >= 0.0 {
                crossings.push(i as f64 - 1.0 + x[i - 1] / (x[i - 1] - x[i]));
            }
        }
        let n = crossings.len();
        (n - 1) as f64 * rate / (crossings[n - 1] - crossings[0])
    }

    #[test]
    fn downsampled_sine_keeps_its_frequency() {
        let x: Vec<f64> = (0..48_000).map(|i| 0.8 * (2.0 * PI * 1000.0 * i as f64 / 48_000.0).sin()).collect();
        let clip = AudioClip::new(x, 48_000).unwrap();
        let y = resample(&clip, 24_000).unwrap();
        assert_eq!(y.len(), 24_000);
        let f = zero_crossing_frequency(&y.samples[1000..23_000], 24_000.0);
        assert!((f - 1000.0).abs() < 1.0, "{f}");
        let peak = y.samples[1000..23_000].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.8).abs() < 0.01, "{peak}");
    }

    #[test]
    fn identity_rate_is_a_copy() {
        let clip = AudioClip::new(vec![0.1, -0.2], 24_000).unwrap();
        assert_eq!(resample(&clip, 24_000).unwrap(), clip);
    }

    #[test]
    fn bessel_reference_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
    }
}
