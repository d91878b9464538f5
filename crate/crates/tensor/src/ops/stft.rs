//! Differentiable short-time Fourier transform magnitude.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::reflect_index;
use crate::tensor::{BackwardOp, Tensor};

/// Framing of an STFT. Frames are centred: the signal is reflect padded by
/// `n_fft / 2` on both sides, giving `1 + T / hop` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftGeometry {
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
}

impl StftGeometry {
    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Periodic Hann window of length `win`, zero padded (centred) to `n_fft`.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let off = (self.n_fft - self.win) / 2;
        for i in 0..self.win {
            let x = std::f64::consts::PI * 2.0 * i as f64 / self.win as f64;
            w[off + i] = 0.5 - 0.5 * x.cos();
        }
        w
    }

    fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.hop == 0 || self.win == 0 || self.win > self.n_fft || self.hop > self.win {
            return Err(TensorError::config(
                "stft",
                format!("need 0 < hop <= win <= n_fft, got {self:?}"),
            ));
        }
        Ok(())
    }
}

struct StftBack {
    geom: StftGeometry,
    window: Vec<f64>,
    // Complex spectrum of every frame, [B, frames, bins].
    spectrum: Vec<Complex<f64>>,
    len: usize,
    inverse: Arc<dyn Fft<f64>>,
}

impl<F: Element> BackwardOp<F> for StftBack {
    fn name(&self) -> &'static str {
        "stft_magnitude"
    }

    fn backward(&self, inputs: &[Tensor<F>], output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let x = &inputs[0];
        let (n, bins) = (self.geom.n_fft, self.geom.bins());
        let frames = self.geom.frames(self.len);
        let batch = x.dim(0);
        let half = (n / 2) as isize;
        let mut gx = vec![F::zero(); x.numel()];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for b in 0..batch {
            let gx_b = &mut gx[b * self.len..][..self.len];
            for f in 0..frames {
                buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
                for (k, slot) in buf.iter_mut().enumerate().take(bins) {
                    let idx = (b * bins + k) * frames + f;
                    let mag = output[idx].as_f64();
                    let s = self.spectrum[(b * frames + f) * bins + k];
                    let gm = if mag > 0.0 { grad[idx].as_f64() / mag } else { 0.0 };
                    *slot = Complex::new(gm * s.re, gm * s.im);
                }
                // Real part of sum_k G_k e^{+i 2 pi k n / N} is d loss / d frame[n].
                self.inverse.process(&mut buf);
                for (i, c) in buf.iter().enumerate() {
                    let wv = self.window[i];
                    if wv == 0.0 {
                        continue;
                    }
                    let pos = reflect_index((f * self.geom.hop + i) as isize - half, self.len);
                    gx_b[pos] = gx_b[pos] + F::lit(c.re * wv);
                }
            }
        }
        vec![Some(gx)]
    }
}

impl<F: Element> Tensor<F> {
    /// `|STFT|` of a batch of signals `[B, T]`, as `[B, n_fft/2 + 1, frames]`.
    ///
    /// The magnitude is `sqrt(re^2 + im^2 + guard)`; a positive guard keeps
    /// the gradient finite at zero.
    pub fn stft_magnitude(&self, geom: StftGeometry, guard: f64) -> Result<Tensor<F>> {
        geom.validate()?;
        if self.rank() != 2 {
            return Err(TensorError::Shape {
                op: "stft_magnitude",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (batch, len) = (self.dim(0), self.dim(1));
        if len < geom.win {
            return Err(TensorError::config(
                "stft_magnitude",
                format!("signal of {len} samples is shorter than the {}-sample window", geom.win),
            ));
        }
        let (n, bins, frames) = (geom.n_fft, geom.bins(), geom.frames(len));
        let window = geom.window();
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let half = (n / 2) as isize;
        let mut spectrum = vec![Complex::new(0.0, 0.0); batch * frames * bins];
        let mut mag = vec![F::zero(); batch * bins * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for b in 0..batch {
            let x_b = &self.data()[b * len..][..len];
            for f in 0..frames {
                for (i, c) in buf.iter_mut().enumerate() {
                    let pos = reflect_index((f * geom.hop + i) as isize - half, len);
                    *c = Complex::new(x_b[pos].as_f64() * window[i], 0.0);
                }
                forward.process(&mut buf);
                for k in 0..bins {
                    let s = buf[k];
                    spectrum[(b * frames + f) * bins + k] = s;
                    mag[(b * bins + k) * frames + f] = F::lit((s.re * s.re + s.im * s.im + guard).sqrt());
                }
            }
        }
        Ok(Tensor::from_op(
            vec![batch, bins, frames],
            mag,
            vec![self.clone()],
            StftBack {
                geom,
                window,
                spectrum,
                len,
                inverse,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_signal_and_bad_geometry() {
        let x = Tensor::<f64>::zeros(&[1, 100]);
        let g = StftGeometry { n_fft: 256, hop: 64, win: 200 };
        assert!(x.stft_magnitude(g, 1e-9).is_err());
        let bad = StftGeometry { n_fft: 128, hop: 64, win: 200 };
        assert!(Tensor::<f64>::zeros(&[1, 400]).stft_magnitude(bad, 1e-9).is_err());
    }

    #[test]
    fn frame_count_and_guard_floor() {
        let g = StftGeometry { n_fft: 64, hop: 16, win: 64 };
        let y = Tensor::<f64>::zeros(&[2, 100]).stft_magnitude(g, 1e-9).unwrap();
        assert_eq!(y.shape(), &[2, 33, 7]);
        assert!(y.data().iter().all(|&v| (v - 1e-9f64.sqrt()).abs() < 1e-15));
    }
}
