//! Weight reparameterizations used by the discriminators.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::{BackwardOp, Tensor};

/// Guard added to norms so zero vectors stay finite.
pub const NORM_EPS: f64 = 1e-12;

struct WeightNorm;

impl<F: Element> BackwardOp<F> for WeightNorm {
    fn name(&self) -> &'static str {
        "weight_norm"
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let (v, g) = (&inputs[0], &inputs[1]);
        let rows = g.numel();
        let n = v.numel() / rows.max(1);
        let mut gv = v.requires_grad().then(|| vec![F::zero(); v.numel()]);
        let mut gg = g.requires_grad().then(|| vec![F::zero(); rows]);
        for r in 0..rows {
            let vr = &v.data()[r * n..][..n];
            let gr = &grad[r * n..][..n];
            let norm: F = vr.iter().map(|&x| x * x).sum::<F>().sqrt();
            let denom = norm + F::lit(NORM_EPS);
            let dot: F = vr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            if let Some(gg) = gg.as_mut() {
                gg[r] = dot / denom;
            }
            if let Some(gv) = gv.as_mut() {
                let gain = g.data()[r];
                let radial = if norm > F::zero() {
                    gain * dot / (denom * denom * norm)
                } else {
                    F::zero()
                };
                for ((o, &x), &go) in gv[r * n..][..n].iter_mut().zip(vr).zip(gr) {
                    *o = gain / denom * go - radial * x;
                }
            }
        }
        vec![gv, gg]
    }
}

impl<F: Element> Tensor<F> {
    /// Weight normalization: each output row of `self` (direction `v`,
    /// `[C_out, ...]`) is rescaled to norm `gain[row]`.
    pub fn weight_norm(&self, gain: &Tensor<F>) -> Result<Tensor<F>> {
        if self.rank() == 0 || gain.rank() != 1 || gain.dim(0) != self.dim(0) {
            return Err(TensorError::Shape {
                op: "weight_norm",
                lhs: self.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let rows = gain.numel();
        let n = self.numel() / rows.max(1);
        let mut data = Vec::with_capacity(self.numel());
        for r in 0..rows {
            let vr = &self.data()[r * n..][..n];
            let norm: F = vr.iter().map(|&x| x * x).sum::<F>().sqrt() + F::lit(NORM_EPS);
            let s = gain.data()[r] / norm;
            data.extend(vr.iter().map(|&x| x * s));
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), gain.clone()],
            WeightNorm,
        ))
    }
}

fn normalize<F: Element>(v: &mut [F]) {
    let n: F = v.iter().map(|&x| x * x).sum::<F>().sqrt() + F::lit(NORM_EPS);
    v.iter_mut().for_each(|x| *x = *x / n);
}

/// Power iteration for the top singular value of the row-major
/// `rows x cols` matrix `w`.
///
/// `u` (length `rows`) is the persistent left vector and is updated in place.
/// The returned estimate is refined by Rayleigh-Ritz on the Krylov space
/// `{v, A v, A^2 v}` with `A = W^T W` and `v` the final right vector; it is
/// never larger than the true value and never smaller than the plain
/// `u^T W v` estimate.
pub fn power_iteration<F: Element>(w: &[F], rows: usize, cols: usize, u: &mut [F], iters: usize) -> F {
    assert_eq!(w.len(), rows * cols);
    assert_eq!(u.len(), rows);
    let mut v = vec![F::zero(); cols];
    let mut wv = vec![F::zero(); rows];
    for _ in 0..iters.max(1) {
        mat_t_vec(w, rows, cols, u, &mut v);
        normalize(&mut v);
        mat_vec(w, rows, cols, &v, &mut wv);
        u.copy_from_slice(&wv);
        normalize(u);
    }
    let plain: F = u.iter().zip(&wv).map(|(&a, &b)| a * b).sum();
    ritz_refine(w, rows, cols, v).max(plain)
}

fn mat_vec<F: Element>(w: &[F], rows: usize, cols: usize, x: &[F], out: &mut [F]) {
    debug_assert_eq!(out.len(), rows);
    for (r, o) in out.iter_mut().enumerate() {
        *o = w[r * cols..][..cols].iter().zip(x).map(|(&a, &b)| a * b).sum();
    }
}

fn mat_t_vec<F: Element>(w: &[F], rows: usize, cols: usize, x: &[F], out: &mut [F]) {
    out.iter_mut().for_each(|o| *o = F::zero());
    for (r, &xr) in x.iter().enumerate().take(rows) {
        for (o, &wc) in out.iter_mut().zip(&w[r * cols..][..cols]) {
            *o = *o + wc * xr;
        }
    }
}

fn ritz_refine<F: Element>(w: &[F], rows: usize, cols: usize, v: Vec<F>) -> F {
    let dot = |a: &[F], b: &[F]| a.iter().zip(b).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum::<f64>();
    let mut tmp = vec![F::zero(); rows];
    let mut apply = |x: &[F]| {
        let mut y = vec![F::zero(); cols];
        mat_vec(w, rows, cols, x, &mut tmp);
        mat_t_vec(w, rows, cols, &tmp, &mut y);
        y
    };
    // Orthonormal basis by modified Gram-Schmidt, dropping dependent vectors.
    let mut basis: Vec<Vec<F>> = Vec::with_capacity(3);
    let mut next = v;
    for _ in 0..3 {
        let mut q = next.clone();
        // Two passes: the Krylov vectors are nearly parallel once converged.
        for _ in 0..2 {
            for b in &basis {
                let c = F::lit(dot(&q, b));
                q.iter_mut().zip(b).for_each(|(x, &y)| *x = *x - c * y);
            }
        }
        let n = dot(&q, &q).sqrt();
        if n <= 1e-7 * dot(&next, &next).sqrt().max(f64::MIN_POSITIVE) {
            break;
        }
        q.iter_mut().for_each(|x| *x = *x / F::lit(n));
        next = apply(&q);
        basis.push(q);
    }
    if basis.is_empty() {
        return F::zero();
    }
    // Projected Gram matrix Q^T A Q, symmetric k x k with k <= 3.
    let images: Vec<Vec<F>> = basis.iter().map(|q| apply(q)).collect();
    let k = basis.len();
    let mut g = [[0.0f64; 3]; 3];
    for i in 0..k {
        for j in 0..k {
            g[i][j] = 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i]));
        }
    }
    F::lit(jacobi_max_eigen(&mut g, k).max(0.0).sqrt())
}

/// Largest eigenvalue of a small symmetric matrix by cyclic Jacobi sweeps.
fn jacobi_max_eigen(a: &mut [[f64; 3]; 3], k: usize) -> f64 {
    for _ in 0..50 {
        let off: f64 = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut().take(k) {
                    let (arp, arq) = (row[p], row[q]);
                    row[p] = c * arp - s * arq;
                    row[q] = s * arp + c * arq;
                }
                let (lo, hi) = a.split_at_mut(q);
                for (apr, aqr) in lo[p].iter_mut().zip(hi[0].iter_mut()).take(k) {
                    let (x, y) = (*apr, *aqr);
                    *apr = c * x - s * y;
                    *aqr = s * x + c * y;
                }
            }
        }
    }
    (0..k).map(|i| a[i][i]).fold(f64::NEG_INFINITY, f64::max)
}

impl<F: Element> Tensor<F> {
    /// `W / max(sigma, eps)` where `sigma` comes from `iters` power-iteration
    /// rounds on the persistent left vector `u`. The weight is viewed as
    /// `[C_out, rest]`; `sigma` is a constant in the backward pass.
    pub fn spectral_norm(&self, u: &mut [F], iters: usize) -> Result<(Tensor<F>, F)> {
        let rows = self.shape().first().copied().unwrap_or(1);
        if rows == 0 || u.len() != rows {
            return Err(TensorError::Shape {
                op: "spectral_norm",
                lhs: self.shape().to_vec(),
                rhs: vec![u.len()],
            });
        }
        let sigma = power_iteration(self.data(), rows, self.numel() / rows, u, iters);
        Ok((self.scale_by_sigma(sigma), sigma))
    }

    /// Divides by a fixed singular-value estimate (guarded by `NORM_EPS`).
    pub fn scale_by_sigma(&self, sigma: F) -> Tensor<F> {
        self.scale(1.0 / sigma.as_f64().max(NORM_EPS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_norm_examples() {
        let v = Tensor::<f64>::new(&[1, 2], vec![3.0, 4.0]).unwrap();
        let w = v.weight_norm(&Tensor::new(&[1], vec![5.0]).unwrap()).unwrap();
        assert!((w.data()[0] - 3.0).abs() < 1e-10 && (w.data()[1] - 4.0).abs() < 1e-10);
        let w = v.weight_norm(&Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
        assert!((w.data()[0] - 0.6).abs() < 1e-12 && (w.data()[1] - 0.8).abs() < 1e-12);
        let w = v.weight_norm(&Tensor::new(&[1], vec![0.0]).unwrap()).unwrap();
        assert_eq!(w.data(), &[0.0, 0.0]);
    }

    #[test]
    fn weight_norm_of_zero_direction_is_finite() {
        let v = Tensor::<f64>::variable(&[1, 2], vec![0.0, 0.0]).unwrap();
        let g = Tensor::<f64>::variable(&[1], vec![1.0]).unwrap();
        let w = v.weight_norm(&g).unwrap();
        crate::backward(&w.sum()).unwrap();
        assert!(v.grad().unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let w = [2.0f64, 0.0, 0.0, 1.0];
        let mut u = vec![0.6, 0.8];
        let s = power_iteration(&w, 2, 2, &mut u, 20);
        assert!((s - 2.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn power_iteration_on_zero_matrix_is_zero() {
        let mut u = vec![1.0, 0.0];
        let s = power_iteration(&[0.0f64; 4], 2, 2, &mut u, 5);
        assert_eq!(s, 0.0);
    }
}
