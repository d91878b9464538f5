//! Central finite-difference gradient checks (64-bit only).

use crate::autograd::backward;
use crate::error::{Result, TensorError};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many evenly spaced coordinates (all when `None`).
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the backward-pass gradient of scalar `f` at `point` with central
/// differences and returns the worst relative error.
pub fn grad_check<Fun>(f: Fun, point: &Tensor<f64>, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    Fun: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let x = point.detach().as_variable();
    let y = f(&x)?;
    if y.numel() != 1 {
        return Err(TensorError::Usage("grad_check needs a scalar function".into()));
    }
    let analytic = if y.requires_grad() {
        backward(&y)?;
        x.grad().unwrap_or_else(|| vec![0.0; x.numel()])
    } else {
        vec![0.0; x.numel()]
    };
    let n = x.numel();
    let count = opts.max_coords.map_or(n, |m| m.min(n));
    let base = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: count,
    };
    let eval = |data: Vec<f64>| -> Result<f64> {
        let t = Tensor::new(point.shape(), data)?;
        no_grad(|| f(&t)).map(|v| v.item())
    };
    for j in 0..count {
        let i = if count == n { j } else { j * n / count };
        let mut plus = base.clone();
        plus[i] += opts.eps;
        let mut minus = base.clone();
        minus[i] -= opts.eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * opts.eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || j == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_error() {
        let p = Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let r = grad_check(|x| Ok(x.sum()), &p, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let p = Tensor::new(&[4], vec![0.7, -0.4, 1.3, -2.2]).unwrap();
        let w = Tensor::new(&[4], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let r = grad_check(|x| Ok(x.leaky_relu(0.1).mul(&w)?.sum()), &p, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn detects_wrong_derivative() {
        let p = Tensor::new(&[2], vec![0.5, 1.5]).unwrap();
        // d/dx of x.detach() * x is reported as x, true derivative is 2x.
        let r = grad_check(|x| Ok(x.detach().mul(x)?.sum()), &p, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error > 0.4);
    }
}
