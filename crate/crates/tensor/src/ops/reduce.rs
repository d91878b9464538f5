use crate::element::Element;
use crate::tensor::{BackwardOp, Tensor};

struct SumAll {
    scale: f64,
}

impl<F: Element> BackwardOp<F> for SumAll {
    fn name(&self) -> &'static str {
        if self.scale == 1.0 {
            "sum"
        } else {
            "mean"
        }
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let g = grad[0] * F::lit(self.scale);
        vec![Some(vec![g; inputs[0].numel()])]
    }
}

struct SumLast;

impl<F: Element> BackwardOp<F> for SumLast {
    fn name(&self) -> &'static str {
        "sum_last"
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let x = &inputs[0];
        let n = x.shape().last().copied().unwrap_or(1);
        let mut g = Vec::with_capacity(x.numel());
        for &go in grad {
            g.extend(std::iter::repeat_n(go, n));
        }
        vec![Some(g)]
    }
}

struct NormLast;

impl<F: Element> BackwardOp<F> for NormLast {
    fn name(&self) -> &'static str {
        "norm_last"
    }

    fn backward(&self, inputs: &[Tensor<F>], output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let x = &inputs[0];
        let n = x.shape().last().copied().unwrap_or(1).max(1);
        let mut g = Vec::with_capacity(x.numel());
        for ((row, &norm), &go) in x.data().chunks(n).zip(output).zip(grad) {
            // Zero is the minimal-norm subgradient at the origin.
            let s = if norm > F::zero() { go / norm } else { F::zero() };
            g.extend(row.iter().map(|&v| v * s));
        }
        vec![Some(g)]
    }
}

impl<F: Element> Tensor<F> {
    /// Sum of all elements as a 0-d tensor.
    pub fn sum(&self) -> Tensor<F> {
        let s: F = self.data().iter().copied().sum();
        Tensor::from_op(vec![], vec![s], vec![self.clone()], SumAll { scale: 1.0 })
    }

    pub fn mean(&self) -> Tensor<F> {
        let n = self.numel().max(1) as f64;
        let s: F = self.data().iter().copied().sum();
        Tensor::from_op(
            vec![],
            vec![s / F::lit(n)],
            vec![self.clone()],
            SumAll { scale: 1.0 / n },
        )
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(&self) -> Tensor<F> {
        let shape = self.shape();
        let n = shape.last().copied().unwrap_or(1).max(1);
        let data = self.data().chunks(n).map(|c| c.iter().copied().sum()).collect();
        let out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
        Tensor::from_op(out_shape, data, vec![self.clone()], SumLast)
    }

    /// Euclidean norm over the last axis, dropping it.
    pub fn norm_last(&self) -> Tensor<F> {
        let shape = self.shape();
        let n = shape.last().copied().unwrap_or(1).max(1);
        let data = self
            .data()
            .chunks(n)
            .map(|c| c.iter().map(|&v| v * v).sum::<F>().sqrt())
            .collect();
        let out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
        Tensor::from_op(out_shape, data, vec![self.clone()], NormLast)
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn reductions() {
        let x = Tensor::<f64>::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(x.sum().item(), 21.0);
        assert_eq!(x.mean().item(), 3.5);
        let r = x.sum_last();
        assert_eq!(r.shape(), &[2]);
        assert_eq!(r.data(), &[6.0, 15.0]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let x = Tensor::<f64>::variable(&[4], vec![1.0; 4]).unwrap();
        crate::backward(&x.mean()).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn row_norm_and_zero_subgradient() {
        let x = Tensor::<f64>::variable(&[2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let n = x.norm_last();
        assert_eq!(n.data(), &[5.0, 0.0]);
        crate::backward(&n.sum()).unwrap();
        let g = x.grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        assert_eq!(&g[2..], &[0.0, 0.0]);
    }
}
