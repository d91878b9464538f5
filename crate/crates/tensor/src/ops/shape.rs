use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::{reflect_index, PadMode};
use crate::tensor::{BackwardOp, Tensor};

struct Reshape;

impl<F: Element> BackwardOp<F> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        vec![Some(grad.to_vec())]
    }
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct Slice {
    axis: usize,
    start: usize,
}

impl<F: Element> BackwardOp<F> for Slice {
    fn name(&self) -> &'static str {
        "slice"
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let x = &inputs[0];
        let (outer, n, inner) = split_axis(x.shape(), self.axis);
        let len = grad.len() / (outer * inner).max(1);
        let mut g = vec![F::zero(); x.numel()];
        for o in 0..outer {
            let src = &grad[o * len * inner..(o + 1) * len * inner];
            let dst = &mut g[(o * n + self.start) * inner..(o * n + self.start + len) * inner];
            dst.copy_from_slice(src);
        }
        vec![Some(g)]
    }
}

struct Concat {
    axis: usize,
}

impl<F: Element> BackwardOp<F> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let (outer, _, inner) = split_axis(inputs[0].shape(), self.axis);
        let total: usize = inputs.iter().map(|t| t.dim(self.axis)).sum();
        let mut offset = 0;
        inputs
            .iter()
            .map(|t| {
                let n = t.dim(self.axis);
                let g = t.requires_grad().then(|| {
                    let mut g = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        g.extend_from_slice(&grad[base..base + n * inner]);
                    }
                    g
                });
                offset += n;
                g
            })
            .collect()
    }
}

struct PadLast {
    left: usize,
    mode: PadMode,
}

impl<F: Element> BackwardOp<F> for PadLast {
    fn name(&self) -> &'static str {
        "pad"
    }

    fn backward(&self, inputs: &[Tensor<F>], output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let x = &inputs[0];
        let n = *x.shape().last().expect("rank >= 1");
        let rows = x.numel() / n.max(1);
        let m = output.len() / rows.max(1);
        let mut g = vec![F::zero(); x.numel()];
        for r in 0..rows {
            let src = &grad[r * m..(r + 1) * m];
            let dst = &mut g[r * n..(r + 1) * n];
            for (j, &v) in src.iter().enumerate() {
                let i = j as isize - self.left as isize;
                let idx = if (0..n as isize).contains(&i) {
                    i as usize
                } else {
                    match self.mode {
                        PadMode::Zeros => continue,
                        PadMode::Reflect => reflect_index(i, n),
                    }
                };
                dst[idx] = dst[idx] + v;
            }
        }
        vec![Some(g)]
    }
}

impl<F: Element> Tensor<F> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(self.view_op(shape.to_vec(), Reshape))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<F>> {
        if axis >= self.rank() || start > end || end > self.dim(axis) {
            return Err(TensorError::config(
                "slice",
                format!("range {start}..{end} on axis {axis} of {:?}", self.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let len = end - start;
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(shape, data, vec![self.clone()], Slice { axis, start }))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::config("concat", "no inputs"))?;
        for p in parts {
            let ok = p.rank() == first.rank()
                && axis < p.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let total: usize = parts.iter().map(|t| t.dim(axis)).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = p.dim(axis);
                data.extend_from_slice(&p.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(shape, data, parts.to_vec(), Concat { axis }))
    }

    /// Pads the last axis with `left`/`right` extra samples.
    pub fn pad_last(&self, left: usize, right: usize, mode: PadMode) -> Result<Tensor<F>> {
        let n = *self
            .shape()
            .last()
            .ok_or_else(|| TensorError::config("pad", "scalar input"))?;
        if n == 0 && (left > 0 || right > 0) && mode == PadMode::Reflect {
            return Err(TensorError::config("pad", "cannot reflect an empty axis"));
        }
        let rows = self.numel() / n.max(1);
        let m = n + left + right;
        let src = self.data();
        let mut data = Vec::with_capacity(rows * m);
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            for j in 0..m {
                let i = j as isize - left as isize;
                let v = if (0..n as isize).contains(&i) {
                    row[i as usize]
                } else {
                    match mode {
                        PadMode::Zeros => F::zero(),
                        PadMode::Reflect => row[reflect_index(i, n)],
                    }
                };
                data.push(v);
            }
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = m;
        Ok(Tensor::from_op(shape, data, vec![self.clone()], PadLast { left, mode }))
    }
}
