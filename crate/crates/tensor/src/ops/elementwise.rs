use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::{BackwardOp, Tensor};

#[derive(Clone, Copy)]
enum Unary {
    Neg,
    Scale(f64),
    AddScalar(f64),
    Square,
    Sqrt,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Abs,
    LeakyRelu(f64),
    ClampMin(f64),
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Abs => "abs",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::ClampMin(_) => "clamp_min",
        }
    }

    fn forward<F: Element>(self, x: F) -> F {
        match self {
            Unary::Neg => -x,
            Unary::Scale(c) => x * F::lit(c),
            Unary::AddScalar(c) => x + F::lit(c),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Abs => x.abs(),
            Unary::LeakyRelu(s) => {
                if x > F::zero() {
                    x
                } else {
                    x * F::lit(s)
                }
            }
            Unary::ClampMin(c) => {
                let c = F::lit(c);
                if x < c {
                    c
                } else {
                    x
                }
            }
        }
    }

    /// Local derivative given input `x` and output `y`.
    fn derivative<F: Element>(self, x: F, y: F) -> F {
        match self {
            Unary::Neg => -F::one(),
            Unary::Scale(c) => F::lit(c),
            Unary::AddScalar(_) => F::one(),
            Unary::Square => x + x,
            Unary::Sqrt => F::lit(0.5) / y,
            Unary::Exp => y,
            Unary::Ln => F::one() / x,
            Unary::Tanh => F::one() - y * y,
            Unary::Sigmoid => y * (F::one() - y),
            Unary::Abs => {
                if x > F::zero() {
                    F::one()
                } else if x < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            }
            // The negative-side slope is used at exactly zero.
            Unary::LeakyRelu(s) => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::lit(s)
                }
            }
            Unary::ClampMin(c) => {
                if x < F::lit(c) {
                    F::zero()
                } else {
                    F::one()
                }
            }
        }
    }
}

fn sigmoid<F: Element>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

struct UnaryOp(Unary);

impl<F: Element> BackwardOp<F> for UnaryOp {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, inputs: &[Tensor<F>], output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let x = inputs[0].data();
        let g = x
            .iter()
            .zip(output)
            .zip(grad)
            .map(|((&x, &y), &g)| g * self.0.derivative(x, y))
            .collect();
        vec![Some(g)]
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

struct BinaryOp(Binary);

impl<F: Element> BackwardOp<F> for BinaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let want_a = a.requires_grad();
        let want_b = b.requires_grad();
        match self.0 {
            Binary::Add => vec![want_a.then(|| grad.to_vec()), want_b.then(|| grad.to_vec())],
            Binary::Sub => vec![
                want_a.then(|| grad.to_vec()),
                want_b.then(|| grad.iter().map(|&g| -g).collect()),
            ],
            Binary::Mul => vec![
                want_a.then(|| grad.iter().zip(b.data()).map(|(&g, &y)| g * y).collect()),
                want_b.then(|| grad.iter().zip(a.data()).map(|(&g, &x)| g * x).collect()),
            ],
            Binary::Div => vec![
                want_a.then(|| grad.iter().zip(b.data()).map(|(&g, &y)| g / y).collect()),
                want_b.then(|| {
                    grad.iter()
                        .zip(a.data())
                        .zip(b.data())
                        .map(|((&g, &x), &y)| -g * x / (y * y))
                        .collect()
                }),
            ],
        }
    }
}

struct AddBias;

impl<F: Element> BackwardOp<F> for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let x = &inputs[0];
        let c = x.dim(1);
        let inner: usize = x.shape()[2..].iter().product();
        let gb = inputs[1].requires_grad().then(|| {
            let mut gb = vec![F::zero(); c];
            for (i, chunk) in grad.chunks(inner).enumerate() {
                let acc: F = chunk.iter().copied().sum();
                gb[i % c] = gb[i % c] + acc;
            }
            gb
        });
        vec![x.requires_grad().then(|| grad.to_vec()), gb]
    }
}

impl<F: Element> Tensor<F> {
    fn unary(&self, u: Unary) -> Tensor<F> {
        let data = self.data().iter().map(|&x| u.forward(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], UnaryOp(u))
    }

    fn binary(&self, other: &Tensor<F>, b: Binary, name: &'static str) -> Result<Tensor<F>> {
        self.same_shape(other, name)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&x, &y)| match b {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            })
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            BinaryOp(b),
        ))
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Add, "add")
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Div, "div")
    }

    pub fn neg(&self) -> Tensor<F> {
        self.unary(Unary::Neg)
    }

    pub fn scale(&self, c: f64) -> Tensor<F> {
        self.unary(Unary::Scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<F> {
        self.unary(Unary::AddScalar(c))
    }

    pub fn square(&self) -> Tensor<F> {
        self.unary(Unary::Square)
    }

    pub fn sqrt(&self) -> Tensor<F> {
        self.unary(Unary::Sqrt)
    }

    pub fn exp(&self) -> Tensor<F> {
        self.unary(Unary::Exp)
    }

    pub fn ln(&self) -> Tensor<F> {
        self.unary(Unary::Ln)
    }

    pub fn tanh(&self) -> Tensor<F> {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        self.unary(Unary::Sigmoid)
    }

    /// Subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor<F> {
        self.unary(Unary::Abs)
    }

    /// `max(x, slope * x)`; the derivative at 0 is `slope`.
    pub fn leaky_relu(&self, slope: f64) -> Tensor<F> {
        self.unary(Unary::LeakyRelu(slope))
    }

    /// `max(x, floor)`, with zero gradient where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Tensor<F> {
        self.unary(Unary::ClampMin(floor))
    }

    /// Gated activation unit: `tanh(self) * sigmoid(gate)`.
    pub fn gated(&self, gate: &Tensor<F>) -> Result<Tensor<F>> {
        self.same_shape(gate, "gated_activation")?;
        self.tanh().mul(&gate.sigmoid())
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[B, C, ...]` tensor.
    pub fn add_bias(&self, bias: &Tensor<F>) -> Result<Tensor<F>> {
        if self.rank() < 2 || bias.rank() != 1 || bias.dim(0) != self.dim(1) {
            return Err(TensorError::Shape {
                op: "add_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let c = self.dim(1);
        let inner: usize = self.shape()[2..].iter().product();
        let b = bias.data();
        let mut data = self.to_vec();
        for (i, chunk) in data.chunks_mut(inner.max(1)).enumerate() {
            let v = b[i % c];
            chunk.iter_mut().for_each(|x| *x = *x + v);
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            AddBias,
        ))
    }
}
