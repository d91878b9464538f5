use std::fmt;
use std::sync::Mutex;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Which optimizer / stop-gradient partition a parameter belongs to.
///
/// Generator weights are `Theta`. A discriminator is split into a feature
/// extractor (`Phi`) and its final linear projection (`Omega`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Theta,
    Phi,
    Omega,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::Theta => "theta",
            ParamGroup::Phi => "phi",
            ParamGroup::Omega => "omega",
        })
    }
}

impl ParamGroup {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "theta" => Some(ParamGroup::Theta),
            "phi" => Some(ParamGroup::Phi),
            "omega" => Some(ParamGroup::Omega),
            _ => None,
        }
    }
}

/// Named trainable tensor.
pub struct Parameter<F: Element> {
    name: String,
    group: ParamGroup,
    value: Tensor<F>,
}

impl<F: Element> Parameter<F> {
    pub fn new(name: impl Into<String>, group: ParamGroup, shape: &[usize], data: Vec<F>) -> Result<Self> {
        Ok(Parameter {
            name: name.into(),
            group,
            value: Tensor::variable(shape, data)?,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }

    pub fn set_group(&mut self, group: ParamGroup) {
        self.group = group;
    }

    /// Current value; feed this into operations during a forward pass.
    pub fn tensor(&self) -> &Tensor<F> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[F] {
        self.value.data()
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.value.grad()
    }

    pub fn zero_grad(&self) {
        self.value.zero_grad();
    }

    pub fn set_grad(&self, grad: Option<Vec<F>>) {
        self.value.set_grad(grad);
    }

    /// Replaces the values, keeping the shape and the gradient requirement.
    pub fn set_data(&mut self, data: Vec<F>) -> Result<()> {
        if data.len() != self.value.numel() {
            return Err(TensorError::Shape {
                op: "set_data",
                lhs: self.shape().to_vec(),
                rhs: vec![data.len()],
            });
        }
        let t = Tensor::new(self.shape(), data)?;
        self.value = if self.value.requires_grad() { t.as_variable() } else { t };
        Ok(())
    }

    /// Swaps in an arbitrary tensor of the same shape (gradient checks feed
    /// their probe point through here).
    pub fn replace(&mut self, value: Tensor<F>) -> Result<()> {
        if value.shape() != self.shape() {
            return Err(TensorError::Shape {
                op: "replace",
                lhs: self.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.value = value;
        Ok(())
    }

    /// Frozen parameters still take part in the forward pass but no
    /// gradient is recorded for them.
    pub fn set_requires_grad(&mut self, on: bool) {
        if on != self.value.requires_grad() {
            self.value = if on { self.value.as_variable() } else { self.value.detach() };
        }
    }
}

/// Non-trainable state that must survive a checkpoint (power-iteration
/// vectors, cached estimates).
pub struct Buffer<F: Element> {
    name: String,
    data: Mutex<Vec<F>>,
}

impl<F: Element> Buffer<F> {
    pub fn new(name: impl Into<String>, data: Vec<F>) -> Self {
        Buffer {
            name: name.into(),
            data: Mutex::new(data),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get(&self) -> Vec<F> {
        self.data.lock().expect("buffer lock").clone()
    }

    pub fn len(&self) -> usize {
        self.data.lock().expect("buffer lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn set(&self, data: Vec<F>) -> Result<()> {
        let mut slot = self.data.lock().expect("buffer lock");
        if slot.len() != data.len() {
            return Err(TensorError::Shape {
                op: "buffer",
                lhs: vec![slot.len()],
                rhs: vec![data.len()],
            });
        }
        *slot = data;
        Ok(())
    }

    pub fn with_mut<R>(&self, f: impl FnOnce(&mut [F]) -> R) -> R {
        f(&mut self.data.lock().expect("buffer lock"))
    }
}

/// A network that owns parameters and (optionally) buffers.
pub trait Module<F: Element> {
    fn parameters(&self) -> Vec<&Parameter<F>>;

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>>;

    fn buffers(&self) -> Vec<&Buffer<F>> {
        Vec::new()
    }

    fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<F>> {
        self.parameters_mut().into_iter().find(|p| p.name() == name)
    }

    fn zero_grad(&self) {
        self.parameters().iter().for_each(|p| p.zero_grad());
    }

    fn set_requires_grad(&mut self, on: bool) {
        self.parameters_mut().into_iter().for_each(|p| p.set_requires_grad(on));
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.data().len()).sum()
    }
}
