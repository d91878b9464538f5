use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::element::Element;
use crate::error::{Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the op inputs, the forward output values and the
/// gradient with respect to the output, and returns one optional gradient per
/// input (same order, same length as that input). Returning `None` for an
/// input that does not require a gradient skips the work.
pub trait BackwardOp<F: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[Tensor<F>], output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>>;
}

pub(crate) struct GradFn<F: Element> {
    pub(crate) inputs: Vec<Tensor<F>>,
    pub(crate) op: Box<dyn BackwardOp<F>>,
}

pub(crate) struct Node<F: Element> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Arc<Vec<F>>,
    pub(crate) requires_grad: bool,
    pub(crate) grad_fn: Mutex<Option<GradFn<F>>>,
    pub(crate) grad: Mutex<Option<Vec<F>>>,
}

/// Immutable n-dimensional array, optionally part of a recorded graph.
///
/// Cloning is cheap (reference counted). Values never change after creation;
/// parameters are updated by swapping in a new leaf tensor.
pub struct Tensor<F: Element> {
    pub(crate) node: Arc<Node<F>>,
}

impl<F: Element> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<F: Element> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<F> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Element> Tensor<F> {
    fn make(shape: Vec<usize>, data: Arc<Vec<F>>, requires_grad: bool, grad_fn: Option<GradFn<F>>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad_fn: Mutex::new(grad_fn),
                grad: Mutex::new(None),
            }),
        }
    }

    /// Constant tensor; fails when the shape does not match the data length.
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::Shape {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::make(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Leaf tensor that accumulates a gradient during [`crate::backward`].
    pub fn variable(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(t.as_variable())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        Self::make(shape.to_vec(), Arc::new(vec![value; numel_of(shape)]), false, None)
    }

    pub fn scalar(value: F) -> Self {
        Self::make(vec![], Arc::new(vec![value]), false, None)
    }

    /// Output of a recorded operation. The backward rule is kept only when
    /// recording is enabled and some input requires a gradient.
    pub fn from_op(
        shape: Vec<usize>,
        data: Vec<F>,
        inputs: Vec<Tensor<F>>,
        op: impl BackwardOp<F> + 'static,
    ) -> Self {
        assert_eq!(
            numel_of(&shape),
            data.len(),
            "{}: output shape {:?} does not match data length {}",
            op.name(),
            shape,
            data.len()
        );
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let grad_fn = GradFn {
                inputs,
                op: Box::new(op),
            };
            Self::make(shape, Arc::new(data), true, Some(grad_fn))
        } else {
            Self::make(shape, Arc::new(data), false, None)
        }
    }

    /// Same-data view recorded as an identity on the flat buffer (reshape).
    pub(crate) fn view_op(&self, shape: Vec<usize>, op: impl BackwardOp<F> + 'static) -> Self {
        let track = is_grad_enabled() && self.requires_grad();
        let data = Arc::clone(&self.node.data);
        if track {
            let grad_fn = GradFn {
                inputs: vec![self.clone()],
                op: Box::new(op),
            };
            Self::make(shape, data, true, Some(grad_fn))
        } else {
            Self::make(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.node.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.node.data.as_ref().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.lock().expect("grad_fn lock").is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        self.node.data[0]
    }

    /// Constant tensor sharing this tensor's data; gradients stop here.
    pub fn detach(&self) -> Self {
        Self::make(self.node.shape.clone(), Arc::clone(&self.node.data), false, None)
    }

    /// Fresh leaf sharing this tensor's data that requires a gradient.
    pub fn as_variable(&self) -> Self {
        Self::make(self.node.shape.clone(), Arc::clone(&self.node.data), true, None)
    }

    /// Accumulated gradient of a leaf, if any was produced.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    pub fn set_grad(&self, grad: Option<Vec<F>>) {
        if let Some(g) = &grad {
            assert_eq!(g.len(), self.numel(), "set_grad: length mismatch");
        }
        *self.node.grad.lock().expect("grad lock") = grad;
    }

    pub(crate) fn accumulate_grad(&self, g: &[F]) {
        let mut slot = self.node.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + *b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Fails with the given label when any value is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite(what.to_string()))
        }
    }

    pub(crate) fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(TensorError::Shape {
                op,
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            })
        }
    }
}
