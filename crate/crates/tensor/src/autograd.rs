use std::collections::{HashMap, HashSet};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Recorded operations reachable from a loss, in execution order.
pub struct Tape<F: Element> {
    nodes: Vec<Tensor<F>>,
}

impl<F: Element> Tape<F> {
    /// Collects every recorded operation the loss depends on.
    pub fn from_loss(loss: &Tensor<F>) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![loss.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            let guard = t.node.grad_fn.lock().expect("grad_fn lock");
            if let Some(gf) = guard.as_ref() {
                for input in &gf.inputs {
                    if input.requires_grad() && !seen.contains(&input.id()) {
                        stack.push(input.clone());
                    }
                }
                drop(guard);
                nodes.push(t);
            }
        }
        // Ids are handed out at creation, so ascending id is execution order.
        nodes.sort_by_key(|t| t.id());
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .map(|t| {
                t.node
                    .grad_fn
                    .lock()
                    .expect("grad_fn lock")
                    .as_ref()
                    .map(|g| g.op.name())
                    .unwrap_or("<released>")
            })
            .collect()
    }

    /// Propagates `d loss / d loss = 1` backwards and releases the graph.
    ///
    /// Returns the names of the visited operations in visiting order, which
    /// is the exact reverse of execution order.
    pub fn run_backward(self, loss: &Tensor<F>) -> Result<Vec<&'static str>> {
        if loss.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.requires_grad() {
            return Err(TensorError::Usage(
                "backward on a tensor that does not require grad (empty tape)".into(),
            ));
        }
        if self.nodes.is_empty() {
            // The loss itself is a leaf variable.
            loss.accumulate_grad(&[F::one()]);
            return Ok(Vec::new());
        }
        let mut pending: HashMap<u64, Vec<F>> = HashMap::new();
        pending.insert(loss.id(), vec![F::one()]);
        let mut visited = Vec::with_capacity(self.nodes.len());
        for t in self.nodes.iter().rev() {
            let Some(grad) = pending.remove(&t.id()) else {
                continue;
            };
            let Some(gf) = t.node.grad_fn.lock().expect("grad_fn lock").take() else {
                continue;
            };
            visited.push(gf.op.name());
            let input_grads = gf.op.backward(&gf.inputs, t.data(), &grad);
            debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.op.name());
            for (input, g) in gf.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.len(), input.numel(), "{} grad length", gf.op.name());
                if input.is_leaf() {
                    input.accumulate_grad(&g);
                } else {
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                        None => {
                            pending.insert(input.id(), g);
                        }
                    }
                }
            }
        }
        Ok(visited)
    }
}

/// Backpropagates from a scalar loss into every reachable leaf variable.
///
/// Gradients are summed over all paths and added to whatever the leaves
/// already hold. The recorded graph is released afterwards.
pub fn backward<F: Element>(loss: &Tensor<F>) -> Result<()> {
    Tape::from_loss(loss).run_backward(loss).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_products_gives_constant_input() {
        let w = Tensor::<f64>::variable(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = w.mul(&x).unwrap().sum();
        backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn squared_offset_derivative() {
        let w = Tensor::<f64>::variable(&[1], vec![5.0]).unwrap();
        let loss = w.add_scalar(-3.0).square().sum();
        backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn two_uses_accumulate() {
        let w = Tensor::<f64>::variable(&[1], vec![2.0]).unwrap();
        // loss = w*w + 3w  ->  2w + 3 = 7
        let loss = w.mul(&w).unwrap().add(&w.scale(3.0)).unwrap().sum();
        backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_usage_error() {
        let w = Tensor::<f64>::variable(&[2], vec![1.0, 2.0]).unwrap();
        let err = backward(&w.square()).unwrap_err();
        assert!(matches!(err, TensorError::Usage(_)));
    }

    #[test]
    fn constant_loss_is_a_usage_error() {
        let x = Tensor::<f64>::new(&[1], vec![1.0]).unwrap();
        assert!(backward(&x.square().sum()).is_err());
    }

    #[test]
    fn visits_in_reverse_execution_order_and_releases() {
        let w = Tensor::<f64>::variable(&[2], vec![1.0, 2.0]).unwrap();
        let a = w.tanh();
        let b = a.square();
        let loss = b.sum();
        let tape = Tape::from_loss(&loss);
        assert_eq!(tape.op_names(), vec!["tanh", "square", "sum"]);
        let visited = tape.run_backward(&loss).unwrap();
        assert_eq!(visited, vec!["sum", "square", "tanh"]);
        assert!(Tape::from_loss(&loss).is_empty());
    }
}
