//! Reverse-mode tape.
//!
//! Every op is coarse (a whole conv layer, a whole LSTM direction) and
//! carries a hand-written backward. Nodes are appended in evaluation order,
//! so walking the tape backwards is a valid topological order.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Backward rule for one op.
pub(crate) trait Backward<S: Real> {
    /// Gradients for each input, in input order. `None` means "no gradient".
    fn backward(
        &self,
        inputs: &[&Tensor<S>],
        output: &Tensor<S>,
        grad: &[S],
    ) -> Vec<Option<Vec<S>>>;
}

struct Node<S: Real> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward<S>>>,
    requires_grad: bool,
}

pub struct Graph<S: Real> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(
        &mut self,
        value: Tensor<S>,
        inputs: Vec<Var>,
        op: Box<dyn Backward<S>>,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            inputs,
            op: if requires_grad { Some(op) } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<S>> {
        self.nodes[v.0].grad.take()
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::validation(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.nodes[loss.0].grad = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.as_ref() else {
                continue;
            };
            let Some(op) = self.nodes[i].op.as_ref() else {
                continue;
            };
            let node = &self.nodes[i];
            let inputs: Vec<&Tensor<S>> =
                node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let grads = op.backward(&inputs, &node.value, grad);
            let targets = node.inputs.clone();
            for (v, g) in targets.into_iter().zip(grads) {
                let Some(g) = g else { continue };
                let target = &mut self.nodes[v.0];
                if !target.requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), target.value.len());
                match target.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => target.grad = Some(g),
                }
            }
            // Interior gradients are no longer needed once propagated.
            if self.nodes[i].op.is_some() && i != loss.0 {
                self.nodes[i].grad = None;
            }
        }
        Ok(())
    }
}
