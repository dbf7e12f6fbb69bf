//! Append-only operation record for reverse-mode differentiation.
//!
//! Every op pushes one node holding its forward value, the ids of its
//! operands, and a backward rule. Operands always precede the node that uses
//! them, so a single reverse sweep over the node list is a valid topological
//! order. A tape can be swept once; re-running `backward` without recording a
//! fresh graph is rejected.

use super::{EngineError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Everything a backward rule may look at.
pub struct BackwardCtx<'a> {
    /// Forward value of the node being differentiated.
    pub out: &'a Tensor,
    /// dLoss/dOut, same length as `out`.
    pub grad_out: &'a [f32],
    /// Forward values of the operands, in recording order.
    pub inputs: Vec<&'a Tensor>,
    /// Whether each operand needs a gradient. Rules may return `None` for
    /// operands that do not.
    pub needs: Vec<bool>,
}

/// Maps `(out, dOut, operands)` to one optional gradient per operand.
pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f32>>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records a derived node. The backward rule is dropped when no operand
    /// needs a gradient.
    pub fn record(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates d`loss` back to every leaf that requires a gradient.
    /// Gradients accumulate at fan-in points.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, EngineError> {
        if self.consumed {
            return Err(EngineError::TapeConsumed);
        }
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(EngineError::NonScalarLoss(numel));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(rule) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            visited += 1;
            let ctx = BackwardCtx {
                out: &node.value,
                grad_out: &grad_out,
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                needs: node
                    .parents
                    .iter()
                    .map(|&p| self.nodes[p].requires_grad)
                    .collect(),
            };
            let parent_grads = rule(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[p].value.numel());
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // Only leaf gradients survive; intermediates were taken above.
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, visited })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f32]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Number of backward rules that ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}
