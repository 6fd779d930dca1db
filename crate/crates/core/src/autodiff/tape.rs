use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub(crate) struct Node {
    pub(crate) value: Rc<Matrix>,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
}

/// Append-only record of every primitive evaluated in a forward pass.
///
/// Node order is a topological order of the graph, so the reverse sweep
/// simply walks the nodes backwards. A tape is confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("value", &*self.value())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Matrix) -> Tensor<'_> {
        self.leaf(value, true)
    }

    /// Leaf that is treated as a constant by the reverse sweep.
    pub fn constant(&self, value: Matrix) -> Tensor<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Tensor<'_> {
        self.constant(Matrix::scalar(value))
    }

    fn leaf(&self, value: Matrix, needs_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad,
        });
        Tensor {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn push(&self, name: &'static str, value: Matrix, op: Op) -> Result<Tensor<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let mut needs_grad = false;
        op.for_each_input(|i| needs_grad |= nodes[i].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Ok(Tensor {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a 1x1 `root`. Every node reachable from the root
    /// that depends on a parameter gets a gradient; everything else reads
    /// back as zero.
    pub fn backward(&self, root: Tensor<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let (rows, cols) = nodes[root.id].value.shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(nodes.len(), || None);
        if nodes[root.id].needs_grad {
            grads[root.id] = Some(Matrix::scalar(1.0));
        }
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            node.op.backward(&node.value, &g, &nodes, &mut grads)?;
            grads[id] = Some(g);
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients {
            shapes: nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `t`, zero if `t` does not influence the root.
    pub fn get(&self, t: Tensor<'_>) -> Matrix {
        match self.grads.get(t.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[t.id];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, t: Tensor<'_>) -> Matrix {
        match self.grads.get_mut(t.id).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[t.id];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl<'t> Tensor<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.shape(), (1, 1));
        v.data()[0]
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }
}
