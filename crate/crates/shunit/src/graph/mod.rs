//! Reverse-mode automatic differentiation on dynamically shaped `f64` arrays.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! the computed value and a backward closure. [`Tape::backward`] walks the
//! node list in reverse and accumulates gradients for every leaf created
//! with [`Tape::leaf`]. Leaves created with [`Tape::constant`] never receive
//! gradients; gradient flow stops there.
//!
//! All operations are deterministic: same inputs, same node order, bit-equal
//! results.

mod image;
mod ops;

pub use image::PadMode;
pub use ops::sum_vars;

use ndarray::ArrayD;
use std::cell::RefCell;
use std::rc::Rc;

type BackFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<(usize, ArrayD<f64>)>>;

struct Node {
    value: Rc<ArrayD<f64>>,
    back: Option<BackFn>,
    requires_grad: bool,
}

/// Wengert list for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<f64>, back: Option<BackFn>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            back,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Differentiable input: gradients accumulate here.
    pub fn leaf(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, None, true)
    }

    /// Non-differentiable input: backward stops here.
    pub fn constant(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, None, false)
    }

    /// Leaf sharing an existing allocation (cheap for parameter binding).
    pub fn leaf_shared(&self, value: Rc<ArrayD<f64>>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            back: None,
            requires_grad: true,
        });
        Var { tape: self, id }
    }

    pub fn constant_shared(&self, value: Rc<ArrayD<f64>>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            back: None,
            requires_grad: false,
        });
        Var { tape: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Record an operation. `parents` lists the argument nodes in the order
    /// the backward closure reports their gradients.
    fn op(
        &self,
        value: ArrayD<f64>,
        parents: &[usize],
        back: impl Fn(&ArrayD<f64>) -> Vec<(usize, ArrayD<f64>)> + 'static,
    ) -> Var<'_> {
        self.op_shared(Rc::new(value), parents, back)
    }

    /// Like [`Tape::op`] but the output allocation is shared, so the
    /// backward closure may capture a clone of it.
    fn op_shared(
        &self,
        value: Rc<ArrayD<f64>>,
        parents: &[usize],
        back: impl Fn(&ArrayD<f64>) -> Vec<(usize, ArrayD<f64>)> + 'static,
    ) -> Var<'_> {
        let requires_grad = parents.iter().any(|&p| self.requires_grad(p));
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            back: if requires_grad {
                Some(Box::new(back))
            } else {
                None
            },
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Backpropagate from a scalar root. Returns the accumulated gradients
    /// of every reachable node that requires one.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.len(),
            1,
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = Vec::with_capacity(root.id + 1);
        grads.resize_with(root.id + 1, || None);
        grads[root.id] = Some(ArrayD::ones(nodes[root.id].value.shape()));
        for id in (0..=root.id).rev() {
            if grads[id].is_none() {
                continue;
            }
            let node = &nodes[id];
            let Some(back) = &node.back else { continue };
            let g = grads[id].take().expect("grad present");
            for (parent, contrib) in back(&g) {
                if !nodes[parent].requires_grad {
                    continue;
                }
                // keep every accumulated gradient in standard layout so
                // backward closures may reshape and slice freely
                let contrib = if contrib.is_standard_layout() {
                    contrib
                } else {
                    contrib.as_standard_layout().into_owned()
                };
                match &mut grads[parent] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `var`, if any reached it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&ArrayD<f64>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// L2 norm of the gradient at `var`; zero when no gradient reached it.
    pub fn norm(&self, var: Var<'_>) -> f64 {
        self.wrt(var)
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Snapshot of this node's value.
    pub fn value(&self) -> Rc<ArrayD<f64>> {
        self.tape.value_of(self.id)
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v.iter().copied().next().unwrap()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Cut gradient flow: same value, no history.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant_shared(self.value())
    }

    /// Record a single-parent operation.
    fn unary(
        self,
        value: ArrayD<f64>,
        back: impl Fn(&ArrayD<f64>) -> ArrayD<f64> + 'static,
    ) -> Var<'t> {
        let id = self.id;
        self.tape.op(value, &[id], move |g| vec![(id, back(g))])
    }
}
