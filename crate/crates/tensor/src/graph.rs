use std::cell::RefCell;
use std::rc::Rc;

use crate::{Scalar, Tensor};

/// Gradient closure: receives the output gradient and a mask telling which
/// inputs need a gradient; returns one optional gradient per input.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Append-only computation record. Nodes are stored in creation order, which
/// is a valid topological order for the reverse sweep.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    tracking: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Graph that records gradient closures.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            tracking: true,
        }
    }

    /// Graph for inference: no closures are recorded and `leaf` behaves like `constant`.
    pub fn inference() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            tracking: false,
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Input that does not receive a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.constant_rc(Rc::new(t))
    }

    pub fn constant_rc(&self, t: Rc<Tensor<T>>) -> Var<'_, T> {
        let id = self.push_node(Node {
            value: t,
            inputs: Vec::new(),
            backward: None,
            requires_grad: false,
        });
        Var { graph: self, id }
    }

    /// Differentiable input (parameters, or inputs under a gradient check).
    pub fn leaf(&self, t: Tensor<T>) -> Var<'_, T> {
        self.leaf_rc(Rc::new(t))
    }

    pub fn leaf_rc(&self, t: Rc<Tensor<T>>) -> Var<'_, T> {
        let id = self.push_node(Node {
            value: t,
            inputs: Vec::new(),
            backward: None,
            requires_grad: self.tracking,
        });
        Var { graph: self, id }
    }

    pub(crate) fn record(&self, value: Tensor<T>, inputs: &[usize], backward: BackwardFn<T>) -> Var<'_, T> {
        let requires_grad = self.tracking && {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        let id = self.push_node(Node {
            value: Rc::new(value),
            inputs: inputs.to_vec(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        });
        Var { graph: self, id }
    }

    pub(crate) fn value_rc(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var<'_, T>) -> Gradients<T> {
        assert!(std::ptr::eq(output.graph, self), "variable from another graph");
        let nodes = self.nodes.borrow();
        let out_value = &nodes[output.id].value;
        assert_eq!(out_value.numel(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::ones(out_value.shape()));
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.backward {
                Some(f) => {
                    let mask: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
                    let input_grads = f(&g, &mask);
                    debug_assert_eq!(input_grads.len(), node.inputs.len());
                    for ((&inp, ig), &need) in node.inputs.iter().zip(input_grads).zip(&mask) {
                        if !need {
                            continue;
                        }
                        let Some(ig) = ig else { continue };
                        match &mut grads[inp] {
                            Some(acc) => acc.add_assign(&ig),
                            slot @ None => *slot = Some(ig),
                        }
                    }
                }
                None if node.requires_grad => leaf_grads[id] = Some(g),
                None => {}
            }
        }
        Gradients { grads: leaf_grads }
    }
}

/// Gradients of the leaves reached by a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_rc(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    pub(crate) fn same_graph(&self, other: &Var<'g, T>) {
        assert!(std::ptr::eq(self.graph, other.graph), "variables from different graphs");
    }
}
