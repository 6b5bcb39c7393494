//! Tape-based reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles together
//! with a closure that maps the output gradient to parent gradients. Calling
//! [`Graph::backward`] replays the tape in reverse. Operations are coarse
//! (a whole convolution, a whole recurrent sweep, a whole attention head), so
//! the tape stays short even for large activations.
//!
//! An inference graph (see [`Graph::inference`]) never stores closures or
//! parent links, so intermediate values are dropped as soon as their handles
//! go out of scope.

mod attention;
mod elementwise;
mod linalg;
mod norm;
mod shape;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

use crate::params::ParamStore;

pub use elementwise::{sigmoid, softplus};
pub use shape::{concat, sum_to_shape};

/// Dense dynamic-rank array used for every activation and parameter.
pub type Tensor = ArrayD<f64>;

/// Maps an output gradient to one optional gradient per parent. The flag
/// slice tells the closure which parents actually need a gradient.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Operation tape.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
    params: RefCell<HashMap<String, usize>>,
    buffer_updates: RefCell<Vec<(String, Tensor)>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records backward closures.
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// A graph that only evaluates values.
    pub fn inference() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled,
            params: RefCell::new(HashMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes held by every value recorded so far (a proxy for activation
    /// memory).
    pub fn value_bytes(&self) -> usize {
        self.nodes.borrow().iter().map(|n| n.value.len() * std::mem::size_of::<f64>()).sum()
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>, requires_grad: bool) -> Var<'_> {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
            requires_grad,
        });
        Var { graph: self, id }
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, false)
    }

    /// Input that receives a gradient (used for gradient checks on inputs).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let rg = self.grad_enabled;
        self.push(value, Vec::new(), None, rg)
    }

    /// Registers (once per graph) the named parameter of `store`.
    ///
    /// Panics when the name is unknown: parameter names are fixed by the
    /// model layout, so a miss is a programming error.
    pub fn param(&self, store: &ParamStore, name: &str) -> Var<'_> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Var { graph: self, id };
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .clone();
        let v = self.leaf(value);
        self.params.borrow_mut().insert(name.to_string(), v.id);
        v
    }

    /// Records a derived value. `backward` is dropped in inference graphs or
    /// when no parent requires a gradient.
    pub(crate) fn op<F>(&self, value: Tensor, parents: &[Var<'_>], backward: F) -> Var<'_>
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        if requires_grad {
            let ids = parents.iter().map(|p| p.id).collect();
            self.push(value, ids, Some(Box::new(backward)), true)
        } else {
            self.push(value, Vec::new(), None, false)
        }
    }

    /// Queues a non-trainable buffer update (batch-norm running statistics).
    pub(crate) fn stash_buffer(&self, name: &str, value: Tensor) {
        self.buffer_updates.borrow_mut().push((name.to_string(), value));
    }

    /// Drains the queued buffer updates in recording order.
    pub fn take_buffer_updates(&self) -> Vec<(String, Tensor)> {
        std::mem::take(&mut *self.buffer_updates.borrow_mut())
    }

    /// Back-propagates from a scalar `root`, consuming the recorded closures.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(root.graph, self), "root belongs to another graph");
        let n = root.id + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.len()];
        let root_value = root.value();
        assert_eq!(root_value.len(), 1, "backward needs a scalar root");
        grads[root.id] = Some(Tensor::ones(root_value.raw_dim()));

        for id in (0..n).rev() {
            let (backward, parents) = {
                let mut nodes = self.nodes.borrow_mut();
                let node = &mut nodes[id];
                if node.backward.is_none() {
                    continue;
                }
                (node.backward.take(), node.parents.clone())
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = {
                let nodes = self.nodes.borrow();
                parents.iter().map(|&p| nodes[p].requires_grad).collect()
            };
            let backward = backward.expect("checked above");
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for ((&p, pg), &need) in parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                let pg = if pg.is_standard_layout() {
                    pg
                } else {
                    pg.as_standard_layout().into_owned()
                };
                match &mut grads[p] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients {
            grads,
            params: self.params.borrow().clone(),
        }
    }
}

/// Result of [`Graph::backward`]: gradients of leaves and parameters.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<String, usize>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|&id| self.grads[id].as_ref())
    }

    /// Parameter gradients keyed by name; parameters the root does not depend
    /// on are omitted.
    pub fn into_param_grads(mut self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, id) in self.params {
            if let Some(g) = self.grads[id].take() {
                out.insert(name, g);
            }
        }
        out
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn ndim(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.ndim()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", v.shape());
        *v.iter().next().expect("one element")
    }

    pub(crate) fn same_graph(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
    }
}

pub(crate) fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(IxDyn(shape))
}

#[cfg(test)]
mod tests;
