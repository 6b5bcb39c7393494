//! Named parameter and buffer storage.

use std::collections::BTreeMap;

use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Tensor, Var};

/// Trainable parameters plus non-trainable buffers, both keyed by a dotted
/// module path (`speech.gm0.cam.fc1.weight`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(!self.params.contains_key(&name), "duplicate parameter `{name}`");
        self.params.insert(name, value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor) {
        match self.buffers.get_mut(name) {
            Some(slot) => *slot = value,
            None => panic!("unknown buffer `{name}`"),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.fill(0.0);
            }
        }
    }

    /// Uniform `U(-bound, bound)` tensor.
    pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Tensor::from_shape_vec(IxDyn(shape), data).expect("shape")
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        Tensor::from_elem(IxDyn(shape), value)
    }
}

/// Forward-pass context: the tape, the parameters, and the mode.
#[derive(Clone, Copy)]
pub struct Ctx<'g> {
    pub graph: &'g Graph,
    pub store: &'g ParamStore,
    pub train: bool,
}

impl<'g> Ctx<'g> {
    pub fn new(graph: &'g Graph, store: &'g ParamStore, train: bool) -> Self {
        Self { graph, store, train }
    }

    pub fn p(&self, name: &str) -> Var<'g> {
        self.graph.param(self.store, name)
    }

    /// Parameter if present (optional biases).
    pub fn try_p(&self, name: &str) -> Option<Var<'g>> {
        self.store.get(name).map(|_| self.p(name))
    }

    pub fn constant(&self, value: Tensor) -> Var<'g> {
        self.graph.constant(value)
    }
}
