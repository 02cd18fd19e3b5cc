//! Named parameters with optimizer state, and the per-step binding of
//! parameters into a [`Graph`].

use std::collections::HashMap;

use crate::error::{AdError, AdResult};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Initializer tag, kept for inspection.
    pub init: String,
    /// Whether decoupled weight decay applies (off for biases and norms).
    pub decay: bool,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Parameters in insertion order, which is also checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, init: &str, decay: bool) -> AdResult<ParamId> {
        if self.index.contains_key(name) {
            return Err(AdError::DuplicateParam(name.to_string()));
        }
        let n = value.numel();
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            init: init.to_string(),
            decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// A graph plus the parameters bound into it so far. Parameters are bound on
/// first use, as gradient-receiving inputs in training mode and as
/// constants in inference mode.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Session<'a> {
    pub fn train(store: &'a ParamStore) -> Self {
        Session { graph: Graph::new(), store, bound: vec![None; store.len()], trainable: true }
    }

    pub fn inference(store: &'a ParamStore) -> Self {
        Session { graph: Graph::new(), store, bound: vec![None; store.len()], trainable: false }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param_id(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).value.clone();
        let v = if self.trainable { self.graph.input(t) } else { self.graph.constant(t) };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn param(&mut self, name: &str) -> AdResult<Var> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| AdError::invalid("session", format!("unknown parameter {name:?}")))?;
        Ok(self.param_id(id))
    }

    /// One gradient slot per parameter (`None` for parameters not used).
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.bound.iter().map(|b| b.and_then(|v| grads.take(v))).collect()
    }
}
