//! Named parameter storage and per-pass binding onto a [`Graph`].
//!
//! Modules hold [`ParamId`]s into a [`ParamStore`]. Each forward pass opens a
//! [`Session`], which copies the parameters it touches into a fresh graph as
//! leaves and hands their gradients back after `backward`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::{self, ChaCha8Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: String, kind: ParamKind, value: Tensor) -> ParamId {
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, kind, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.entry(id).kind == ParamKind::Trainable).collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Overwrite a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::shape(
                "param_set",
                format!("{}: {:?} vs {:?}", entry.name, entry.value.shape(), value.shape()),
            ));
        }
        entry.value = value;
        Ok(())
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor)>) {
        for (id, value) in updates {
            self.entries[id.0].value = value;
        }
    }
}

/// Builder that registers parameters under a dotted name prefix.
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        Scope {
            prefix: self.full_name(name),
            store: self.store,
            rng: self.rng,
        }
    }

    pub fn full_name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    pub fn add(&mut self, leaf: &str, kind: ParamKind, value: Tensor) -> ParamId {
        let name = self.full_name(leaf);
        self.store.add(name, kind, value)
    }

    /// Kaiming-uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn kaiming(&mut self, leaf: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = rng::uniform(self.rng, n, bound);
        self.add(leaf, ParamKind::Trainable, Tensor::new(shape.to_vec(), data).unwrap())
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], value: f64) -> ParamId {
        self.add(leaf, ParamKind::Trainable, Tensor::full(shape, value))
    }

    pub fn buffer(&mut self, leaf: &str, shape: &[usize], value: f64) -> ParamId {
        self.add(leaf, ParamKind::Buffer, Tensor::full(shape, value))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
pub struct Session<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    grads: bool,
    stat_updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Session<'a> {
    /// `grads` decides whether trainable parameters become gradient leaves.
    pub fn new(store: &'a ParamStore, mode: Mode, grads: bool) -> Self {
        Self {
            g: Graph::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            grads,
            stat_updates: Vec::new(),
        }
    }

    pub fn train(store: &'a ParamStore) -> Self {
        Self::new(store, Mode::Train, true)
    }

    pub fn eval(store: &'a ParamStore) -> Self {
        Self::new(store, Mode::Eval, false)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Graph node for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = self.store.entry(id);
        let rg = self.grads && entry.kind == ParamKind::Trainable;
        let v = self.g.leaf(entry.value.clone(), rg);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.g.constant(value)
    }

    pub fn record_stat_update(&mut self, id: ParamId, value: Tensor) {
        self.stat_updates.push((id, value));
    }

    pub fn take_stat_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Gradients of every trainable parameter in store order; parameters the
    /// pass never touched get zeros.
    pub fn param_grads(&self) -> Vec<Vec<f64>> {
        self.store
            .trainable_ids()
            .into_iter()
            .map(|id| match self.bound[id.0].and_then(|v| self.g.grad(v)) {
                Some(g) => g.to_vec(),
                None => vec![0.0; self.store.value(id).numel()],
            })
            .collect()
    }
}
