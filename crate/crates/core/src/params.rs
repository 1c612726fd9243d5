//! Named parameter storage and its binding onto a tape.

use std::collections::HashMap;

use indexmap::IndexMap;

use crate::autodiff::{read_checkpoint, write_checkpoint, AutodiffError, Gradients, Tape, Tensor, Var};

/// Parameters keyed by namespaced name (`seq.*`, `graph.*`, `pred_seq.*`, ...),
/// kept in insertion order so checkpoints and optimizer sweeps are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Names under `prefix.`.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.params
            .keys()
            .map(String::as_str)
            .filter(move |k| k.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('.')))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_checkpoint(self.iter())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutodiffError> {
        let mut store = ParamStore::new();
        for (name, t) in read_checkpoint(bytes)? {
            store.insert(name, t);
        }
        Ok(store)
    }
}

/// Lazily places parameters on a tape as differentiable leaves.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: HashMap<&'a str, Var>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Binder { store, vars: HashMap::new(), trainable: true }
    }

    /// Parameters bound as constants; used when only input gradients matter.
    pub fn frozen(store: &'a ParamStore) -> Self {
        Binder { store, vars: HashMap::new(), trainable: false }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Result<Var, MissingParam> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let (key, value) = self.store.params.get_key_value(name).ok_or_else(|| MissingParam(name.to_string()))?;
        let v = if self.trainable { tape.leaf(value.clone()) } else { tape.constant(value.clone()) };
        self.vars.insert(key.as_str(), v);
        Ok(v)
    }

    /// Gradient for every bound parameter, keyed by name.
    pub fn collect_grads(&self, grads: &Gradients) -> HashMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.to_string(), grads.wrt(*v))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("missing parameter `{0}`")]
pub struct MissingParam(pub String);
