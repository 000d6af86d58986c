//! Named parameter storage shared by the model and the optimizer.

use std::collections::HashMap;

use super::tensor::Tensor;

/// A named, ordered collection of parameter tensors.
///
/// Order is insertion order and is part of the determinism contract: the
/// optimizer, gradient collection, and checkpoints all iterate in it.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter; panics on duplicate names.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(true);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn is_trainable(&self, id: usize) -> bool {
        self.trainable[id]
    }

    /// Marks a parameter as frozen (excluded from optimizer updates).
    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        let id = self.lookup(name).expect("unknown parameter");
        self.trainable[id] = trainable;
    }

    /// Total number of scalar parameters, trainable or not.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter())
    }
}
