use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, Graph, Tensor, Var};

use super::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    value: Tensor,
}

/// Named tensors making up one trainable parameter group. Names are unique
/// and each entry keeps the shape it was created with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<Entry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize, ModelError> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(ModelError::DuplicateParam(name));
        }
        self.entries.push(Entry { name, value });
        Ok(self.entries.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    /// Replaces a value, keeping the shape fixed.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), ModelError> {
        let i = self
            .index_of(name)
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))?;
        self.set_at(i, value)
    }

    pub fn set_at(&mut self, i: usize, value: Tensor) -> Result<(), ModelError> {
        let e = &mut self.entries[i];
        if e.value.shape() != value.shape() {
            return Err(ModelError::ParamShape {
                name: e.name.clone(),
                expected: e.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|e| &e.value)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.value)
    }

    pub fn numel(&self) -> usize {
        self.values().map(Tensor::len).sum()
    }

    /// Places every entry on `graph`, as trainable leaves or as constants.
    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> Bound<'g> {
        let vars = self
            .values()
            .map(|v| {
                if trainable {
                    graph.param(v.clone())
                } else {
                    graph.constant(v.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Zero tensors shaped like each entry.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.values().map(|v| Tensor::zeros(v.shape().to_vec())).collect()
    }
}

/// A [`ParamSet`] placed on a graph, in entry order.
#[derive(Clone, Debug)]
pub struct Bound<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn new(vars: Vec<Var<'g>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, i: usize) -> Var<'g> {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }

    /// The same values as non-trainable leaves.
    pub fn detached(&self) -> Self {
        Self {
            vars: self.vars.iter().map(|v| v.detach()).collect(),
        }
    }

    /// Gradients for each entry, in entry order.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.get(*v)).collect()
    }
}
