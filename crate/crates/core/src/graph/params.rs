use std::collections::HashMap;

use crate::graph::{GraphError, GraphOutcome, Tensor};
use crate::scalar::Real;

/// Handle to a tensor owned by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor plus its Adam moment estimates.
///
/// Non-trainable entries (batch-norm running statistics, fixed kernel
/// offsets) live in the same store so that checkpoints capture them, but the
/// optimizer never touches them.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
    pub step_count: u64,
    pub trainable: bool,
}

impl<T: Real> Parameter<T> {
    fn new(name: String, tensor: Tensor<T>, trainable: bool) -> Self {
        let n = tensor.numel();
        Self {
            name,
            tensor: tensor.with_requires_grad(trainable),
            adam_m: vec![T::zero(); n],
            adam_v: vec![T::zero(); n],
            step_count: 0,
            trainable,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.params.len());
        self.params
            .push(Parameter::new(name.to_string(), tensor, trainable));
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        self.insert(name, tensor, true)
    }

    /// Registers a non-trainable buffer.
    pub fn add_buffer(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        self.insert(name, tensor, false)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Overwrites a parameter's values (shape must match).
    pub fn set_values(&mut self, id: ParamId, values: &[T]) -> Result<(), GraphError> {
        let p = &mut self.params[id.0];
        if values.len() != p.tensor.numel() {
            return Err(GraphError::DataLength {
                shape: p.tensor.shape().to_vec(),
                len: values.len(),
            });
        }
        p.tensor.data_mut().copy_from_slice(values);
        Ok(())
    }

    /// Resets every trainable gradient to zeros.
    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let n = p.tensor.numel();
            p.tensor.set_grad(Some(vec![T::zero(); n]));
        }
    }

    /// Drops every gradient slot.
    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.set_grad(None);
        }
    }

    /// Adds the graph's parameter gradients into the store and applies any
    /// pending buffer writes (batch-norm running statistics).
    pub fn absorb(&mut self, outcome: &GraphOutcome<T>) {
        for (id, g) in &outcome.param_grads {
            self.params[id.0].tensor.accumulate_grad(g);
        }
        for (id, values) in &outcome.buffer_updates {
            self.params[id.0].tensor.data_mut().copy_from_slice(values);
        }
    }
}
