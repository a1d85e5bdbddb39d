//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is built eagerly: every primitive computes its output at the
//! moment it is recorded, so the node arena is already in topological order.
//! [`Graph::backward`] walks the arena in reverse from a scalar root, writing
//! `d root / d node` into each node's gradient slot. Trainable parameters are
//! read from a borrowed [`ParamStore`]; their gradients are handed back through
//! [`Graph::finish`] so the store can be updated after the graph is dropped.

mod backward;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod ops;
pub mod optim;
mod params;
mod sparse;
mod tensor;

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Real;

pub use gradcheck::{finite_diff_check, Coordinate, GradCheckOptions, GradCheckReport};
pub use optim::{adam_step, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use sparse::{AggEntry, SparseAggregation};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid tensor shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("parameter {name:?} has no gradient")]
    MissingGrad { name: String },
    #[error("non-finite value at {coordinate}")]
    NonFinite { coordinate: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train mode uses batch statistics in batch normalization and records
/// running-statistic updates; eval mode uses the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    GatherRows {
        input: Var,
        index: Arc<[usize]>,
    },
    ScatterAddRows {
        input: Var,
        index: Arc<[usize]>,
    },
    Softmax(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    CrossEntropy {
        probs: Var,
        targets: Arc<[usize]>,
    },
    CrossEntropyLogits {
        logits: Var,
        targets: Arc<[usize]>,
        softmax: Vec<T>,
    },
    SparseAggregate {
        input: Var,
        agg: Arc<SparseAggregation<T>>,
    },
    BlockCombine {
        input: Var,
        weights: Arc<[T]>,
        k: usize,
    },
    GroupMax {
        input: Var,
        argmax: Vec<usize>,
    },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterAddRows { .. } => "scatter_add_rows",
            Op::Softmax(_) => "softmax",
            Op::Log(_) => "log",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::BatchNorm { .. } => "batch_norm",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::CrossEntropyLogits { .. } => "cross_entropy_logits",
            Op::SparseAggregate { .. } => "sparse_aggregate",
            Op::BlockCombine { .. } => "block_combine",
            Op::GroupMax { .. } => "group_max",
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
}

/// Parameter gradients and buffer writes produced by one graph.
#[derive(Clone, Debug, Default)]
pub struct GraphOutcome<T> {
    pub param_grads: Vec<(ParamId, Vec<T>)>,
    pub buffer_updates: Vec<(ParamId, Vec<T>)>,
}

pub struct Graph<'s, T: Real> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    mode: Mode,
    buffer_updates: Vec<(ParamId, Vec<T>)>,
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            mode,
            buffer_updates: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient written by the last [`Graph::backward`], if the node needed one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// The stored parameter a node was read from, if any.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Records a node whose output depends on `inputs`; it needs a gradient if
    /// any input does.
    pub(crate) fn record(&mut self, shape: &[usize], data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.requires(v));
        let t = Tensor::new(shape, data)
            .expect("primitive produced consistent shape")
            .with_requires_grad(rg);
        self.push(t, op)
    }

    /// Leaf input. Gradients are tracked when `requires_grad` is set.
    pub fn input(&mut self, tensor: Tensor<T>, requires_grad: bool) -> Var {
        let t = tensor.with_requires_grad(requires_grad);
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.input(tensor, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls share one node so that
    /// fan-out gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = self.store.get(id);
        let t = Tensor::new(p.tensor.shape(), p.tensor.data().to_vec())
            .expect("stored parameter shape")
            .with_requires_grad(p.trainable);
        let v = self.push(t, Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub(crate) fn queue_buffer_update(&mut self, id: ParamId, values: Vec<T>) {
        self.buffer_updates.push((id, values));
    }

    /// Collects parameter gradients (after [`Graph::backward`]) and pending
    /// buffer writes, consuming the graph.
    pub fn finish(self) -> GraphOutcome<T> {
        let mut param_grads: Vec<(ParamId, Vec<T>)> = self
            .param_vars
            .iter()
            .filter_map(|(&id, &v)| self.nodes[v.0].value.grad().map(|g| (id, g.to_vec())))
            .collect();
        param_grads.sort_by_key(|(id, _)| *id);
        GraphOutcome {
            param_grads,
            buffer_updates: self.buffer_updates,
        }
    }
}
