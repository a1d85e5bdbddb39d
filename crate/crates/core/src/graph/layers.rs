//! Parameterized building blocks: linear maps, batch normalization and the
//! pointwise "shared MLP" unit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Real;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    #[default]
    LeakyRelu,
}

pub const LEAKY_SLOPE: f64 = 0.1;

impl Activation {
    pub fn apply<T: Real>(self, g: &mut Graph<'_, T>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu => g.leaky_relu(x, T::lit(LEAKY_SLOPE)),
        }
    }
}

/// Uniform `[-bound, bound]` initialization with `bound = 1 / sqrt(fan_in)`.
pub fn uniform_init<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

/// `x @ W + b` with `W: [c_in, c_out]`, `b: [1, c_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(&format!("{name}.weight"), uniform_init(rng, &[c_in, c_out], c_in));
        let bias = bias.then(|| store.add(&format!("{name}.bias"), Tensor::zeros(&[1, c_out])));
        Self {
            weight,
            bias,
            c_in,
            c_out,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, GraphError> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Batch normalization over points with learnable scale and shift.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::filled(&[1, channels], T::one())),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[1, channels])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(
                &format!("{name}.running_var"),
                Tensor::filled(&[channels], T::one()),
            ),
            channels,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, GraphError> {
        g.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            T::lit(BN_MOMENTUM),
            T::lit(BN_EPS),
        )
    }
}

/// Pointwise linear -> optional batch norm -> activation.
#[derive(Clone, Debug)]
pub struct SharedMlp {
    pub linear: Linear,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
}

impl SharedMlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        norm: bool,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        // A bias ahead of batch norm is redundant.
        let linear = Linear::new(store, &format!("{name}.linear"), c_in, c_out, !norm, rng);
        let norm = norm.then(|| BatchNorm::new(store, &format!("{name}.bn"), c_out));
        Self {
            linear,
            norm,
            activation,
        }
    }

    pub fn c_in(&self) -> usize {
        self.linear.c_in
    }

    pub fn c_out(&self) -> usize {
        self.linear.c_out
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, GraphError> {
        let mut y = self.linear.forward(g, x)?;
        if let Some(bn) = &self.norm {
            y = bn.forward(g, y)?;
        }
        Ok(self.activation.apply(g, y))
    }

    /// Sets every trainable weight and bias of this unit to zero.
    pub fn zero_init<T: Real>(&self, store: &mut ParamStore<T>) {
        let mut ids = vec![self.linear.weight];
        ids.extend(self.linear.bias);
        for id in ids {
            let n = store.tensor(id).numel();
            store.set_values(id, &vec![T::zero(); n]).expect("same length");
        }
    }
}
