//! Composite layers built on the point convolution: the multi-scale split
//! block, the bottleneck baseline and feature-propagation upsampling.

mod bottleneck;
mod mss;
mod propagate;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acpconv::{AcpConv, Aggregation, DEFAULT_KERNEL_POINTS, DEFAULT_THETA_DEG};
use crate::error::Result;
use crate::geometry::NeighborTable;
use crate::graph::layers::{Activation, BatchNorm};
use crate::graph::{Graph, ParamStore, Var};
use crate::scalar::Real;

pub use bottleneck::Bottleneck;
pub use mss::MssBlock;
pub use propagate::{interpolation_map, FeaturePropagator, DEFAULT_K_INTERP, INTERP_EPS};

/// Points of one resolution level and their neighbor table (self included).
#[derive(Clone, Copy, Debug)]
pub struct Neighborhood<'a, T> {
    pub positions: &'a [[T; 3]],
    pub neighbors: &'a NeighborTable,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    #[default]
    Mss,
    Bottleneck,
}

/// Settings shared by every point-convolution block of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockConfig {
    pub kernel_points: usize,
    pub theta_deg: f64,
    pub aggregation: Aggregation,
    pub activation: Activation,
    pub batch_norm: bool,
    /// Internal width is `d_out / reduction` for both block kinds.
    pub reduction: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            kernel_points: DEFAULT_KERNEL_POINTS,
            theta_deg: DEFAULT_THETA_DEG,
            aggregation: Aggregation::Sum,
            activation: Activation::LeakyRelu,
            batch_norm: true,
            reduction: 4,
        }
    }
}

/// Point convolution followed by optional batch norm and the activation.
#[derive(Clone, Debug)]
pub struct AcpUnit<T> {
    pub conv: AcpConv<T>,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
}

impl<T: Real> AcpUnit<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel_scale: T,
        cfg: &BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = AcpConv::new(
            store,
            &format!("{name}.conv"),
            c_in,
            c_out,
            cfg.kernel_points,
            kernel_scale,
            T::lit(cfg.theta_deg.to_radians()),
            cfg.aggregation,
            rng,
        )?;
        let norm = cfg
            .batch_norm
            .then(|| BatchNorm::new(store, &format!("{name}.bn"), c_out));
        Ok(Self {
            conv,
            norm,
            activation: cfg.activation,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var, nb: Neighborhood<'_, T>) -> Result<Var> {
        let mut y = self.conv.forward(g, x, nb.positions, nb.neighbors)?;
        if let Some(bn) = &self.norm {
            y = bn.forward(g, y)?;
        }
        Ok(self.activation.apply(g, y))
    }
}

/// Either block kind behind one interface.
#[derive(Clone, Debug)]
pub enum Block<T> {
    Mss(MssBlock<T>),
    Bottleneck(Bottleneck<T>),
}

impl<T: Real> Block<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        kind: BlockKind,
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        kernel_scale: T,
        cfg: &BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            BlockKind::Mss => Block::Mss(MssBlock::with_reduction(
                store,
                name,
                d_in,
                d_out,
                kernel_scale,
                cfg,
                rng,
            )?),
            BlockKind::Bottleneck => Block::Bottleneck(Bottleneck::new(
                store,
                name,
                d_in,
                d_out,
                kernel_scale,
                cfg,
                rng,
            )?),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var, nb: Neighborhood<'_, T>) -> Result<Var> {
        match self {
            Block::Mss(b) => b.forward(g, x, nb),
            Block::Bottleneck(b) => b.forward(g, x, nb),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Block::Mss(b) => b.d_out,
            Block::Bottleneck(b) => b.d_out,
        }
    }
}
