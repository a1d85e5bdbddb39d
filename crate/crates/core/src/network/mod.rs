//! Whole segmentation networks over a [`ResolutionPyramid`]: the parallel
//! stream HRNet and the encoder-decoder Unet baseline.

mod hrnet;
mod pyramid;
mod unet;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acpconv::KERNEL_SCALE_FACTOR;
use crate::blocks::{BlockConfig, BlockKind};
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamStore, Var};
use crate::scalar::Real;

pub use hrnet::HRNet;
pub use pyramid::{PyramidLevel, ResolutionPyramid};
pub use unet::Unet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Hrnet,
    Unet,
}

/// Shape of a network. `num_streams` is the pyramid depth it consumes: the
/// number of parallel streams for HRNet, the number of encoder levels for Unet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub architecture: Architecture,
    pub num_streams: usize,
    pub blocks_per_stage: usize,
    pub widths: Vec<usize>,
    pub block_kind: BlockKind,
    pub num_classes: usize,
    pub in_channels: usize,
    /// Width of the per-point feature produced by the decoder.
    pub head_width: usize,
    pub k_interp: usize,
    /// Nominal radius of the level-0 kernel; level `l` uses `2^l` times it.
    pub kernel_radius: f64,
    pub block: BlockConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetworkConfig {
    /// Small widths used for tests and synthetic experiments.
    pub fn desk() -> Self {
        Self {
            architecture: Architecture::Hrnet,
            num_streams: 3,
            blocks_per_stage: 2,
            widths: vec![16, 32, 64],
            block_kind: BlockKind::Mss,
            num_classes: 6,
            in_channels: 5,
            head_width: 32,
            k_interp: crate::blocks::DEFAULT_K_INTERP,
            kernel_radius: 0.1,
            block: BlockConfig::default(),
        }
    }

    /// Full-size preset.
    pub fn full_scale() -> Self {
        Self {
            widths: vec![64, 128, 256],
            head_width: 128,
            kernel_radius: 0.04,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_streams == 0 {
            return Err(Error::Config("num_streams must be at least 1".into()));
        }
        if self.widths.len() < self.num_streams {
            return Err(Error::Config(format!(
                "{} widths given for {} streams",
                self.widths.len(),
                self.num_streams
            )));
        }
        if self.num_classes == 0 || self.in_channels == 0 || self.head_width == 0 {
            return Err(Error::Config("class, input and head widths must be positive".into()));
        }
        if !(self.kernel_radius > 0.0) {
            return Err(Error::Config("kernel_radius must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn kernel_scale<T: Real>(&self, level: usize) -> T {
        T::lit(KERNEL_SCALE_FACTOR * self.kernel_radius * f64::powi(2.0, level as i32))
    }
}

/// Decoder features (`N x head_width`) and class logits (`N x num_classes`)
/// on level 0, plus the stream shapes seen after each exchange.
#[derive(Clone, Debug)]
pub struct NetOutput {
    pub features: Var,
    pub logits: Var,
    pub exchange_shapes: Vec<Vec<[usize; 2]>>,
}

/// Either architecture behind one interface.
#[derive(Clone, Debug)]
pub enum Network<T> {
    Hrnet(HRNet<T>),
    Unet(Unet<T>),
}

impl<T: Real> Network<T> {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        Ok(match cfg.architecture {
            Architecture::Hrnet => Network::Hrnet(HRNet::new(store, name, cfg, rng)?),
            Architecture::Unet => Network::Unet(Unet::new(store, name, cfg, rng)?),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        match self {
            Network::Hrnet(n) => &n.config,
            Network::Unet(n) => &n.config,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, pyramid: &ResolutionPyramid<T>, input: Var) -> Result<NetOutput> {
        match self {
            Network::Hrnet(n) => n.forward(g, pyramid, input),
            Network::Unet(n) => n.forward(g, pyramid, input),
        }
    }
}

/// Max over the pooled fine rows of every coarse point.
pub(crate) fn max_pool<T: Real>(g: &mut Graph<'_, T>, x: Var, index: Arc<[usize]>, m: usize) -> Result<Var> {
    let gathered = g.gather_rows(x, index)?;
    Ok(g.group_max(gathered, m)?)
}

pub(crate) fn check_input<T: Real>(
    g: &Graph<'_, T>,
    cfg: &NetworkConfig,
    pyramid: &ResolutionPyramid<T>,
    input: Var,
) -> Result<()> {
    if pyramid.depth() != cfg.num_streams {
        return Err(Error::Config(format!(
            "network expects a pyramid of depth {}, got {}",
            cfg.num_streams,
            pyramid.depth()
        )));
    }
    let shape = g.shape(input);
    if shape.len() == 2 && shape[0] != pyramid.level(0).len() {
        return Err(Error::Config(format!(
            "network input has {} rows for {} level-0 points",
            shape[0],
            pyramid.level(0).len()
        )));
    }
    if shape.len() != 2 || shape[1] != cfg.in_channels {
        return Err(Error::ChannelMismatch {
            layer: "network input".into(),
            expected: cfg.in_channels,
            actual: shape.get(1).copied().unwrap_or(0),
        });
    }
    Ok(())
}
