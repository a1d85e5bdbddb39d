//! Differentiable point-cloud segmentation: a small reverse-mode tensor engine,
//! exact spatial primitives, angle-correlation point convolution, multi-scale
//! blocks, multi-resolution networks with attentional fusion, and a training
//! and evaluation harness over synthetic scenes.
//!
//! Everything numeric is generic over [`Real`]; the `*64` aliases fix it to
//! `f64`, which every gradient check uses.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acpconv;
pub mod blocks;
pub mod data;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod graph;
pub mod network;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor64 = graph::Tensor<f64>;
pub type Graph64<'s> = graph::Graph<'s, f64>;
pub type ParamStore64 = graph::ParamStore<f64>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type Pyramid64 = network::ResolutionPyramid<f64>;
pub type Model64 = fusion::SegmentationModel<f64>;
