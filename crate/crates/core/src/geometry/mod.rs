//! Spatial primitives: exact k-nearest neighbors, Poisson-disk subsampling and
//! sphere cropping over 3D point clouds.

mod cloud;
mod crop;
mod grid;
mod knn;
mod pds;

use thiserror::Error;

pub use cloud::PointCloud;
pub use crop::{sphere_crop, Crop};
pub use grid::SpatialGrid;
pub use knn::{knn, knn_positions, NeighborTable};
pub use pds::{poisson_disk_subsample, poisson_disk_subsample_positions, radius_schedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("source cloud is empty")]
    EmptySource,
    #[error("sphere crop contains no points")]
    EmptyCrop,
    #[error("non-finite position at point {index}")]
    NonFinite { index: usize },
    #[error("{field} has {actual} rows, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Axis-aligned bounds `(min, max)` of a non-empty position set.
pub fn bounds<T: crate::Real>(positions: &[[T; 3]]) -> Option<([T; 3], [T; 3])> {
    let first = *positions.first()?;
    Some(positions.iter().fold((first, first), |(mut lo, mut hi), p| {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
        (lo, hi)
    }))
}
