use std::collections::BTreeMap;
use std::sync::Arc;

use crate::blocks::{interpolation_map, Neighborhood, DEFAULT_K_INTERP};
use crate::error::{Error, Result};
use crate::geometry::{knn_positions, poisson_disk_subsample_positions, radius_schedule, NeighborTable};
use crate::graph::SparseAggregation;
use crate::scalar::Real;

/// One resolution of a [`ResolutionPyramid`].
#[derive(Clone, Debug)]
pub struct PyramidLevel<T> {
    pub positions: Vec<[T; 3]>,
    /// Index of every point in the level-0 crop.
    pub crop_indices: Vec<usize>,
    /// Index of every point in the previous level (identity on level 0).
    pub parent_indices: Vec<usize>,
    /// `M` nearest neighbors within this level, self first.
    pub neighbors: NeighborTable,
    /// Subsampling radius that produced this level (zero on level 0).
    pub radius: T,
}

impl<T: Real> PyramidLevel<T> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn neighborhood(&self) -> Neighborhood<'_, T> {
        Neighborhood {
            positions: &self.positions,
            neighbors: &self.neighbors,
        }
    }
}

/// Nested Poisson-disk subsamplings of a crop with the neighbor tables and
/// cross-level maps the networks need.
///
/// For every ordered pair of levels `(fine, coarse)` the pyramid stores a
/// pooling table (the `M` nearest fine points of each coarse point) and an
/// interpolation map lifting coarse features onto the fine points.
#[derive(Clone, Debug)]
pub struct ResolutionPyramid<T> {
    pub levels: Vec<PyramidLevel<T>>,
    pub m: usize,
    pool: BTreeMap<(usize, usize), Arc<[usize]>>,
    interp: BTreeMap<(usize, usize), Arc<SparseAggregation<T>>>,
}

impl<T: Real> ResolutionPyramid<T> {
    /// Builds `levels` levels over `positions`; level `l >= 1` subsamples level
    /// `l - 1` with radius `r * 2^(l-1)`.
    pub fn build(positions: &[[T; 3]], r: T, levels: usize, m: usize, seed: u64) -> Result<Self> {
        Self::build_with_k(positions, r, levels, m, DEFAULT_K_INTERP, seed)
    }

    pub fn build_with_k(
        positions: &[[T; 3]],
        r: T,
        levels: usize,
        m: usize,
        k_interp: usize,
        seed: u64,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyLevel { level: 0 });
        }
        if m == 0 {
            return Err(Error::Config("pyramid neighbor count must be at least 1".into()));
        }
        let radii = radius_schedule(r, levels)?;
        let n0 = positions.len();
        let mut out: Vec<PyramidLevel<T>> = Vec::with_capacity(levels);
        out.push(PyramidLevel {
            positions: positions.to_vec(),
            crop_indices: (0..n0).collect(),
            parent_indices: (0..n0).collect(),
            neighbors: knn_positions(positions, positions, m)?,
            radius: T::zero(),
        });
        for l in 1..levels {
            let prev = &out[l - 1];
            let keep = poisson_disk_subsample_positions(&prev.positions, radii[l - 1], seed.wrapping_add(l as u64))?;
            if keep.is_empty() {
                return Err(Error::EmptyLevel { level: l });
            }
            let pts: Vec<[T; 3]> = keep.iter().map(|&i| prev.positions[i]).collect();
            let crop_indices = keep.iter().map(|&i| prev.crop_indices[i]).collect();
            let neighbors = knn_positions(&pts, &pts, m)?;
            out.push(PyramidLevel {
                positions: pts,
                crop_indices,
                parent_indices: keep,
                neighbors,
                radius: radii[l - 1],
            });
        }
        let mut pool = BTreeMap::new();
        let mut interp = BTreeMap::new();
        for fine in 0..levels {
            for coarse in fine + 1..levels {
                let table = knn_positions(&out[fine].positions, &out[coarse].positions, m)?;
                pool.insert((fine, coarse), Arc::from(table.flat()));
                let map = interpolation_map(&out[coarse].positions, &out[fine].positions, k_interp)?;
                interp.insert((coarse, fine), Arc::new(map));
            }
        }
        Ok(Self {
            levels: out,
            m,
            pool,
            interp,
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &PyramidLevel<T> {
        &self.levels[l]
    }

    /// Flattened `[n_coarse * m]` indices of fine points pooled into each
    /// coarse point.
    pub fn pool_index(&self, fine: usize, coarse: usize) -> Result<Arc<[usize]>> {
        self.pool
            .get(&(fine, coarse))
            .cloned()
            .ok_or_else(|| Error::Config(format!("no pooling map from level {fine} to level {coarse}")))
    }

    /// Interpolation from a coarse level onto a finer one.
    pub fn interp_map(&self, coarse: usize, fine: usize) -> Result<Arc<SparseAggregation<T>>> {
        self.interp
            .get(&(coarse, fine))
            .cloned()
            .ok_or_else(|| Error::Config(format!("no interpolation map from level {coarse} to level {fine}")))
    }
}
