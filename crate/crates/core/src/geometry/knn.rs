use rayon::prelude::*;

use crate::geometry::{bounds, GeometryError, PointCloud, SpatialGrid};
use crate::scalar::{dist2, Real};

/// Row `q` lists the `m` sources nearest to query `q`, ordered by
/// nondecreasing distance with ties broken by lower source index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTable {
    indices: Vec<usize>,
    m: usize,
    source_count: usize,
    query_count: usize,
}

impl NeighborTable {
    pub fn new(indices: Vec<usize>, m: usize, source_count: usize) -> Result<Self, GeometryError> {
        if m == 0 || !indices.len().is_multiple_of(m) {
            return Err(GeometryError::InvalidArgument(format!(
                "{} indices do not form rows of {m}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= source_count) {
            return Err(GeometryError::InvalidArgument(format!(
                "neighbor index {bad} >= source count {source_count}"
            )));
        }
        Ok(Self {
            query_count: indices.len() / m,
            indices,
            m,
            source_count,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn query_count(&self) -> usize {
        self.query_count
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.m..(q + 1) * self.m]
    }

    /// Row-major `query_count x m` index matrix.
    pub fn flat(&self) -> &[usize] {
        &self.indices
    }

    /// Same table with each row reordered by `perm(q, row)`; used to check
    /// order-invariance of consumers.
    pub fn with_rows_permuted(&self, mut perm: impl FnMut(usize, &mut [usize])) -> Self {
        let mut indices = self.indices.clone();
        for (q, row) in indices.chunks_mut(self.m).enumerate() {
            perm(q, row);
        }
        Self {
            indices,
            ..self.clone()
        }
    }
}

/// Cell size giving a few-dozen-point neighborhood per ring on typical clouds.
fn auto_cell_size<T: Real>(positions: &[[T; 3]], m: usize) -> T {
    let (lo, hi) = bounds(positions).expect("non-empty");
    let ext: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).as_f64()).collect();
    let max_ext = ext.iter().cloned().fold(0.0, f64::max);
    if max_ext <= 0.0 {
        return T::one();
    }
    let floor = max_ext * 1e-3;
    let vol: f64 = ext.iter().map(|&e| e.max(floor)).product();
    let per_point = vol / positions.len() as f64;
    T::lit((per_point * m.max(4) as f64).cbrt().max(floor))
}

fn insert_sorted<T: Real>(best: &mut Vec<(T, usize)>, cap: usize, cand: (T, usize)) {
    let worse = |a: &(T, usize), b: &(T, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 > b.1);
    if best.len() == cap {
        if !worse(best.last().expect("cap > 0"), &cand) {
            return;
        }
        best.pop();
    }
    let pos = best.partition_point(|e| !worse(e, &cand));
    best.insert(pos, cand);
}

fn query_one<T: Real>(
    grid: &SpatialGrid<T>,
    source: &[[T; 3]],
    q: &[T; 3],
    m: usize,
) -> Vec<usize> {
    let cap = m.min(source.len());
    let cs = grid.cell_size();
    let center = grid.cell_of(q);
    let mut best: Vec<(T, usize)> = Vec::with_capacity(cap + 1);
    let mut ring = 0i64;
    loop {
        grid.for_each_in_ring(center, ring, |cell| {
            for &i in cell {
                insert_sorted(&mut best, cap, (dist2(q, &source[i]), i));
            }
        });
        if grid.covers_all(center, ring) {
            break;
        }
        if best.len() == cap {
            // Any unvisited point lies at least this far from q.
            let mut bound = T::infinity();
            for a in 0..3 {
                let lo_face = T::from_i64(center[a] - ring).expect("i64") * cs;
                let hi_face = T::from_i64(center[a] + ring + 1).expect("i64") * cs;
                bound = bound.min(q[a] - lo_face).min(hi_face - q[a]);
            }
            let bound = bound - cs * T::lit(1e-9);
            if bound > T::zero() && best[cap - 1].0 < bound * bound {
                break;
            }
        }
        ring += 1;
    }
    let mut row: Vec<usize> = best.into_iter().map(|(_, i)| i).collect();
    let nearest = row[0];
    row.resize(m, nearest);
    row
}

/// Exact Euclidean k-nearest neighbors of each query among `source`.
///
/// When `m` exceeds the source size, rows are padded by repeating the
/// nearest index. Queries run in parallel; results do not depend on thread
/// count.
pub fn knn_positions<T: Real>(
    source: &[[T; 3]],
    queries: &[[T; 3]],
    m: usize,
) -> Result<NeighborTable, GeometryError> {
    if source.is_empty() {
        return Err(GeometryError::EmptySource);
    }
    if m == 0 {
        return Err(GeometryError::InvalidArgument("m must be at least 1".into()));
    }
    for (set, pts) in [(0, source), (1, queries)] {
        if let Some(i) = pts.iter().position(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(if set == 0 {
                GeometryError::NonFinite { index: i }
            } else {
                GeometryError::InvalidArgument(format!("non-finite query {i}"))
            });
        }
    }
    let grid = SpatialGrid::build(source, auto_cell_size(source, m));
    let rows: Vec<Vec<usize>> = queries
        .par_iter()
        .map(|q| query_one(&grid, source, q, m))
        .collect();
    NeighborTable::new(rows.concat(), m, source.len())
}

pub fn knn<T: Real>(
    source: &PointCloud<T>,
    queries: &[[T; 3]],
    m: usize,
) -> Result<NeighborTable, GeometryError> {
    knn_positions(&source.positions, queries, m)
}
