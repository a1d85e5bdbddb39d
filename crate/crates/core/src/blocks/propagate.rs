use std::sync::Arc;

use crate::error::Result;
use crate::geometry::knn_positions;
use crate::graph::layers::SharedMlp;
use crate::graph::{AggEntry, Graph, SparseAggregation, Var};
use crate::scalar::{dist2, Real};

pub const DEFAULT_K_INTERP: usize = 3;
pub const INTERP_EPS: f64 = 1e-8;

/// Inverse-square-distance weights from each fine point to its `k` nearest
/// coarse points: `w_t = 1 / (d_t^2 + eps)`, normalized to sum to one. A fine
/// point that coincides with a coarse point takes that point's feature alone.
pub fn interpolation_map<T: Real>(
    coarse: &[[T; 3]],
    fine: &[[T; 3]],
    k: usize,
) -> Result<SparseAggregation<T>> {
    let k = k.max(1).min(coarse.len().max(1));
    let table = knn_positions(coarse, fine, k)?;
    let eps = T::lit(INTERP_EPS);
    let mut entries = Vec::with_capacity(fine.len() * k);
    for (i, p) in fine.iter().enumerate() {
        let row = table.row(i);
        let d0 = dist2(p, &coarse[row[0]]);
        if d0 == T::zero() {
            entries.push(AggEntry {
                row: i,
                slot: 0,
                src: row[0],
                weight: T::one(),
            });
            continue;
        }
        let w: Vec<T> = row
            .iter()
            .map(|&j| T::one() / (dist2(p, &coarse[j]) + eps))
            .collect();
        let total: T = w.iter().copied().sum();
        for (&j, &wj) in row.iter().zip(&w) {
            entries.push(AggEntry {
                row: i,
                slot: 0,
                src: j,
                weight: wj / total,
            });
        }
    }
    Ok(SparseAggregation::new(fine.len(), 1, coarse.len(), entries)?)
}

/// Lifts coarse features onto a finer point set, optionally concatenating a
/// skip connection and running a shared MLP afterwards.
#[derive(Clone, Debug)]
pub struct FeaturePropagator {
    pub k_interp: usize,
    pub mlp: Option<SharedMlp>,
}

impl Default for FeaturePropagator {
    fn default() -> Self {
        Self {
            k_interp: DEFAULT_K_INTERP,
            mlp: None,
        }
    }
}

impl FeaturePropagator {
    pub fn new(k_interp: usize, mlp: Option<SharedMlp>) -> Self {
        Self { k_interp, mlp }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        coarse_positions: &[[T; 3]],
        coarse_features: Var,
        fine_positions: &[[T; 3]],
        skip: Option<Var>,
    ) -> Result<Var> {
        let map = interpolation_map(coarse_positions, fine_positions, self.k_interp)?;
        self.forward_mapped(g, &Arc::new(map), coarse_features, skip)
    }

    /// Same as [`FeaturePropagator::forward`] with a precomputed map.
    pub fn forward_mapped<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        map: &Arc<SparseAggregation<T>>,
        coarse_features: Var,
        skip: Option<Var>,
    ) -> Result<Var> {
        let mut x = g.sparse_aggregate(coarse_features, Arc::clone(map))?;
        if let Some(s) = skip {
            x = g.concat(&[x, s], 1)?;
        }
        match &self.mlp {
            Some(m) => Ok(m.forward(g, x)?),
            None => Ok(x),
        }
    }
}
