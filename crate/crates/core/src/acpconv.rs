//! Angle-correlation point convolution.
//!
//! Each layer owns `K` fixed kernel directions around the query point, the
//! first of which sits at the query itself. A neighbor at relative position
//! `v` contributes to kernel `k >= 1` with weight `cos(angle(v, u_k))` when
//! that angle is strictly below the threshold `theta_t`, and to the center
//! kernel only when `v == 0`. Per point:
//!
//! ```text
//! out_i = AGG_{j in N(i)} sum_k corr(v_ij, u_k) * f_j W_k
//! ```
//!
//! Kernel offsets are drawn once at construction and never trained. Only
//! their directions enter the correlation; `scale` bounds their length.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NeighborTable;
use crate::graph::layers::uniform_init;
use crate::graph::{AggEntry, Graph, ParamId, ParamStore, SparseAggregation, Tensor, Var};
use crate::scalar::{dot3, norm3, sub3, Real};

pub const DEFAULT_KERNEL_POINTS: usize = 15;
pub const DEFAULT_NEIGHBORS: usize = 32;
pub const DEFAULT_THETA_DEG: f64 = 30.0;
/// Kernel containment radius as a multiple of the level's sampling radius.
pub const KERNEL_SCALE_FACTOR: f64 = 2.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
    Max,
}

/// Fixed kernel offsets (stored as a non-trainable `K x 3` buffer) and one
/// learnable `c_in x c_out` matrix per kernel point.
#[derive(Clone, Debug)]
pub struct KernelSet<T> {
    pub offsets: ParamId,
    pub scale: T,
    pub theta_t: T,
    pub weights: Vec<ParamId>,
}

impl<T: Real> KernelSet<T> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn offsets(&self, store: &ParamStore<T>) -> Vec<[T; 3]> {
        store
            .tensor(self.offsets)
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }
}

/// Draws `k` kernel points: the origin first, the rest uniform in the ball of
/// radius `scale`. Weights get fan-in scaled uniform noise.
#[allow(clippy::too_many_arguments)]
pub fn init_kernels<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    k: usize,
    scale: T,
    theta_t: T,
    c_in: usize,
    c_out: usize,
    rng: &mut R,
) -> Result<KernelSet<T>> {
    if k < 1 {
        return Err(Error::Config(format!("{name}: need at least one kernel point")));
    }
    if !(theta_t > T::zero() && theta_t < T::lit(std::f64::consts::PI)) {
        return Err(Error::Config(format!("{name}: angle threshold {theta_t} outside (0, pi)")));
    }
    if !(scale > T::zero()) {
        return Err(Error::Config(format!("{name}: kernel scale must be positive")));
    }
    if c_in == 0 || c_out == 0 {
        return Err(Error::Config(format!("{name}: zero channel count")));
    }
    let mut offsets = vec![T::zero(); 3 * k];
    for kk in 1..k {
        let dir: [f64; 3] = loop {
            let d: [f64; 3] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if n > 1e-12 {
                break [d[0] / n, d[1] / n, d[2] / n];
            }
        };
        let radius = scale.as_f64() * rng.random::<f64>().cbrt();
        for a in 0..3 {
            offsets[3 * kk + a] = T::lit(dir[a] * radius);
        }
    }
    let offsets = store.add_buffer(
        &format!("{name}.offsets"),
        Tensor::new(&[k, 3], offsets).expect("k x 3"),
    );
    let weights = (0..k)
        .map(|kk| {
            store.add(
                &format!("{name}.w{kk}"),
                uniform_init(rng, &[c_in, c_out], c_in * k),
            )
        })
        .collect();
    Ok(KernelSet {
        offsets,
        scale,
        theta_t,
        weights,
    })
}

/// Correlation of relative neighbor position `v` with non-center kernel
/// direction `u`: the cosine of their angle when it is below the threshold
/// (`cos > cos_t`), else zero. Degenerate vectors give zero.
#[inline]
pub fn kernel_correlation<T: Real>(v: &[T; 3], u: &[T; 3], cos_t: T) -> T {
    let nv = norm3(v);
    let nu = norm3(u);
    if nv == T::zero() || nu == T::zero() {
        return T::zero();
    }
    let c = dot3(v, u) / (nv * nu);
    if c > cos_t {
        c
    } else {
        T::zero()
    }
}

#[inline]
fn is_origin<T: Real>(v: &[T; 3]) -> bool {
    v.iter().all(|&x| x == T::zero())
}

/// Dense `M x K` correlation matrix for one query's relative neighbors.
pub fn angle_correlation<T: Real>(rel_neighbors: &[[T; 3]], offsets: &[[T; 3]], theta_t: T) -> Vec<T> {
    let k = offsets.len();
    let cos_t = theta_t.cos();
    let mut out = vec![T::zero(); rel_neighbors.len() * k];
    for (j, v) in rel_neighbors.iter().enumerate() {
        if k > 0 && is_origin(v) {
            out[j * k] = T::one();
        }
        for kk in 1..k {
            out[j * k + kk] = kernel_correlation(v, &offsets[kk], cos_t);
        }
    }
    out
}

/// Sparse form of the correlations over a whole neighbor table, mapping
/// `[N, c]` features to `[N, K * c]` per-kernel aggregates. `scale` multiplies
/// every weight (use `1/M` for mean aggregation).
pub fn correlation_aggregation<T: Real>(
    positions: &[[T; 3]],
    neighbors: &NeighborTable,
    offsets: &[[T; 3]],
    theta_t: T,
    scale: T,
) -> Result<SparseAggregation<T>> {
    let k = offsets.len();
    let cos_t = theta_t.cos();
    let mut entries = Vec::new();
    for i in 0..neighbors.query_count() {
        for &j in neighbors.row(i) {
            let v = sub3(&positions[j], &positions[i]);
            if is_origin(&v) {
                entries.push(AggEntry {
                    row: i,
                    slot: 0,
                    src: j,
                    weight: scale,
                });
                continue;
            }
            for (kk, u) in offsets.iter().enumerate().skip(1) {
                let c = kernel_correlation(&v, u, cos_t);
                if c != T::zero() {
                    entries.push(AggEntry {
                        row: i,
                        slot: kk,
                        src: j,
                        weight: c * scale,
                    });
                }
            }
        }
    }
    Ok(SparseAggregation::new(
        neighbors.query_count(),
        k,
        neighbors.source_count(),
        entries,
    )?)
}

/// Dense `(N*M) x K` correlations, row `i*M + j` for neighbor `j` of point `i`.
fn correlation_dense<T: Real>(
    positions: &[[T; 3]],
    neighbors: &NeighborTable,
    offsets: &[[T; 3]],
    theta_t: T,
) -> Vec<T> {
    let mut out = Vec::with_capacity(neighbors.flat().len() * offsets.len());
    for i in 0..neighbors.query_count() {
        let rel: Vec<[T; 3]> = neighbors
            .row(i)
            .iter()
            .map(|&j| sub3(&positions[j], &positions[i]))
            .collect();
        out.extend(angle_correlation(&rel, offsets, theta_t));
    }
    out
}

#[derive(Clone, Debug)]
pub struct AcpConv<T> {
    pub name: String,
    pub kernel: KernelSet<T>,
    pub c_in: usize,
    pub c_out: usize,
    pub aggregation: Aggregation,
}

impl<T: Real> AcpConv<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        scale: T,
        theta_t: T,
        aggregation: Aggregation,
        rng: &mut R,
    ) -> Result<Self> {
        let kernel = init_kernels(store, name, k, scale, theta_t, c_in, c_out, rng)?;
        Ok(Self {
            name: name.to_string(),
            kernel,
            c_in,
            c_out,
            aggregation,
        })
    }

    /// `[N, c_in]` features over `positions` (with `neighbors` built on the same
    /// points, self included) to `[N, c_out]`. Differentiable in the features
    /// and every kernel weight.
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        features: Var,
        positions: &[[T; 3]],
        neighbors: &NeighborTable,
    ) -> Result<Var> {
        let shape = g.shape(features).to_vec();
        if shape.len() != 2 || shape[1] != self.c_in {
            return Err(Error::ChannelMismatch {
                layer: self.name.clone(),
                expected: self.c_in,
                actual: shape.get(1).copied().unwrap_or(0),
            });
        }
        let n = shape[0];
        if positions.len() != n || neighbors.query_count() != n || neighbors.source_count() != n {
            return Err(Error::Config(format!(
                "{}: {n} feature rows, {} positions, neighbor table {}x{} over {} sources",
                self.name,
                positions.len(),
                neighbors.query_count(),
                neighbors.m(),
                neighbors.source_count()
            )));
        }
        let offsets = self.kernel.offsets(g.store());
        let theta = self.kernel.theta_t;
        let weights: Vec<Var> = self.kernel.weights.iter().map(|&w| g.param(w)).collect();
        match self.aggregation {
            Aggregation::Sum | Aggregation::Mean => {
                let scale = if self.aggregation == Aggregation::Mean {
                    T::one() / T::from_usize_lossy(neighbors.m())
                } else {
                    T::one()
                };
                let agg = correlation_aggregation(positions, neighbors, &offsets, theta, scale)?;
                let per_kernel = g.sparse_aggregate(features, Arc::new(agg))?;
                let stacked = g.concat(&weights, 0)?;
                Ok(g.matmul(per_kernel, stacked)?)
            }
            Aggregation::Max => {
                let m = neighbors.m();
                let index: Arc<[usize]> = neighbors.flat().into();
                let gathered = g.gather_rows(features, index)?;
                let wide = g.concat(&weights, 1)?;
                let transformed = g.matmul(gathered, wide)?;
                let corr: Arc<[T]> = correlation_dense(positions, neighbors, &offsets, theta).into();
                let combined = g.block_combine(transformed, corr, offsets.len())?;
                Ok(g.group_max(combined, m)?)
            }
        }
    }
}
