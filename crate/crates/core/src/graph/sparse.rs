use crate::graph::GraphError;
use crate::scalar::Real;

/// One weighted contribution `out[row, slot, :] += weight * x[src, :]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggEntry<T> {
    pub row: usize,
    pub slot: usize,
    pub src: usize,
    pub weight: T,
}

/// Fixed (non-differentiable) sparse weighting that maps `src_rows x C`
/// features to `rows x (slots * C)`.
///
/// Kernel-correlation aggregation and inverse-distance interpolation are both
/// instances. Entries are kept sorted by `(row, slot, src)`, which fixes the
/// reduction order of the forward and backward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAggregation<T> {
    rows: usize,
    slots: usize,
    src_rows: usize,
    entries: Vec<AggEntry<T>>,
}

impl<T: Real> SparseAggregation<T> {
    pub fn new(
        rows: usize,
        slots: usize,
        src_rows: usize,
        mut entries: Vec<AggEntry<T>>,
    ) -> Result<Self, GraphError> {
        if rows == 0 || slots == 0 || src_rows == 0 {
            return Err(GraphError::InvalidArgument {
                op: "sparse_aggregation",
                msg: format!("empty extent rows={rows} slots={slots} src_rows={src_rows}"),
            });
        }
        for e in &entries {
            if e.row >= rows || e.slot >= slots || e.src >= src_rows {
                return Err(GraphError::InvalidArgument {
                    op: "sparse_aggregation",
                    msg: format!(
                        "entry (row {}, slot {}, src {}) outside {rows}x{slots} <- {src_rows}",
                        e.row, e.slot, e.src
                    ),
                });
            }
        }
        entries.sort_by_key(|e| (e.row, e.slot, e.src));
        Ok(Self {
            rows,
            slots,
            src_rows,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn src_rows(&self) -> usize {
        self.src_rows
    }

    pub fn entries(&self) -> &[AggEntry<T>] {
        &self.entries
    }

    /// Sum of weights landing in each `(row, slot)`.
    pub fn weight_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.rows * self.slots];
        for e in &self.entries {
            sums[e.row * self.slots + e.slot] += e.weight;
        }
        sums
    }

    /// Multiplies every weight by `s`.
    pub fn scaled(mut self, s: T) -> Self {
        for e in &mut self.entries {
            e.weight *= s;
        }
        self
    }

    pub(crate) fn apply(&self, x: &[T], cols: usize) -> Vec<T> {
        let out_cols = self.slots * cols;
        let mut out = vec![T::zero(); self.rows * out_cols];
        for e in &self.entries {
            let dst = &mut out[e.row * out_cols + e.slot * cols..][..cols];
            let src = &x[e.src * cols..][..cols];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += e.weight * s;
            }
        }
        out
    }

    pub(crate) fn apply_transpose(&self, dout: &[T], cols: usize) -> Vec<T> {
        let out_cols = self.slots * cols;
        let mut dx = vec![T::zero(); self.src_rows * cols];
        for e in &self.entries {
            let g = &dout[e.row * out_cols + e.slot * cols..][..cols];
            let d = &mut dx[e.src * cols..][..cols];
            for (d, &g) in d.iter_mut().zip(g) {
                *d += e.weight * g;
            }
        }
        dx
    }
}
