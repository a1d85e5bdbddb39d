use std::sync::Arc;

use crate::graph::{Graph, GraphError, Mode, Op, ParamId, SparseAggregation, Var};
use crate::scalar::Real;

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> GraphError {
    GraphError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> GraphError {
    GraphError::InvalidArgument {
        op,
        msg: msg.into(),
    }
}

/// `(outer, axis_len, inner)` decomposition of `shape` around `axis`.
pub(crate) fn split_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

impl<'s, T: Real> Graph<'s, T> {
    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize), GraphError> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(invalid(op, format!("expected a rank-2 tensor, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), GraphError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.record(&shape, data, op, &[a])
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.record(&shape, data, op, &[a, b])
    }

    /// `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.record(&[m, n], data, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape("add", a, b)?;
        Ok(self.binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape("sub", a, b)?;
        Ok(self.binary(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape("mul", a, b)?;
        Ok(self.binary(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a `[1,c]` row to every row of a `[n,c]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, GraphError> {
        let (n, c) = self.rank2("add_row", a)?;
        let (one, c2) = self.rank2("add_row", row)?;
        if one != 1 || c != c2 {
            return Err(mismatch("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % c])
            .collect();
        Ok(self.record(&[n, c], data, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * slope })
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, GraphError> {
        let first = *inputs.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_dims(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        Ok(self.record(
            &shape,
            data,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, GraphError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, dim, inner) = split_dims(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.record(&out_shape, data, Op::Slice { input: a, axis, start }, &[a]))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>, GraphError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || sizes.iter().sum::<usize>() != shape[axis] {
            return Err(invalid(
                "split",
                format!("sizes {sizes:?} do not tile axis {axis} of {shape:?}"),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(a, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, GraphError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() || shape.contains(&0) {
            return Err(mismatch("reshape", self.shape(a), shape));
        }
        let data = self.value(a).data().to_vec();
        Ok(self.record(shape, data, Op::Reshape(a), &[a]))
    }

    /// `out[i] = a[index[i]]` over rows.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, GraphError> {
        let (n, c) = self.rank2("gather_rows", a)?;
        if index.is_empty() {
            return Err(invalid("gather_rows", "empty index"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(invalid("gather_rows", format!("index {bad} >= {n} rows")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rows = index.len();
        Ok(self.record(&[rows, c], data, Op::GatherRows { input: a, index }, &[a]))
    }

    /// `out[index[i]] += a[i]` into `out_rows` rows. Each destination receives
    /// its contributions in ascending source order.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        out_rows: usize,
    ) -> Result<Var, GraphError> {
        let (n, c) = self.rank2("scatter_add_rows", a)?;
        if index.len() != n || out_rows == 0 {
            return Err(invalid(
                "scatter_add_rows",
                format!("{} indices for {n} rows into {out_rows}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(invalid(
                "scatter_add_rows",
                format!("index {bad} >= {out_rows} rows"),
            ));
        }
        let src = self.value(a).data();
        let mut data = vec![T::zero(); out_rows * c];
        for (s, &d) in index.iter().enumerate() {
            for j in 0..c {
                data[d * c + j] += src[s * c + j];
            }
        }
        Ok(self.record(
            &[out_rows, c],
            data,
            Op::ScatterAddRows { input: a, index },
            &[a],
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let last = *shape.last().expect("non-empty shape");
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(last) {
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        self.record(&shape, data, Op::Softmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.record(&[1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::from_usize_lossy(t.numel());
        self.record(&[1], vec![m], Op::Mean(a), &[a])
    }

    /// Batch normalization over the row (point) axis of an `[n,c]` matrix.
    ///
    /// In train mode the batch mean and biased variance normalize the input and
    /// the running statistics are updated as
    /// `running = momentum * running + (1 - momentum) * batch` (unbiased batch
    /// variance). In eval mode the running statistics are used instead.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        momentum: T,
        eps: T,
    ) -> Result<Var, GraphError> {
        let (n, c) = self.rank2("batch_norm", x)?;
        let g = self.param(gamma);
        let b = self.param(beta);
        for v in [g, b] {
            if self.value(v).numel() != c {
                return Err(mismatch("batch_norm", self.shape(x), self.shape(v)));
            }
        }
        let xs = self.value(x).data();
        let batch_stats = self.mode() == Mode::Train;
        let (mean, var) = if batch_stats {
            let nf = T::from_usize_lossy(n);
            let mut mean = vec![T::zero(); c];
            for r in 0..n {
                for j in 0..c {
                    mean[j] += xs[r * c + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= nf);
            let mut var = vec![T::zero(); c];
            for r in 0..n {
                for j in 0..c {
                    let d = xs[r * c + j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= nf);
            (mean, var)
        } else {
            (
                self.store().tensor(running_mean).data().to_vec(),
                self.store().tensor(running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(g).data();
        let bv = self.value(b).data();
        let mut xhat = vec![T::zero(); n * c];
        let mut out = vec![T::zero(); n * c];
        for r in 0..n {
            for j in 0..c {
                let h = (xs[r * c + j] - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                out[r * c + j] = gv[j] * h + bv[j];
            }
        }
        if batch_stats {
            let one = T::one();
            let unbias = if n > 1 {
                T::from_usize_lossy(n) / T::from_usize_lossy(n - 1)
            } else {
                one
            };
            let rm = self.store().tensor(running_mean).data();
            let rv = self.store().tensor(running_var).data();
            let new_mean = rm
                .iter()
                .zip(&mean)
                .map(|(&r, &m)| momentum * r + (one - momentum) * m)
                .collect();
            let new_var = rv
                .iter()
                .zip(&var)
                .map(|(&r, &v)| momentum * r + (one - momentum) * v * unbias)
                .collect();
            self.queue_buffer_update(running_mean, new_mean);
            self.queue_buffer_update(running_var, new_var);
        }
        Ok(self.record(
            &[n, c],
            out,
            Op::BatchNorm {
                x,
                gamma: g,
                beta: b,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, g, b],
        ))
    }

    fn check_targets(&self, op: &'static str, v: Var, targets: &[usize]) -> Result<(usize, usize), GraphError> {
        let (n, c) = self.rank2(op, v)?;
        if targets.len() != n {
            return Err(invalid(op, format!("{} targets for {n} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(invalid(op, format!("target {bad} >= {c} classes")));
        }
        Ok((n, c))
    }

    /// Mean negative log-likelihood of row-normalized probabilities.
    pub fn cross_entropy(&mut self, probs: Var, targets: Arc<[usize]>) -> Result<Var, GraphError> {
        let (n, c) = self.check_targets("cross_entropy", probs, &targets)?;
        let p = self.value(probs).data();
        let s: T = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -p[i * c + t].ln())
            .sum();
        let loss = s / T::from_usize_lossy(n);
        Ok(self.record(&[1], vec![loss], Op::CrossEntropy { probs, targets }, &[probs]))
    }

    /// Mean cross-entropy of `softmax(logits)` against integer targets,
    /// evaluated through a stable log-sum-exp.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: Arc<[usize]>,
    ) -> Result<Var, GraphError> {
        let (n, c) = self.check_targets("cross_entropy_logits", logits, &targets)?;
        let z = self.value(logits).data();
        let mut softmax = vec![T::zero(); n * c];
        let mut total = T::zero();
        for i in 0..n {
            let row = &z[i * c..(i + 1) * c];
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut s = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                softmax[i * c + j] = e;
                s += e;
            }
            for j in 0..c {
                softmax[i * c + j] /= s;
            }
            total += m + s.ln() - row[targets[i]];
        }
        let loss = total / T::from_usize_lossy(n);
        Ok(self.record(
            &[1],
            vec![loss],
            Op::CrossEntropyLogits {
                logits,
                targets,
                softmax,
            },
            &[logits],
        ))
    }

    /// Applies a fixed sparse weighting: `[src_rows, c] -> [rows, slots * c]`.
    pub fn sparse_aggregate(
        &mut self,
        a: Var,
        agg: Arc<SparseAggregation<T>>,
    ) -> Result<Var, GraphError> {
        let (n, c) = self.rank2("sparse_aggregate", a)?;
        if n != agg.src_rows() {
            return Err(mismatch(
                "sparse_aggregate",
                self.shape(a),
                &[agg.src_rows(), c],
            ));
        }
        let data = agg.apply(self.value(a).data(), c);
        let shape = [agg.rows(), agg.slots() * c];
        Ok(self.record(&shape, data, Op::SparseAggregate { input: a, agg }, &[a]))
    }

    /// `[r, k*c] -> [r, c]` with `out[r, :] = sum_k weights[r*k + k'] * a[r, k'*c..]`.
    pub fn block_combine(&mut self, a: Var, weights: Arc<[T]>, k: usize) -> Result<Var, GraphError> {
        let (r, kc) = self.rank2("block_combine", a)?;
        if k == 0 || kc % k != 0 || weights.len() != r * k {
            return Err(invalid(
                "block_combine",
                format!("{} weights, k={k} for input {:?}", weights.len(), self.shape(a)),
            ));
        }
        let c = kc / k;
        let x = self.value(a).data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for kk in 0..k {
                let w = weights[i * k + kk];
                if w == T::zero() {
                    continue;
                }
                let src = &x[i * kc + kk * c..][..c];
                for (o, &s) in data[i * c..(i + 1) * c].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(self.record(&[r, c], data, Op::BlockCombine { input: a, weights, k }, &[a]))
    }

    /// Column-wise max over consecutive groups of `group` rows:
    /// `[g*group, c] -> [g, c]`. Ties route the gradient to the first maximum.
    pub fn group_max(&mut self, a: Var, group: usize) -> Result<Var, GraphError> {
        let (n, c) = self.rank2("group_max", a)?;
        if group == 0 || n % group != 0 {
            return Err(invalid("group_max", format!("{n} rows not divisible by group {group}")));
        }
        let g = n / group;
        let x = self.value(a).data();
        let mut data = vec![T::zero(); g * c];
        let mut argmax = vec![0usize; g * c];
        for gi in 0..g {
            for j in 0..c {
                let mut best = gi * group;
                for r in gi * group + 1..(gi + 1) * group {
                    if x[r * c + j] > x[best * c + j] {
                        best = r;
                    }
                }
                data[gi * c + j] = x[best * c + j];
                argmax[gi * c + j] = best;
            }
        }
        Ok(self.record(&[g, c], data, Op::GroupMax { input: a, argmax }, &[a]))
    }
}
