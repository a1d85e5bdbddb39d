use crate::graph::ops::split_dims;
use crate::graph::{Graph, GraphError, Op, Var};
use crate::scalar::Real;

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
    match &mut grads[v.index()] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

impl<'s, T: Real> Graph<'s, T> {
    /// Propagates `d root / d node` to every node that requires a gradient.
    ///
    /// Gradients from multiple consumers of a node are summed. Previous
    /// gradients in the graph are overwritten.
    pub fn backward(&mut self, root: Var) -> Result<(), GraphError> {
        let shape = self.shape(root).to_vec();
        if self.value(root).numel() != 1 {
            return Err(GraphError::NonScalarRoot { shape });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.index() + 1];
        grads[root.index()] = Some(vec![T::one()]);

        for idx in (0..=root.index()).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].value.requires_grad() {
                continue;
            }
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        for (idx, node) in self.nodes.iter_mut().enumerate() {
            let g = if node.value.requires_grad() {
                grads.get_mut(idx).and_then(Option::take)
            } else {
                None
            };
            node.value.set_grad(g);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.index()].value.requires_grad()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.index()].value.data()
    }

    fn propagate(&self, idx: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let av = self.data(a);
                let bv = self.data(b);
                if self.needs(a) {
                    // dA = dY @ B^T
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let dyr = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let br = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = dyr.iter().zip(br).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    accumulate(grads, a, da);
                }
                if self.needs(b) {
                    // dB = A^T @ dY
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        let dyr = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = av[i * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            for (d, &g) in db[p * n..(p + 1) * n].iter_mut().zip(dyr) {
                                *d += av * g;
                            }
                        }
                    }
                    accumulate(grads, b, db);
                }
            }
            &Op::Add(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, dy.to_vec());
                }
                if self.needs(b) {
                    accumulate(grads, b, dy.to_vec());
                }
            }
            &Op::Sub(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, dy.to_vec());
                }
                if self.needs(b) {
                    accumulate(grads, b, dy.iter().map(|&g| -g).collect());
                }
            }
            &Op::AddRow(a, row) => {
                if self.needs(a) {
                    accumulate(grads, a, dy.to_vec());
                }
                if self.needs(row) {
                    let c = self.shape(row)[1];
                    let mut dr = vec![T::zero(); c];
                    for (i, &g) in dy.iter().enumerate() {
                        dr[i % c] += g;
                    }
                    accumulate(grads, row, dr);
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.data(a), self.data(b));
                if self.needs(a) {
                    accumulate(grads, a, dy.iter().zip(bv).map(|(&g, &x)| g * x).collect());
                }
                if self.needs(b) {
                    accumulate(grads, b, dy.iter().zip(av).map(|(&g, &x)| g * x).collect());
                }
            }
            &Op::Scale(a, s) => accumulate(grads, a, dy.iter().map(|&g| g * s).collect()),
            &Op::Relu(a) => {
                let x = self.data(a);
                let d = dy
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                accumulate(grads, a, d);
            }
            &Op::LeakyRelu(a, slope) => {
                let x = self.data(a);
                let d = dy
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > T::zero() { g } else { g * slope })
                    .collect();
                accumulate(grads, a, d);
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_dims(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if self.needs(v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            d.extend_from_slice(&dy[base..base + len * inner]);
                        }
                        accumulate(grads, v, d);
                    }
                    offset += len;
                }
            }
            &Op::Slice { input, axis, start } => {
                let in_shape = self.shape(input);
                let (outer, dim, inner) = split_dims(in_shape, axis);
                let len = node.value.shape()[axis];
                let mut d = vec![T::zero(); outer * dim * inner];
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    d[base..base + len * inner]
                        .copy_from_slice(&dy[o * len * inner..(o + 1) * len * inner]);
                }
                accumulate(grads, input, d);
            }
            &Op::Reshape(a) => accumulate(grads, a, dy.to_vec()),
            Op::GatherRows { input, index } => {
                let (n, c) = (self.shape(*input)[0], self.shape(*input)[1]);
                let mut d = vec![T::zero(); n * c];
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += dy[r * c + j];
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::ScatterAddRows { input, index } => {
                let c = self.shape(*input)[1];
                let mut d = Vec::with_capacity(index.len() * c);
                for &i in index.iter() {
                    d.extend_from_slice(&dy[i * c..(i + 1) * c]);
                }
                accumulate(grads, *input, d);
            }
            &Op::Softmax(a) => {
                let last = *node.value.shape().last().expect("non-empty");
                let mut d = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(last).zip(y.chunks(last)).zip(dy.chunks(last)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &g)| p * g).sum();
                    for ((o, &p), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = p * (g - dot);
                    }
                }
                accumulate(grads, a, d);
            }
            &Op::Log(a) => {
                let x = self.data(a);
                accumulate(grads, a, dy.iter().zip(x).map(|(&g, &x)| g / x).collect());
            }
            &Op::Sum(a) => {
                let n = self.data(a).len();
                accumulate(grads, a, vec![dy[0]; n]);
            }
            &Op::Mean(a) => {
                let n = self.data(a).len();
                let g = dy[0] / T::from_usize_lossy(n);
                accumulate(grads, a, vec![g; n]);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for r in 0..n {
                    for j in 0..c {
                        sum_dy[j] += dy[r * c + j];
                        sum_dy_xhat[j] += dy[r * c + j] * xhat[r * c + j];
                    }
                }
                if self.needs(*gamma) {
                    accumulate(grads, *gamma, sum_dy_xhat.clone());
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, sum_dy.clone());
                }
                if self.needs(*x) {
                    let g = self.data(*gamma);
                    let mut d = vec![T::zero(); n * c];
                    if *batch_stats {
                        let nf = T::from_usize_lossy(n);
                        for r in 0..n {
                            for j in 0..c {
                                let k = r * c + j;
                                d[k] = g[j] * inv_std[j] / nf
                                    * (nf * dy[k] - sum_dy[j] - xhat[k] * sum_dy_xhat[j]);
                            }
                        }
                    } else {
                        for r in 0..n {
                            for j in 0..c {
                                d[r * c + j] = dy[r * c + j] * g[j] * inv_std[j];
                            }
                        }
                    }
                    accumulate(grads, *x, d);
                }
            }
            Op::CrossEntropy { probs, targets } => {
                let c = self.shape(*probs)[1];
                let p = self.data(*probs);
                let nf = T::from_usize_lossy(targets.len());
                let mut d = vec![T::zero(); p.len()];
                for (i, &t) in targets.iter().enumerate() {
                    d[i * c + t] = -dy[0] / (nf * p[i * c + t]);
                }
                accumulate(grads, *probs, d);
            }
            Op::CrossEntropyLogits {
                logits,
                targets,
                softmax,
            } => {
                let c = self.shape(*logits)[1];
                let scale = dy[0] / T::from_usize_lossy(targets.len());
                let mut d: Vec<T> = softmax.iter().map(|&p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    d[i * c + t] -= scale;
                }
                accumulate(grads, *logits, d);
            }
            Op::SparseAggregate { input, agg } => {
                let c = self.shape(*input)[1];
                accumulate(grads, *input, agg.apply_transpose(dy, c));
            }
            Op::BlockCombine { input, weights, k } => {
                let (r, kc) = (self.shape(*input)[0], self.shape(*input)[1]);
                let c = kc / k;
                let mut d = vec![T::zero(); r * kc];
                for i in 0..r {
                    for kk in 0..*k {
                        let w = weights[i * k + kk];
                        for j in 0..c {
                            d[i * kc + kk * c + j] = w * dy[i * c + j];
                        }
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::GroupMax { input, argmax } => {
                let c = self.shape(*input)[1];
                let mut d = vec![T::zero(); self.data(*input).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    d[src * c + o % c] += dy[o];
                }
                accumulate(grads, *input, d);
            }
        }
    }
}
