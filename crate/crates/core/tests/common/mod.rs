//! Brute-force reference implementations shared by the integration tests.
//! Each one is written from the definition with plain loops and no use of
//! the library code it checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cube_points(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-half..half)))
        .collect()
}

pub fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Sorts all sources by `(distance, index)`, keeps the first `m`, pads with
/// the nearest when `m` exceeds the source count.
pub fn brute_knn(source: &[[f64; 3]], query: &[f64; 3], m: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = source.iter().enumerate().map(|(i, p)| (d2(p, query), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut row: Vec<usize> = all.iter().take(m).map(|x| x.1).collect();
    while row.len() < m {
        row.push(all[0].1);
    }
    row
}

/// Smallest pairwise distance among `idx`.
pub fn min_pairwise(points: &[[f64; 3]], idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            best = best.min(d2(&points[idx[a]], &points[idx[b]]).sqrt());
        }
    }
    best
}

/// Largest distance from any point to its nearest point in `idx`.
pub fn coverage_radius(points: &[[f64; 3]], idx: &[usize]) -> f64 {
    points
        .iter()
        .map(|p| idx.iter().map(|&j| d2(p, &points[j]).sqrt()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Agg {
    Sum,
    Mean,
    Max,
}

/// Correlation of a relative neighbor position with kernel `k`: the center
/// kernel fires only on the query itself; others give the cosine when the
/// angle is strictly below `theta`.
pub fn corr(v: [f64; 3], k: usize, u: [f64; 3], theta: f64) -> f64 {
    let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if k == 0 {
        return if nv == 0.0 { 1.0 } else { 0.0 };
    }
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if nv == 0.0 || nu == 0.0 {
        return 0.0;
    }
    let c = (v[0] * u[0] + v[1] * u[1] + v[2] * u[2]) / (nv * nu);
    if c > theta.cos() {
        c
    } else {
        0.0
    }
}

/// Point convolution by explicit loops over points, neighbors, kernels and
/// channels. `weights[k]` is `c_in x c_out` row-major, `feats` is `N x c_in`.
#[allow(clippy::too_many_arguments)]
pub fn acpconv_oracle(
    positions: &[[f64; 3]],
    rows: &[Vec<usize>],
    offsets: &[[f64; 3]],
    theta: f64,
    weights: &[Vec<f64>],
    feats: &[f64],
    c_in: usize,
    c_out: usize,
    agg: Agg,
) -> Vec<f64> {
    let n = positions.len();
    let mut out = vec![0.0; n * c_out];
    for i in 0..n {
        let m = rows[i].len();
        let mut acc = vec![if agg == Agg::Max { f64::NEG_INFINITY } else { 0.0 }; c_out];
        for &j in &rows[i] {
            let v = [
                positions[j][0] - positions[i][0],
                positions[j][1] - positions[i][1],
                positions[j][2] - positions[i][2],
            ];
            let mut contrib = vec![0.0; c_out];
            for (k, u) in offsets.iter().enumerate() {
                let c = corr(v, k, *u, theta);
                if c == 0.0 {
                    continue;
                }
                for o in 0..c_out {
                    let mut s = 0.0;
                    for ci in 0..c_in {
                        s += feats[j * c_in + ci] * weights[k][ci * c_out + o];
                    }
                    contrib[o] += c * s;
                }
            }
            for o in 0..c_out {
                match agg {
                    Agg::Sum => acc[o] += contrib[o],
                    Agg::Mean => acc[o] += contrib[o] / m as f64,
                    Agg::Max => acc[o] = acc[o].max(contrib[o]),
                }
            }
        }
        out[i * c_out..(i + 1) * c_out].copy_from_slice(&acc);
    }
    out
}

/// `miou`, `oa`, and per-class IoU (None when a class never occurs in truth or
/// prediction) from a square count matrix indexed `[truth][pred]`.
pub fn metrics_oracle(cm: &[Vec<u64>]) -> (f64, f64, Vec<Option<f64>>) {
    let c = cm.len();
    let total: u64 = cm.iter().flatten().sum();
    let diag: u64 = (0..c).map(|i| cm[i][i]).sum();
    let mut ious = Vec::new();
    for k in 0..c {
        let tp = cm[k][k] as f64;
        let fn_: f64 = (0..c).filter(|&p| p != k).map(|p| cm[k][p] as f64).sum();
        let fp: f64 = (0..c).filter(|&t| t != k).map(|t| cm[t][k] as f64).sum();
        let denom = tp + fn_ + fp;
        ious.push(if denom == 0.0 { None } else { Some(tp / denom) });
    }
    let present: Vec<f64> = ious.iter().flatten().copied().collect();
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    (miou, diag as f64 / total as f64, ious)
}

/// Per (point, class) two-way softmax of the attention logits followed by a
/// convex mix of the branch probabilities, all in scalar loops.
pub fn fusion_oracle(logits: &[f64], p1: &[f64], p2: &[f64], n: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        for k in 0..c {
            let z1 = logits[i * 2 * c + k];
            let z2 = logits[i * 2 * c + c + k];
            let mx = z1.max(z2);
            let (e1, e2) = ((z1 - mx).exp(), (z2 - mx).exp());
            let a1 = e1 / (e1 + e2);
            out[i * c + k] = a1 * p1[i * c + k] + (1.0 - a1) * p2[i * c + k];
        }
    }
    out
}
