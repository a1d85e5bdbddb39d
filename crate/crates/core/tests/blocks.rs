mod common;

use std::sync::Arc;

use acpseg::blocks::{
    interpolation_map, Block, BlockConfig, BlockKind, Bottleneck, FeaturePropagator, MssBlock, Neighborhood,
};
use acpseg::geometry::{knn_positions, NeighborTable};
use acpseg::graph::layers::{Activation, Linear, LEAKY_SLOPE};
use acpseg::graph::{Mode, Tensor};
use acpseg::{Graph64, ParamStore64};
use common::{acpconv_oracle, cube_points, rng, Agg};
use rand::Rng;

fn plain_cfg(k: usize, activation: Activation) -> BlockConfig {
    BlockConfig {
        kernel_points: k,
        batch_norm: false,
        activation,
        ..BlockConfig::default()
    }
}

fn random_feats(seed: u64, n: usize, c: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n * c).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn eval_block(store: &ParamStore64, block: &Block<f64>, feats: &[f64], c: usize, nb: Neighborhood<'_, f64>) -> Vec<f64> {
    let mut g = Graph64::new(store, Mode::Eval);
    let x = g.constant(Tensor::new(&[nb.positions.len(), c], feats.to_vec()).unwrap());
    let y = block.forward(&mut g, x, nb).unwrap();
    g.value(y).data().to_vec()
}

fn param_count(store: &ParamStore64) -> usize {
    store.num_trainable()
}

// ---------------------------------------------------------------------------
// MSS block
// ---------------------------------------------------------------------------

#[test]
fn mss_channel_bookkeeping() {
    let pos = cube_points(&mut rng(1), 40, 1.0);
    let table = knn_positions(&pos, &pos, 8).unwrap();
    let nb = Neighborhood { positions: &pos, neighbors: &table };
    for d_prime in [16, 32, 64, 128] {
        let q = d_prime / 4;
        let mut store = ParamStore64::new();
        let block = MssBlock::new(&mut store, "b", 12, d_prime, 48, 0.3, &BlockConfig::default(), &mut rng(2)).unwrap();
        let shapes: Vec<(usize, usize)> = block.convs.iter().map(|u| (u.conv.c_in, u.conv.c_out)).collect();
        assert_eq!(shapes, vec![(q, 2 * q), (2 * q, 2 * q), (2 * q, q)]);
        let mut g = Graph64::new(&store, Mode::Train);
        let x = g.constant(Tensor::new(&[40, 12], random_feats(3, 40, 12)).unwrap());
        let (out, merged) = block.forward_parts(&mut g, x, nb).unwrap();
        assert_eq!(g.shape(merged), &[40, d_prime]);
        assert_eq!(g.shape(out), &[40, 48]);
    }
}

#[test]
fn mss_rejects_bad_widths() {
    let mut store = ParamStore64::new();
    let cfg = BlockConfig::default();
    for d_prime in [0, 6, 10] {
        assert!(MssBlock::new(&mut store, "b", 8, d_prime, 8, 0.3, &cfg, &mut rng(0)).is_err());
    }
    assert!(MssBlock::with_reduction(&mut store, "b", 8, 10, 0.3, &cfg, &mut rng(0)).is_err());
}

#[test]
fn mss_with_zero_exit_is_identity() {
    let pos = cube_points(&mut rng(4), 30, 1.0);
    let table = knn_positions(&pos, &pos, 6).unwrap();
    let nb = Neighborhood { positions: &pos, neighbors: &table };
    let mut store = ParamStore64::new();
    let block = MssBlock::with_reduction(&mut store, "b", 16, 16, 0.3, &BlockConfig::default(), &mut rng(5)).unwrap();
    block.exit.zero_init(&mut store);
    let feats = random_feats(6, 30, 16);
    for mode in [Mode::Train, Mode::Eval] {
        let mut g = Graph64::new(&store, mode);
        let x = g.constant(Tensor::new(&[30, 16], feats.clone()).unwrap());
        let y = block.forward(&mut g, x, nb).unwrap();
        assert_eq!(g.value(y).data(), feats.as_slice(), "{mode:?}");
    }
}

fn linear_oracle(store: &ParamStore64, lin: &Linear, x: &[f64], n: usize) -> Vec<f64> {
    let w = store.tensor(lin.weight).data();
    let b = lin.bias.map(|b| store.tensor(b).data().to_vec());
    let mut out = vec![0.0; n * lin.c_out];
    for i in 0..n {
        for o in 0..lin.c_out {
            let mut s = b.as_ref().map_or(0.0, |b| b[o]);
            for c in 0..lin.c_in {
                s += x[i * lin.c_in + c] * w[c * lin.c_out + o];
            }
            out[i * lin.c_out + o] = s;
        }
    }
    out
}

fn leaky(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x *= LEAKY_SLOPE;
        }
    }
}

fn columns(x: &[f64], n: usize, width: usize, start: usize, len: usize) -> Vec<f64> {
    (0..n).flat_map(|i| x[i * width + start..i * width + start + len].to_vec()).collect()
}

fn hcat(parts: &[(&[f64], usize)], n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..n {
        for (p, w) in parts {
            out.extend_from_slice(&p[i * w..(i + 1) * w]);
        }
    }
    out
}

#[test]
fn mss_matches_scalar_dataflow_transcription() {
    let n = 25;
    let pos = cube_points(&mut rng(7), n, 1.0);
    let table = knn_positions(&pos, &pos, 7).unwrap();
    let rows: Vec<Vec<usize>> = (0..n).map(|i| table.row(i).to_vec()).collect();
    let nb = Neighborhood { positions: &pos, neighbors: &table };
    let cfg = BlockConfig {
        theta_deg: 60.0,
        ..plain_cfg(5, Activation::LeakyRelu)
    };
    let mut store = ParamStore64::new();
    let (d_in, d_prime, d_out) = (6, 16, 10);
    let q = d_prime / 4;
    let block = MssBlock::new(&mut store, "b", d_in, d_prime, d_out, 0.3, &cfg, &mut rng(8)).unwrap();
    let feats = random_feats(9, n, d_in);

    let conv = |idx: usize, x: &[f64]| {
        let c = &block.convs[idx].conv;
        let w: Vec<Vec<f64>> = c.kernel.weights.iter().map(|&w| store.tensor(w).data().to_vec()).collect();
        let mut y = acpconv_oracle(&pos, &rows, &c.kernel.offsets(&store), c.kernel.theta_t, &w, x, c.c_in, c.c_out, Agg::Sum);
        leaky(&mut y);
        y
    };

    let mut x = linear_oracle(&store, &block.entry.linear, &feats, n);
    leaky(&mut x);
    let x1 = columns(&x, n, d_prime, 0, q);
    let x2 = columns(&x, n, d_prime, q, q);
    let x3 = columns(&x, n, d_prime, 2 * q, q);
    let x4 = columns(&x, n, d_prime, 3 * q, q);
    let c1 = conv(0, &x2);
    let (y2, z2) = (columns(&c1, n, 2 * q, 0, q), columns(&c1, n, 2 * q, q, q));
    let c2 = conv(1, &hcat(&[(&z2, q), (&x3, q)], n));
    let (y3, z3) = (columns(&c2, n, 2 * q, 0, q), columns(&c2, n, 2 * q, q, q));
    let y4 = conv(2, &hcat(&[(&z3, q), (&x4, q)], n));
    let merged = hcat(&[(&x1, q), (&y2, q), (&y3, q), (&y4, q)], n);
    let mut main = linear_oracle(&store, &block.exit.linear, &merged, n);
    leaky(&mut main);
    let residual = linear_oracle(&store, block.residual_proj.as_ref().unwrap(), &feats, n);
    let want: Vec<f64> = main.iter().zip(&residual).map(|(a, b)| a + b).collect();

    let mut g = Graph64::new(&store, Mode::Eval);
    let xv = g.constant(Tensor::new(&[n, d_in], feats.clone()).unwrap());
    let (out, merged_v) = block.forward_parts(&mut g, xv, nb).unwrap();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff(g.value(merged_v).data(), &merged) < 1e-12);
    assert!(diff(g.value(out).data(), &want) < 1e-12);
}

// ---------------------------------------------------------------------------
// Receptive field on a path graph
// ---------------------------------------------------------------------------

/// Points on the x axis, each linked to itself and its two path neighbors,
/// with kernels pointing along +x and -x.
fn path_setup(n: usize) -> (Vec<[f64; 3]>, NeighborTable) {
    let pos: Vec<[f64; 3]> = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
    let idx: Vec<usize> = (0..n).flat_map(|i| [i.saturating_sub(1), i, (i + 1).min(n - 1)]).collect();
    (pos, NeighborTable::new(idx, 3, n).unwrap())
}

fn point_kernels(store: &mut ParamStore64, block: &Block<f64>) {
    let units: Vec<_> = match block {
        Block::Mss(b) => b.convs.iter().collect(),
        Block::Bottleneck(b) => vec![&b.conv],
    };
    for u in units {
        store
            .set_values(u.conv.kernel.offsets, &[0.0, 0.0, 0.0, 0.1, 0.0, 0.0, -0.1, 0.0, 0.0])
            .unwrap();
    }
}

fn reach(kind: BlockKind) -> usize {
    let n = 21;
    let (pos, table) = path_setup(n);
    let nb = Neighborhood { positions: &pos, neighbors: &table };
    let mut store = ParamStore64::new();
    let block = Block::new(kind, &mut store, "b", 16, 16, 0.3, &plain_cfg(3, Activation::LeakyRelu), &mut rng(10)).unwrap();
    point_kernels(&mut store, &block);
    let base = random_feats(11, n, 16);
    let mut bumped = base.clone();
    for c in 0..16 {
        bumped[10 * 16 + c] += 0.5;
    }
    let y0 = eval_block(&store, &block, &base, 16, nb);
    let y1 = eval_block(&store, &block, &bumped, 16, nb);
    (0..n)
        .filter(|&i| (0..16).any(|c| (y0[i * 16 + c] - y1[i * 16 + c]).abs() > 1e-14))
        .map(|i| i.abs_diff(10))
        .max()
        .unwrap()
}

#[test]
fn mss_reaches_three_hops_and_bottleneck_one() {
    assert_eq!(reach(BlockKind::Mss), 3);
    assert_eq!(reach(BlockKind::Bottleneck), 1);
}

// ---------------------------------------------------------------------------
// Bottleneck
// ---------------------------------------------------------------------------

#[test]
fn bottleneck_with_single_kernel_is_pointwise() {
    let n = 30;
    let pos = cube_points(&mut rng(12), n, 1.0);
    let table = knn_positions(&pos, &pos, 8).unwrap();
    let nb = Neighborhood { positions: &pos, neighbors: &table };
    let mut store = ParamStore64::new();
    let block = Block::new(BlockKind::Bottleneck, &mut store, "b", 8, 8, 0.3, &plain_cfg(1, Activation::LeakyRelu), &mut rng(13))
        .unwrap();
    let base = random_feats(14, n, 8);
    let mut bumped = base.clone();
    bumped[5 * 8] += 1.0;
    let y0 = eval_block(&store, &block, &base, 8, nb);
    let y1 = eval_block(&store, &block, &bumped, 8, nb);
    for i in 0..n {
        let changed = (0..8).any(|c| y0[i * 8 + c] != y1[i * 8 + c]);
        assert_eq!(changed, i == 5, "point {i}");
    }
}

#[test]
fn bottleneck_with_identity_activation_and_one_kernel_is_linear() {
    let n = 20;
    let pos = cube_points(&mut rng(15), n, 1.0);
    let table = knn_positions(&pos, &pos, 5).unwrap();
    let nb = Neighborhood { positions: &pos, neighbors: &table };
    let mut store = ParamStore64::new();
    let block = Bottleneck::new(&mut store, "b", 6, 8, 0.3, &plain_cfg(1, Activation::Identity), &mut rng(16)).unwrap();
    let w0 = store.tensor(block.conv.conv.kernel.weights[0]).data().to_vec();
    let feats = random_feats(17, n, 6);
    let mid = linear_oracle(&store, &block.reduce.linear, &feats, n);
    let d = block.d_mid;
    let conv: Vec<f64> = (0..n)
        .flat_map(|i| (0..d).map(|o| (0..d).map(|c| mid[i * d + c] * w0[c * d + o]).sum::<f64>()).collect::<Vec<_>>())
        .collect();
    let main = linear_oracle(&store, &block.expand.linear, &conv, n);
    let res = linear_oracle(&store, block.residual_proj.as_ref().unwrap(), &feats, n);
    let mut g = Graph64::new(&store, Mode::Eval);
    let x = g.constant(Tensor::new(&[n, 6], feats).unwrap());
    let y = block.forward(&mut g, x, nb).unwrap();
    for (k, got) in g.value(y).data().iter().enumerate() {
        assert!((got - (main[k] + res[k])).abs() < 1e-12);
    }
}

#[test]
fn bottleneck_with_zero_expand_is_identity() {
    let n = 20;
    let pos = cube_points(&mut rng(18), n, 1.0);
    let table = knn_positions(&pos, &pos, 5).unwrap();
    let nb = Neighborhood { positions: &pos, neighbors: &table };
    let mut store = ParamStore64::new();
    let block = Bottleneck::new(&mut store, "b", 16, 16, 0.3, &BlockConfig::default(), &mut rng(19)).unwrap();
    block.expand.zero_init(&mut store);
    let feats = random_feats(20, n, 16);
    let mut g = Graph64::new(&store, Mode::Train);
    let x = g.constant(Tensor::new(&[n, 16], feats.clone()).unwrap());
    let y = block.forward(&mut g, x, nb).unwrap();
    assert_eq!(g.value(y).data(), feats.as_slice());
}

#[test]
fn mss_has_fewer_parameters_than_bottleneck_at_equal_width() {
    for width in [16, 32, 64, 128] {
        let mut a = ParamStore64::new();
        let mut b = ParamStore64::new();
        let cfg = BlockConfig::default();
        MssBlock::with_reduction(&mut a, "m", width, width, 0.3, &cfg, &mut rng(0)).unwrap();
        Bottleneck::new(&mut b, "b", width, width, 0.3, &cfg, &mut rng(0)).unwrap();
        assert!(param_count(&a) < param_count(&b), "width {width}: {} vs {}", param_count(&a), param_count(&b));
    }
}

#[test]
fn blocks_report_channel_mismatch() {
    let pos = cube_points(&mut rng(21), 10, 1.0);
    let table = knn_positions(&pos, &pos, 4).unwrap();
    let nb = Neighborhood { positions: &pos, neighbors: &table };
    for kind in [BlockKind::Mss, BlockKind::Bottleneck] {
        let mut store = ParamStore64::new();
        let block = Block::new(kind, &mut store, "b", 16, 16, 0.3, &BlockConfig::default(), &mut rng(0)).unwrap();
        let mut g = Graph64::new(&store, Mode::Eval);
        let x = g.constant(Tensor::zeros(&[10, 15]));
        assert!(matches!(block.forward(&mut g, x, nb), Err(acpseg::Error::ChannelMismatch { .. })));
    }
}

// ---------------------------------------------------------------------------
// Feature propagation
// ---------------------------------------------------------------------------

fn propagate(coarse: &[[f64; 3]], feats: &[f64], c: usize, fine: &[[f64; 3]], k: usize) -> Vec<f64> {
    let store = ParamStore64::new();
    let mut g = Graph64::new(&store, Mode::Eval);
    let x = g.constant(Tensor::new(&[coarse.len(), c], feats.to_vec()).unwrap());
    let y = FeaturePropagator::new(k, None).forward(&mut g, coarse, x, fine, None).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn interpolation_copies_coincident_points() {
    let coarse = cube_points(&mut rng(22), 15, 1.0);
    let feats = random_feats(23, 15, 3);
    let got = propagate(&coarse, &feats, 3, &coarse, 3);
    assert_eq!(got, feats);
}

#[test]
fn interpolation_preserves_constants() {
    let coarse = cube_points(&mut rng(24), 20, 1.0);
    let fine = cube_points(&mut rng(25), 50, 1.2);
    let feats: Vec<f64> = (0..20).flat_map(|_| [2.5, -1.0]).collect();
    let got = propagate(&coarse, &feats, 2, &fine, 3);
    for row in got.chunks(2) {
        assert!((row[0] - 2.5).abs() < 1e-12 && (row[1] + 1.0).abs() < 1e-12);
    }
}

#[test]
fn interpolation_hand_weights_in_one_dimension() {
    // d^2 = 0.0625 and 0.5625 give inverse weights 16 and 16/9, i.e. 0.9/0.1.
    let coarse = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
    let got = propagate(&coarse, &[10.0, 20.0, 40.0], 1, &[[0.25, 0.0, 0.0]], 2);
    let w0 = (1.0 / (0.0625 + 1e-8)) / (1.0 / (0.0625 + 1e-8) + 1.0 / (0.5625 + 1e-8));
    assert!((got[0] - (w0 * 10.0 + (1.0 - w0) * 20.0)).abs() < 1e-12);
    assert!((got[0] - 11.0).abs() < 1e-6);
}

#[test]
fn interpolation_weights_sum_to_one() {
    let coarse = cube_points(&mut rng(26), 40, 1.0);
    let fine = cube_points(&mut rng(27), 200, 1.0);
    for k in [1, 3, 8, 100] {
        let map = interpolation_map(&coarse, &fine, k).unwrap();
        for s in map.weight_sums() {
            assert!((s - 1.0).abs() < 1e-12, "k {k}");
        }
        assert!(map.entries().iter().all(|e| e.weight >= 0.0));
    }
}

#[test]
fn propagation_with_skip_concatenates() {
    let coarse = cube_points(&mut rng(28), 10, 1.0);
    let fine = cube_points(&mut rng(29), 30, 1.0);
    let store = ParamStore64::new();
    let mut g = Graph64::new(&store, Mode::Eval);
    let x = g.constant(Tensor::zeros(&[10, 4]));
    let skip = g.constant(Tensor::filled(&[30, 2], 1.0));
    let map = Arc::new(interpolation_map(&coarse, &fine, 3).unwrap());
    let y = FeaturePropagator::default().forward_mapped(&mut g, &map, x, Some(skip)).unwrap();
    assert_eq!(g.shape(y), &[30, 6]);
    assert!(g.value(y).data().chunks(6).all(|r| r[..4] == [0.0; 4] && r[4..] == [1.0; 2]));
}
