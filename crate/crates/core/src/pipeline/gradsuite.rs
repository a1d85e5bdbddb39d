//! Finite-difference checks over every primitive and composite layer, run on
//! small random `f64` instances. Shared by the test suite and the CLI.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acpconv::{AcpConv, Aggregation};
use crate::blocks::{BlockConfig, Bottleneck, FeaturePropagator, MssBlock, Neighborhood};
use crate::error::{Error, Result};
use crate::fusion::{attention_fuse, FusionConfig, FusionHead, FusionMode, SegmentationModel};
use crate::geometry::{knn_positions, NeighborTable};
use crate::graph::layers::{Activation, BatchNorm, SharedMlp};
use crate::graph::{
    finite_diff_check, AggEntry, GradCheckOptions, GradCheckReport, Graph, GraphError, Mode, ParamStore,
    SparseAggregation, Tensor, Var,
};
use crate::network::{Architecture, Network, NetworkConfig, ResolutionPyramid};

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Primitive,
    Composite,
}

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub kind: CheckKind,
    pub report: GradCheckReport,
    pub elapsed: Duration,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Values bounded away from zero so ReLU-type kinks stay out of probe range.
fn off_zero<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

pub fn random_positions<R: Rng>(rng: &mut R, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect()
}

/// `sum(x * w)` with a fixed random `w`: a generic scalar readout.
pub fn project(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> Result<Var, GraphError> {
    let w = random_tensor(&mut rng(seed), g.shape(x), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn run<F>(
    out: &mut Vec<SuiteEntry>,
    name: &str,
    kind: CheckKind,
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
    build: F,
) -> Result<()>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    let start = Instant::now();
    let report = finite_diff_check::<f64, Error, _>(store, inputs, &opts, build)?;
    out.push(SuiteEntry {
        name: name.to_string(),
        kind,
        report,
        elapsed: start.elapsed(),
    });
    Ok(())
}

fn prim(tol: f64) -> GradCheckOptions {
    GradCheckOptions::new(STEP, tol)
}

pub fn primitive_suite() -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let p = CheckKind::Primitive;
    let opts = || prim(PRIMITIVE_TOL);
    let mut r = rng(11);
    let mut empty = ParamStore::<f64>::new();
    let a34 = random_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let b34 = random_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let b45 = random_tensor(&mut r, &[4, 5], -1.0, 1.0);
    let row4 = random_tensor(&mut r, &[1, 4], -1.0, 1.0);
    let kinked = off_zero(&mut r, &[4, 3]);
    let pos = random_tensor(&mut r, &[3, 4], 0.2, 2.0);

    run(&mut out, "matmul", p, &mut empty, &[a34.clone(), b45], opts(), |g, v| {
        let y = g.matmul(v[0], v[1])?;
        Ok(project(g, y, 1)?)
    })?;
    run(&mut out, "add", p, &mut empty, &[a34.clone(), b34.clone()], opts(), |g, v| {
        let y = g.add(v[0], v[1])?;
        Ok(project(g, y, 2)?)
    })?;
    run(&mut out, "sub", p, &mut empty, &[a34.clone(), b34.clone()], opts(), |g, v| {
        let y = g.sub(v[0], v[1])?;
        Ok(project(g, y, 3)?)
    })?;
    run(&mut out, "mul", p, &mut empty, &[a34.clone(), b34.clone()], opts(), |g, v| {
        let y = g.mul(v[0], v[1])?;
        Ok(project(g, y, 4)?)
    })?;
    run(&mut out, "add_row", p, &mut empty, &[a34.clone(), row4], opts(), |g, v| {
        let y = g.add_row(v[0], v[1])?;
        Ok(project(g, y, 5)?)
    })?;
    run(&mut out, "scale", p, &mut empty, std::slice::from_ref(&a34), opts(), |g, v| {
        let y = g.scale(v[0], -1.7);
        Ok(project(g, y, 6)?)
    })?;
    run(&mut out, "relu", p, &mut empty, std::slice::from_ref(&kinked), opts(), |g, v| {
        let y = g.relu(v[0]);
        Ok(project(g, y, 7)?)
    })?;
    run(&mut out, "leaky_relu", p, &mut empty, &[kinked], opts(), |g, v| {
        let y = g.leaky_relu(v[0], 0.1);
        Ok(project(g, y, 8)?)
    })?;
    run(&mut out, "concat", p, &mut empty, &[a34.clone(), b34.clone()], opts(), |g, v| {
        let y0 = g.concat(&[v[0], v[1]], 0)?;
        let y1 = g.concat(&[v[0], v[1], v[0]], 1)?;
        let s0 = project(g, y0, 9)?;
        let s1 = project(g, y1, 10)?;
        Ok(g.add(s0, s1)?)
    })?;
    run(&mut out, "slice_split", p, &mut empty, std::slice::from_ref(&a34), opts(), |g, v| {
        let s = g.slice(v[0], 1, 1, 2)?;
        let parts = g.split(v[0], 0, &[1, 2])?;
        let a = project(g, s, 11)?;
        let b = project(g, parts[1], 12)?;
        Ok(g.add(a, b)?)
    })?;
    run(&mut out, "reshape", p, &mut empty, std::slice::from_ref(&a34), opts(), |g, v| {
        let y = g.reshape(v[0], &[6, 2])?;
        Ok(project(g, y, 13)?)
    })?;
    run(&mut out, "gather_rows", p, &mut empty, std::slice::from_ref(&a34), opts(), |g, v| {
        let y = g.gather_rows(v[0], Arc::from(vec![2, 0, 2, 1, 2]))?;
        Ok(project(g, y, 14)?)
    })?;
    run(&mut out, "scatter_add_rows", p, &mut empty, std::slice::from_ref(&a34), opts(), |g, v| {
        let y = g.scatter_add_rows(v[0], Arc::from(vec![1, 1, 3]), 4)?;
        Ok(project(g, y, 15)?)
    })?;
    run(&mut out, "softmax", p, &mut empty, std::slice::from_ref(&a34), opts(), |g, v| {
        let y = g.softmax(v[0]);
        Ok(project(g, y, 16)?)
    })?;
    run(&mut out, "log", p, &mut empty, std::slice::from_ref(&pos), opts(), |g, v| {
        let y = g.log(v[0]);
        Ok(project(g, y, 17)?)
    })?;
    run(&mut out, "sum", p, &mut empty, std::slice::from_ref(&a34), opts(), |g, v| {
        let y = g.mul(v[0], v[0])?;
        Ok(g.sum(y))
    })?;
    run(&mut out, "mean", p, &mut empty, std::slice::from_ref(&a34), opts(), |g, v| {
        let y = g.mul(v[0], v[0])?;
        Ok(g.mean(y))
    })?;
    run(&mut out, "cross_entropy", p, &mut empty, std::slice::from_ref(&pos), opts(), |g, v| {
        Ok(g.cross_entropy(v[0], Arc::from(vec![0, 3, 1]))?)
    })?;
    run(&mut out, "cross_entropy_logits", p, &mut empty, std::slice::from_ref(&a34), opts(), |g, v| {
        Ok(g.cross_entropy_logits(v[0], Arc::from(vec![2, 0, 3]))?)
    })?;
    let agg = Arc::new(SparseAggregation::new(
        2,
        2,
        3,
        vec![
            AggEntry { row: 0, slot: 0, src: 1, weight: 0.7 },
            AggEntry { row: 0, slot: 1, src: 2, weight: -0.3 },
            AggEntry { row: 1, slot: 0, src: 0, weight: 1.2 },
            AggEntry { row: 1, slot: 0, src: 1, weight: 0.4 },
            AggEntry { row: 1, slot: 1, src: 1, weight: 0.9 },
        ],
    )?);
    run(&mut out, "sparse_aggregate", p, &mut empty, std::slice::from_ref(&a34), opts(), move |g, v| {
        let y = g.sparse_aggregate(v[0], Arc::clone(&agg))?;
        Ok(project(g, y, 18)?)
    })?;
    let cw: Arc<[f64]> = Arc::from(vec![0.5, -1.0, 0.0, 2.0, 0.3, 0.7]);
    run(&mut out, "block_combine", p, &mut empty, std::slice::from_ref(&a34), opts(), move |g, v| {
        let y = g.block_combine(v[0], Arc::clone(&cw), 2)?;
        Ok(project(g, y, 19)?)
    })?;
    let distinct = Tensor::new(&[4, 3], (0..12).map(|i| ((i * 7) % 12) as f64 * 0.1 - 0.5).collect())?;
    run(&mut out, "group_max", p, &mut empty, &[distinct], opts(), |g, v| {
        let y = g.group_max(v[0], 2)?;
        Ok(project(g, y, 20)?)
    })?;

    for (label, mode) in [("batch_norm_train", Mode::Train), ("batch_norm_eval", Mode::Eval)] {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 4);
        let gamma = random_tensor(&mut r, &[4], 0.5, 1.5);
        let beta = random_tensor(&mut r, &[4], -0.5, 0.5);
        let rv = random_tensor(&mut r, &[4], 0.5, 2.0);
        store.set_values(bn.gamma, gamma.data())?;
        store.set_values(bn.beta, beta.data())?;
        store.set_values(bn.running_mean, random_tensor(&mut r, &[4], -0.5, 0.5).data())?;
        store.set_values(bn.running_var, rv.data())?;
        let x = random_tensor(&mut r, &[6, 4], -1.0, 1.0);
        let mut o = opts();
        o.mode = mode;
        run(&mut out, label, p, &mut store, &[x], o, move |g, v| {
            let y = bn.forward(g, v[0])?;
            Ok(project(g, y, 21)?)
        })?;
    }
    Ok(out)
}

fn small_block_cfg(aggregation: Aggregation) -> BlockConfig {
    BlockConfig {
        kernel_points: 5,
        aggregation,
        ..BlockConfig::default()
    }
}

fn neighborhood_fixture(seed: u64, n: usize, m: usize) -> Result<(Vec<[f64; 3]>, NeighborTable)> {
    let pos = random_positions(&mut rng(seed), n);
    let nb = knn_positions(&pos, &pos, m)?;
    Ok((pos, nb))
}

/// Tiny network shape for gradient checks on up to 30 points.
pub fn tiny_network(architecture: Architecture, streams: usize) -> NetworkConfig {
    NetworkConfig {
        architecture,
        num_streams: streams,
        blocks_per_stage: 1,
        widths: vec![8; streams],
        head_width: 8,
        num_classes: 3,
        kernel_radius: 0.2,
        block: BlockConfig {
            kernel_points: 3,
            reduction: 2,
            ..BlockConfig::default()
        },
        ..NetworkConfig::desk()
    }
}

pub fn composite_suite() -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let c = CheckKind::Composite;
    let opts = || GradCheckOptions::new(STEP, COMPOSITE_TOL);

    for (label, agg) in [
        ("acpconv_sum", Aggregation::Sum),
        ("acpconv_mean", Aggregation::Mean),
        ("acpconv_max", Aggregation::Max),
    ] {
        let (pos, nb) = neighborhood_fixture(31, 12, 6)?;
        let mut store = ParamStore::new();
        let conv = AcpConv::new(&mut store, "conv", 3, 4, 5, 0.5, 40f64.to_radians(), agg, &mut rng(32))?;
        let x = random_tensor(&mut rng(33), &[12, 3], -1.0, 1.0);
        run(&mut out, label, c, &mut store, &[x], opts(), move |g, v| {
            let y = conv.forward(g, v[0], &pos, &nb)?;
            Ok(project(g, y, 34)?)
        })?;
    }

    {
        let (pos, nb) = neighborhood_fixture(41, 14, 6)?;
        let mut store = ParamStore::new();
        let cfg = small_block_cfg(Aggregation::Sum);
        let block = MssBlock::new(&mut store, "mss", 6, 8, 10, 0.5, &cfg, &mut rng(42))?;
        let x = random_tensor(&mut rng(43), &[14, 6], -1.0, 1.0);
        run(&mut out, "mss_block", c, &mut store, &[x], opts(), move |g, v| {
            let nbh = Neighborhood { positions: &pos, neighbors: &nb };
            let y = block.forward(g, v[0], nbh)?;
            Ok(project(g, y, 44)?)
        })?;
    }
    {
        let (pos, nb) = neighborhood_fixture(51, 14, 6)?;
        let mut store = ParamStore::new();
        let cfg = small_block_cfg(Aggregation::Sum);
        let block = Bottleneck::new(&mut store, "bottleneck", 6, 8, 0.5, &cfg, &mut rng(52))?;
        let x = random_tensor(&mut rng(53), &[14, 6], -1.0, 1.0);
        run(&mut out, "bottleneck_block", c, &mut store, &[x], opts(), move |g, v| {
            let nbh = Neighborhood { positions: &pos, neighbors: &nb };
            let y = block.forward(g, v[0], nbh)?;
            Ok(project(g, y, 54)?)
        })?;
    }
    {
        let mut r = rng(61);
        let coarse = random_positions(&mut r, 6);
        let fine = random_positions(&mut r, 15);
        let mut store = ParamStore::new();
        let mlp = SharedMlp::new(&mut store, "fp", 4 + 2, 5, true, Activation::LeakyRelu, &mut r);
        let prop = FeaturePropagator::new(3, Some(mlp));
        let feats = random_tensor(&mut r, &[6, 4], -1.0, 1.0);
        let skip = random_tensor(&mut r, &[15, 2], -1.0, 1.0);
        run(&mut out, "feature_propagation", c, &mut store, &[feats, skip], opts(), move |g, v| {
            let y = prop.forward(g, &coarse, v[0], &fine, Some(v[1]))?;
            Ok(project(g, y, 62)?)
        })?;
    }
    for (label, arch, streams) in [
        ("hrnet_forward", Architecture::Hrnet, 3),
        ("unet_forward", Architecture::Unet, 2),
    ] {
        let mut r = rng(71);
        let pos = random_positions(&mut r, 30);
        let pyramid = ResolutionPyramid::build(&pos, 0.3, streams, 6, 72)?;
        let cfg = tiny_network(arch, streams);
        let mut store = ParamStore::new();
        let net = Network::new(&mut store, "net", &cfg, &mut r)?;
        let x = random_tensor(&mut r, &[30, cfg.in_channels], -1.0, 1.0);
        run(&mut out, label, c, &mut store, &[x], opts(), move |g, v| {
            let o = net.forward(g, &pyramid, v[0])?;
            Ok(project(g, o.logits, 73)?)
        })?;
    }
    {
        let (pos, nb) = neighborhood_fixture(81, 10, 5)?;
        let mut store = ParamStore::new();
        let cfg = small_block_cfg(Aggregation::Sum);
        let head = FusionHead::new(&mut store, "fusion", 3, 2, 0.5, &cfg, &mut rng(82))?;
        // Move the head off its zero start so the attention path is exercised.
        let mut r = rng(83);
        for &w in &head.conv.kernel.weights {
            let t = random_tensor(&mut r, store.tensor(w).shape(), -0.5, 0.5);
            store.set_values(w, t.data())?;
        }
        let f1 = random_tensor(&mut r, &[10, 3], -1.0, 1.0);
        let f2 = random_tensor(&mut r, &[10, 3], -1.0, 1.0);
        let l1 = random_tensor(&mut r, &[10, 2], -1.0, 1.0);
        let l2 = random_tensor(&mut r, &[10, 2], -1.0, 1.0);
        run(&mut out, "fusion_head", c, &mut store, &[f1, f2, l1, l2], opts(), move |g, v| {
            let p1 = g.softmax(v[2]);
            let p2 = g.softmax(v[3]);
            let nbh = Neighborhood { positions: &pos, neighbors: &nb };
            let fused = attention_fuse(g, v[0], v[1], p1, p2, nbh, &head)?;
            Ok(g.cross_entropy(fused, Arc::from(vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 0]))?)
        })?;
    }
    {
        let mut r = rng(91);
        let pos = random_positions(&mut r, 24);
        let net = tiny_network(Architecture::Hrnet, 2);
        let fusion = FusionConfig {
            mode: FusionMode::Attention,
            r1: 0.3,
            r2: None,
            shared_weights: true,
        };
        let mut store = ParamStore::new();
        let model = SegmentationModel::new(&mut store, &net, &fusion, &mut r)?;
        if let Some(head) = &model.head {
            for &w in &head.conv.kernel.weights {
                let t = random_tensor(&mut r, store.tensor(w).shape(), -0.5, 0.5);
                store.set_values(w, t.data())?;
            }
        }
        let pyramids = model.pyramids(&pos, 6, 92)?;
        let x = random_tensor(&mut r, &[24, net.in_channels], -1.0, 1.0);
        let targets: Arc<[usize]> = (0..24).map(|i| i % net.num_classes).collect();
        run(&mut out, "attention_model_loss", c, &mut store, &[x], opts(), move |g, v| {
            let o = model.forward(g, &pyramids, v[0])?;
            model.loss(g, &o, targets.clone())
        })?;
    }
    Ok(out)
}

/// Both suites, primitives first.
pub fn run_gradient_suite() -> Result<Vec<SuiteEntry>> {
    let mut all = primitive_suite()?;
    all.extend(composite_suite()?);
    Ok(all)
}

