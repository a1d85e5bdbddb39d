use std::sync::Arc;

use acpseg::graph::{finite_diff_check, GradCheckOptions, Graph, GraphError, Mode, ParamStore, Tensor};
use acpseg::pipeline::gradsuite::{composite_suite, primitive_suite, CheckKind, COMPOSITE_TOL, PRIMITIVE_TOL};
use acpseg::{Graph64, ParamStore64, Tensor64};

fn t(shape: &[usize], data: &[f64]) -> Tensor64 {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn sum_backward_is_all_ones() {
    let store = ParamStore64::new();
    let mut g = Graph64::new(&store, Mode::Train);
    let x = g.input(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]), true);
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn sum_of_squares_backward_doubles_input() {
    let store = ParamStore64::new();
    let mut g = Graph64::new(&store, Mode::Train);
    let x = g.input(t(&[2], &[1.0, 2.0]), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn cross_entropy_of_uniform_softmax() {
    let store = ParamStore64::new();
    let mut g = Graph64::new(&store, Mode::Train);
    let z = g.input(t(&[1, 2], &[0.0, 0.0]), true);
    let p = g.softmax(z);
    let loss = g.cross_entropy(p, Arc::from(vec![0])).unwrap();
    assert!((g.value(loss).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    g.backward(loss).unwrap();
    let grad = g.grad(z).unwrap();
    assert!((grad[0] + 0.5).abs() < 1e-15 && (grad[1] - 0.5).abs() < 1e-15, "{grad:?}");
}

#[test]
fn fan_out_accumulates_like_doubled_branch() {
    let store = ParamStore64::new();
    let data = [0.3, -1.2, 2.5, 0.7];

    let mut g = Graph64::new(&store, Mode::Train);
    let x = g.input(t(&[2, 2], &data), true);
    let a = g.mul(x, x).unwrap();
    let b = g.mul(x, x).unwrap();
    let s = g.add(a, b).unwrap();
    let root = g.sum(s);
    g.backward(root).unwrap();
    let fanned = g.grad(x).unwrap().to_vec();

    let mut h = Graph64::new(&store, Mode::Train);
    let y = h.input(t(&[2, 2], &data), true);
    let sq = h.mul(y, y).unwrap();
    let twice = h.scale(sq, 2.0);
    let root = h.sum(twice);
    h.backward(root).unwrap();
    assert_eq!(fanned, h.grad(y).unwrap());
}

#[test]
fn backward_rejects_non_scalar_root() {
    let store = ParamStore64::new();
    let mut g = Graph64::new(&store, Mode::Train);
    let x = g.input(t(&[2], &[1.0, 2.0]), true);
    let err = g.backward(x).unwrap_err();
    assert!(matches!(err, GraphError::NonScalarRoot { .. }));
}

#[test]
fn constants_receive_no_gradient() {
    let store = ParamStore64::new();
    let mut g = Graph64::new(&store, Mode::Train);
    let c = g.constant(t(&[2], &[1.0, 2.0]));
    let x = g.input(t(&[2], &[3.0, 4.0]), true);
    let y = g.mul(c, x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
}

#[test]
fn repeated_backward_is_bitwise_deterministic() {
    let run = || {
        let store = ParamStore64::new();
        let mut g = Graph64::new(&store, Mode::Train);
        let x = g.input(t(&[3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]), true);
        let w = g.input(t(&[2, 2], &[1.5, -0.5, 0.25, 2.0]), true);
        let y = g.matmul(x, w).unwrap();
        let p = g.softmax(y);
        let loss = g.cross_entropy(p, Arc::from(vec![0, 1, 1])).unwrap();
        g.backward(loss).unwrap();
        (g.grad(x).unwrap().to_vec(), g.grad(w).unwrap().to_vec())
    };
    let a = run();
    let b = run();
    assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn every_primitive_matches_central_differences() {
    let suite = primitive_suite().unwrap();
    assert!(suite.len() >= 20);
    for e in &suite {
        assert_eq!(e.kind, CheckKind::Primitive);
        assert!(e.report.checked > 0, "{} probed nothing", e.name);
        assert!(
            e.report.max_rel_error < PRIMITIVE_TOL,
            "{}: rel err {:.3e} at {:?}",
            e.name,
            e.report.max_rel_error,
            e.report.worst
        );
    }
}

#[test]
fn every_composite_matches_central_differences() {
    let suite = composite_suite().unwrap();
    let names: Vec<&str> = suite.iter().map(|e| e.name.as_str()).collect();
    for wanted in [
        "acpconv_sum",
        "acpconv_max",
        "mss_block",
        "bottleneck_block",
        "feature_propagation",
        "hrnet_forward",
        "unet_forward",
        "fusion_head",
        "attention_model_loss",
    ] {
        assert!(names.contains(&wanted), "missing {wanted}");
    }
    for e in &suite {
        assert!(
            e.report.max_rel_error < COMPOSITE_TOL,
            "{}: rel err {:.3e} at {:?}",
            e.name,
            e.report.max_rel_error,
            e.report.worst
        );
    }
}

#[test]
fn gradcheck_detects_a_wrong_gradient() {
    // Identity forward but the analytic gradient is 2 instead of 1, so the
    // relative error is |2 - 1| / max(2, 1) = 0.5.
    let mut store = ParamStore64::new();
    let x = t(&[3], &[0.5, -1.0, 2.0]);
    let report = finite_diff_check::<f64, GraphError, _>(&mut store, &[x], &GradCheckOptions::new(1e-6, 1e-6), |g, v| {
        let doubled = g.scale(v[0], 2.0);
        let half = g.value(doubled).data().iter().map(|d| -d / 2.0).collect::<Vec<_>>();
        let corr = g.constant(Tensor::new(&[3], half)?);
        let y = g.add(doubled, corr)?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!((report.max_rel_error - 0.5).abs() < 1e-6, "{report:?}");
    assert!(!report.passed());
}

#[test]
fn parameters_gradients_flow_back_through_finish() {
    let mut store = ParamStore64::new();
    let w = store.add("w", t(&[2, 1], &[2.0, -1.0]));
    let outcome = {
        let mut g = Graph64::new(&store, Mode::Train);
        let x = g.constant(t(&[1, 2], &[3.0, 4.0]));
        let wv = g.param(w);
        let wv2 = g.param(w);
        assert_eq!(wv, wv2);
        let y = g.matmul(x, wv).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        g.finish()
    };
    store.zero_grads();
    store.absorb(&outcome);
    assert_eq!(store.tensor(w).grad().unwrap(), &[3.0, 4.0]);
}

#[test]
fn engine_runs_in_single_precision() {
    let store = ParamStore::<f32>::new();
    let mut g = Graph::<f32>::new(&store, Mode::Train);
    let x = g.input(Tensor::new(&[2], vec![1.0f32, 2.0]).unwrap(), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0f32, 4.0]);
}
