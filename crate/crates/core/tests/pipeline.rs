mod common;

use acpseg::data::{generate_scene, SceneSpec};
use acpseg::fusion::{FusionConfig, FusionMode};
use acpseg::geometry::PointCloud;
use acpseg::graph::{Graph, Mode};
use acpseg::network::{Architecture, NetworkConfig};
use acpseg::pipeline::gradsuite::tiny_network;
use acpseg::pipeline::{
    augment, compute_metrics, input_features, lattice_centers, load_model, predict_at_centers, predict_with_voting,
    prepare_crop, AugmentConfig, ConfusionMatrix, StepRecord, TrainConfig, Trainer, VotingConfig,
};
use acpseg::{Error, PointCloud64};
use common::{cube_points, d2, metrics_oracle, rng};
use rand::Rng;

fn labeled_cloud(n: usize, seed: u64) -> PointCloud64 {
    let mut r = rng(seed);
    let mut c = PointCloud::from_positions(cube_points(&mut r, n, 1.0));
    c.colors = Some((0..n).map(|_| std::array::from_fn(|_| r.random_range(0.0..1.0))).collect());
    c.labels = Some((0..n).map(|i| i % 4).collect());
    c
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

fn only(f: impl FnOnce(&mut AugmentConfig)) -> AugmentConfig {
    let mut cfg = AugmentConfig::disabled();
    f(&mut cfg);
    cfg
}

#[test]
fn disabled_augmentation_is_identity() {
    let c = labeled_cloud(100, 1);
    assert_eq!(augment(&c, &AugmentConfig::disabled(), 7), c);
}

#[test]
fn rotation_is_a_vertical_isometry() {
    let c = labeled_cloud(60, 2);
    let out = augment(&c, &only(|a| a.rotate = true), 3);
    assert_ne!(out.positions, c.positions);
    for i in 0..60 {
        assert_eq!(out.positions[i][2], c.positions[i][2]);
        for j in 0..60 {
            let before = d2(&c.positions[i], &c.positions[j]).sqrt();
            let after = d2(&out.positions[i], &out.positions[j]).sqrt();
            assert!((before - after).abs() <= 1e-12);
        }
    }
}

#[test]
fn jitter_is_clipped_per_coordinate() {
    let c = labeled_cloud(2000, 4);
    let cfg = only(|a| {
        a.jitter = true;
        a.jitter_sigma = 0.05;
    });
    let out = augment(&c, &cfg, 5);
    let mut max = 0.0f64;
    for (p, q) in c.positions.iter().zip(&out.positions) {
        for k in 0..3 {
            max = max.max((p[k] - q[k]).abs());
        }
    }
    assert!(max <= 0.05 + 1e-15, "{max}");
    assert!(max > 0.049, "heavy jitter should reach the clip, got {max}");
}

#[test]
fn scaling_is_isotropic_and_in_range() {
    let c = labeled_cloud(50, 6);
    for seed in 0..20 {
        let out = augment(&c, &only(|a| a.scale = true), seed);
        let f = out.positions[0][0] / c.positions[0][0];
        assert!((0.8..=1.2).contains(&f));
        for (p, q) in c.positions.iter().zip(&out.positions) {
            for k in 0..3 {
                assert!((q[k] - f * p[k]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn color_drop_zeroes_colors_only() {
    let c = labeled_cloud(30, 7);
    let cfg = only(|a| {
        a.color_drop = true;
        a.color_drop_prob = 1.0;
    });
    let out = augment(&c, &cfg, 0);
    assert!(out.colors.as_ref().unwrap().iter().all(|x| *x == [0.0; 3]));
    assert_eq!(out.positions, c.positions);
    assert_eq!(out.labels, c.labels);
    let never = only(|a| {
        a.color_drop = true;
        a.color_drop_prob = 0.0;
    });
    assert_eq!(augment(&c, &never, 0), c);
}

#[test]
fn augmentation_is_seed_deterministic() {
    let c = labeled_cloud(100, 8);
    let cfg = AugmentConfig::default();
    assert_eq!(augment(&c, &cfg, 11), augment(&c, &cfg, 11));
    assert_ne!(augment(&c, &cfg, 11).positions, augment(&c, &cfg, 12).positions);
}

// ---------------------------------------------------------------------------
// Schedule, features, crops
// ---------------------------------------------------------------------------

#[test]
fn learning_rate_halves_every_thirty_epochs() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at_epoch(0), 0.001);
    assert_eq!(cfg.lr_at_epoch(29), 0.001);
    assert_eq!(cfg.lr_at_epoch(30), 0.0005);
    assert_eq!(cfg.lr_at_epoch(60), 0.00025);
    assert!(TrainConfig { lr: 0.0, ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { decay_every: 0, ..cfg }.validate().is_err());
}

#[test]
fn input_features_layout() {
    let c = labeled_cloud(5, 9);
    let f = input_features(&c);
    assert_eq!(f.shape(), &[5, 5]);
    for i in 0..5 {
        let col = c.colors.as_ref().unwrap()[i];
        assert_eq!(f.row(i), &[1.0, col[0], col[1], col[2], c.positions[i][2]]);
    }
    let bare = PointCloud::from_positions(vec![[0.0, 0.0, 2.0]]);
    assert_eq!(input_features(&bare).data(), &[1.0, 0.0, 0.0, 0.0, 2.0]);
}

#[test]
fn crops_are_centered_and_keep_absolute_height() {
    let c = labeled_cloud(400, 10);
    let center = [0.2, -0.1, 0.3];
    let s = prepare_crop(&c, center, 0.6, None).unwrap();
    for (k, &i) in s.indices.iter().enumerate() {
        for a in 0..3 {
            assert!((s.positions[k][a] - (c.positions[i][a] - center[a])).abs() < 1e-15);
        }
        assert_eq!(s.features.at(k, 4), c.positions[i][2]);
        assert_eq!(s.labels.as_ref().unwrap()[k], i % 4);
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[test]
fn metrics_hand_examples() {
    let m = compute_metrics(&ConfusionMatrix::from_counts(&[vec![3, 1], vec![1, 3]]).unwrap()).unwrap();
    assert!((m.miou - 0.6).abs() < 1e-15 && (m.oa - 0.75).abs() < 1e-15);
    assert_eq!(m.per_class_iou, vec![Some(0.6), Some(0.6)]);

    let perfect = compute_metrics(&ConfusionMatrix::from_counts(&[vec![5, 0], vec![0, 7]]).unwrap()).unwrap();
    assert_eq!((perfect.miou, perfect.oa), (1.0, 1.0));

    let absent = ConfusionMatrix::from_counts(&[vec![4, 0, 1], vec![0, 0, 0], vec![1, 0, 4]]).unwrap();
    let m = compute_metrics(&absent).unwrap();
    assert_eq!(m.per_class_iou[1], None);
    assert!((m.miou - 4.0 / 6.0).abs() < 1e-15);

    let missed = ConfusionMatrix::from_counts(&[vec![4, 1], vec![0, 0]]).unwrap();
    let m = compute_metrics(&missed).unwrap();
    assert_eq!(m.per_class_iou, vec![Some(0.8), Some(0.0)]);

    assert!(matches!(compute_metrics(&ConfusionMatrix::new(3)), Err(Error::Data(_))));
}

#[test]
fn metrics_match_scalar_oracle_on_random_matrices() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let c = r.random_range(1..=10);
        let rows: Vec<Vec<u64>> = (0..c)
            .map(|_| (0..c).map(|_| if r.random_bool(0.3) { 0 } else { r.random_range(0..50) }).collect())
            .collect();
        if rows.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        let m = compute_metrics(&ConfusionMatrix::from_counts(&rows).unwrap()).unwrap();
        let (miou, oa, ious) = metrics_oracle(&rows);
        assert!((m.miou - miou).abs() <= 1e-12 && (m.oa - oa).abs() <= 1e-12);
        assert_eq!(m.per_class_iou.len(), ious.len());
        for (a, b) in m.per_class_iou.iter().zip(&ious) {
            assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn confusion_accumulation() {
    let mut cm = ConfusionMatrix::new(3);
    cm.add_all(&[0, 1, 2, 2], &[0, 2, 2, 1]).unwrap();
    assert_eq!(cm.total(), 4);
    assert_eq!(cm.get(1, 2), 1);
    assert!(cm.add_all(&[0], &[]).is_err());
    assert!(cm.add_all(&[3], &[0]).is_err());
    let mut other = ConfusionMatrix::new(3);
    other.add(0, 0);
    cm.merge(&other).unwrap();
    assert_eq!(cm.get(0, 0), 2);
    assert!(cm.merge(&ConfusionMatrix::new(2)).is_err());
    assert!(ConfusionMatrix::from_counts(&[vec![1, 2]]).is_err());
}

// ---------------------------------------------------------------------------
// Training and voting
// ---------------------------------------------------------------------------

fn small_net(streams: usize) -> NetworkConfig {
    NetworkConfig {
        num_classes: 6,
        ..tiny_network(Architecture::Hrnet, streams)
    }
}

fn quick_train(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        epochs: 2,
        crops_per_epoch: 3,
        sphere_radius: 0.8,
        neighbors: 8,
        seed,
        ..TrainConfig::default()
    }
}

fn desk_scene(seed: u64) -> PointCloud64 {
    generate_scene(&SceneSpec::desk(), seed).unwrap()
}

#[test]
fn training_is_bitwise_reproducible() {
    let scenes = vec![desk_scene(1), desk_scene(2)];
    let run = || {
        let mut t = Trainer::<f64>::new(&small_net(2), &FusionConfig::default(), &quick_train(5)).unwrap();
        t.run(&scenes, |_| {}).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 6);
    let lines = |log: &[StepRecord]| log.iter().map(|r| r.to_string()).collect::<Vec<_>>();
    assert_eq!(lines(&a), lines(&b));
    assert!(a.iter().all(|r| r.loss.is_finite()));
    let mut other = Trainer::<f64>::new(&small_net(2), &FusionConfig::default(), &quick_train(6)).unwrap();
    assert_ne!(lines(&a), lines(&other.run(&scenes, |_| {}).unwrap()));
}

#[test]
fn step_record_line_format() {
    let r = StepRecord { epoch: 3, step: 17, loss: 0.5, oa: 0.75, lr: 0.001 };
    assert_eq!(r.to_string(), "3,17,0.5,0.75,0.001");
}

#[test]
fn trainer_validates_input() {
    let bad = NetworkConfig { in_channels: 4, ..small_net(2) };
    assert!(Trainer::<f64>::new(&bad, &FusionConfig::default(), &quick_train(0)).is_err());
    let mut t = Trainer::<f64>::new(&small_net(2), &FusionConfig::default(), &quick_train(0)).unwrap();
    assert!(t.run(&[], |_| {}).is_err());
    let unlabeled = PointCloud::from_positions(vec![[0.0; 3]; 4]);
    assert!(matches!(t.sample_crop(&[unlabeled]), Err(Error::Data(_))));
}

#[test]
fn empty_crops_exhaust_retries() {
    let mut scene = PointCloud::from_positions(vec![[0.0, 0.0, 0.0], [10.0, 10.0, 10.0]]);
    scene.labels = Some(vec![0, 1]);
    let cfg = TrainConfig {
        sphere_radius: 0.01,
        max_crop_retries: 5,
        ..quick_train(0)
    };
    let mut t = Trainer::<f64>::new(&small_net(2), &FusionConfig::default(), &cfg).unwrap();
    assert!(matches!(
        t.sample_crop(&[scene]),
        Err(Error::CropRetriesExhausted { attempts: 5 })
    ));
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let scenes = vec![desk_scene(3)];
    for mode in [FusionMode::Single, FusionMode::Attention] {
        let fusion = FusionConfig { mode, ..FusionConfig::default() };
        let mut t = Trainer::<f64>::new(&small_net(2), &fusion, &quick_train(7)).unwrap();
        t.run(&scenes, |_| {}).unwrap();
        t.save_checkpoint(&path).unwrap();
        let (store, model) = load_model::<f64>(&small_net(2), &fusion, &path).unwrap();
        let cfg = VotingConfig { sphere_radius: 1.0, neighbors: 8, ..VotingConfig::default() };
        let a = predict_with_voting(&t.store, &t.model, &scenes[0], &cfg).unwrap();
        let b = predict_with_voting(&store, &model, &scenes[0], &cfg).unwrap();
        assert_eq!(a.probs, b.probs, "{mode:?}");
    }
    let wrong = NetworkConfig { widths: vec![12, 8], ..small_net(2) };
    assert!(load_model::<f64>(&wrong, &FusionConfig::default(), &path).is_err());
}

fn untrained(streams: usize, mode: FusionMode) -> Trainer<f64> {
    let fusion = FusionConfig { mode, ..FusionConfig::default() };
    Trainer::new(&small_net(streams), &fusion, &quick_train(9)).unwrap()
}

#[test]
fn lattice_voting_covers_every_point() {
    let scene = desk_scene(4);
    let t = untrained(2, FusionMode::Average);
    let cfg = VotingConfig { sphere_radius: 0.9, neighbors: 8, ..VotingConfig::default() };
    let res = predict_with_voting(&t.store, &t.model, &scene, &cfg).unwrap();
    assert_eq!(res.coverage.len(), scene.len());
    assert!(res.coverage.iter().all(|&c| c >= 1));
    assert_eq!(res.predictions.len(), scene.len());
    for row in res.probs.chunks(res.num_classes) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
    let centers = lattice_centers(&scene.positions, 0.9).unwrap();
    for p in &scene.positions {
        assert!(centers.iter().any(|c| d2(p, c) <= 0.81));
    }
}

#[test]
fn one_sphere_over_the_whole_scene_equals_a_single_pass() {
    let scene = desk_scene(5);
    let t = untrained(2, FusionMode::Single);
    let cfg = VotingConfig { sphere_radius: 10.0, neighbors: 8, seed: 3, ..VotingConfig::default() };
    let center = [1.5, 1.5, 1.0];
    let voted = predict_at_centers(&t.store, &t.model, &scene, &[center], &cfg).unwrap();
    let s = prepare_crop(&scene, center, 10.0, None).unwrap();
    let pyramids = t.model.pyramids(&s.positions, 8, 3).unwrap();
    let mut g = Graph::new(&t.store, Mode::Eval);
    let x = g.constant(s.features);
    let out = t.model.forward(&mut g, &pyramids, x).unwrap();
    assert_eq!(voted.probs.as_slice(), g.value(out.probs).data());
    assert!(voted.coverage.iter().all(|&c| c == 1));
}

#[test]
fn duplicate_spheres_vote_like_one() {
    // A single-stream network has no subsampling, so every crop of the same
    // sphere sees the same pyramid.
    let scene = desk_scene(6);
    let t = untrained(1, FusionMode::Single);
    let cfg = VotingConfig { sphere_radius: 0.8, neighbors: 8, ..VotingConfig::default() };
    let centers = [[1.0, 1.0, 0.5], [2.0, 1.5, 1.0]];
    let once = predict_at_centers(&t.store, &t.model, &scene, &centers, &cfg);
    let twice = predict_at_centers(&t.store, &t.model, &scene, &[centers[0], centers[0], centers[1]], &cfg);
    match (once, twice) {
        (Err(Error::Uncovered { count: a }), Err(Error::Uncovered { count: b })) => assert_eq!(a, b),
        other => panic!("expected partial coverage, got {:?}", other.0.map(|r| r.coverage.len())),
    }
    let full = [[1.5, 1.5, 1.25]];
    let cfg = VotingConfig { sphere_radius: 5.0, ..cfg };
    let once = predict_at_centers(&t.store, &t.model, &scene, &full, &cfg).unwrap();
    let twice = predict_at_centers(&t.store, &t.model, &scene, &[full[0], full[0]], &cfg).unwrap();
    assert!(twice.coverage.iter().all(|&c| c == 2));
    for (a, b) in once.probs.iter().zip(&twice.probs) {
        assert!((a - b).abs() <= 1e-15);
    }
    assert_eq!(once.predictions, twice.predictions);
}

#[test]
fn uncovered_points_are_reported() {
    let scene = desk_scene(7);
    let t = untrained(1, FusionMode::Single);
    let cfg = VotingConfig { sphere_radius: 0.5, neighbors: 8, ..VotingConfig::default() };
    let err = predict_at_centers(&t.store, &t.model, &scene, &[[0.0, 0.0, 0.0]], &cfg).unwrap_err();
    assert!(matches!(err, Error::Uncovered { count } if count > 0 && count < scene.len()));
    assert!(lattice_centers(&scene.positions, 0.0).is_err());
}

#[test]
fn tiny_hrnet_overfits_a_small_scene() {
    let spec = SceneSpec { density: 4.0, ..SceneSpec::desk() };
    let scene = generate_scene::<f64>(&spec, 8).unwrap();
    assert!((150..=260).contains(&scene.len()), "{} points", scene.len());
    let cfg = TrainConfig {
        lr: 1e-2,
        epochs: 1,
        crops_per_epoch: 300,
        sphere_radius: 10.0,
        neighbors: 8,
        augment: AugmentConfig::disabled(),
        seed: 3,
        ..TrainConfig::default()
    };
    let mut t = Trainer::<f64>::new(&small_net(2), &FusionConfig::default(), &cfg).unwrap();
    let log = t.run(&[scene], |_| {}).unwrap();
    let last = log.last().unwrap();
    assert!(last.oa >= 0.99, "final OA {}", last.oa);
    assert!(last.loss < log[0].loss);
}
