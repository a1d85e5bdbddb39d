mod common;

use acpseg::geometry::{
    knn_positions, poisson_disk_subsample_positions, radius_schedule, sphere_crop, GeometryError, PointCloud,
};
use common::{brute_knn, coverage_radius, cube_points, d2, min_pairwise, rng};
use proptest::prelude::*;
use rand::Rng;

// ---------------------------------------------------------------------------
// KNN
// ---------------------------------------------------------------------------

fn check_knn(source: &[[f64; 3]], queries: &[[f64; 3]], m: usize) {
    let table = knn_positions(source, queries, m).unwrap();
    assert_eq!(table.query_count(), queries.len());
    for (q, p) in queries.iter().enumerate() {
        assert_eq!(table.row(q), brute_knn(source, p, m).as_slice(), "query {q}, m {m}");
    }
}

#[test]
fn knn_matches_brute_force_across_sizes() {
    let mut r = rng(1);
    for &(n, m) in &[(1, 1), (2, 5), (17, 4), (200, 16), (1000, 32), (5000, 32)] {
        let src = cube_points(&mut r, n, 1.0);
        let queries: Vec<[f64; 3]> = if n > 1000 {
            src.iter().step_by(7).copied().chain(cube_points(&mut r, 100, 1.2)).collect()
        } else {
            src.iter().copied().chain(cube_points(&mut r, 20, 1.2)).collect()
        };
        check_knn(&src, &queries, m);
    }
}

#[test]
fn knn_handles_clustered_and_planar_data() {
    let mut r = rng(2);
    let mut pts: Vec<[f64; 3]> = (0..800)
        .map(|_| [r.random_range(0.0..10.0), r.random_range(0.0..10.0), 0.0])
        .collect();
    pts.extend((0..400).map(|_| std::array::from_fn(|_| r.random_range(5.0..5.01))));
    check_knn(&pts, &pts, 12);
}

#[test]
fn knn_with_duplicate_points_breaks_ties_by_index() {
    let pts = vec![[0.0, 0.0, 0.0]; 6];
    let table = knn_positions(&pts, &pts, 4).unwrap();
    for q in 0..6 {
        assert_eq!(table.row(q), &[0, 1, 2, 3]);
    }
}

#[test]
fn knn_rejects_bad_input() {
    assert_eq!(
        knn_positions::<f64>(&[], &[[0.0; 3]], 3).unwrap_err(),
        GeometryError::EmptySource
    );
    assert!(knn_positions(&[[0.0f64; 3]], &[[0.0; 3]], 0).is_err());
    assert!(matches!(
        knn_positions(&[[0.0, f64::NAN, 0.0]], &[[0.0; 3]], 1).unwrap_err(),
        GeometryError::NonFinite { index: 0 }
    ));
}

#[test]
fn knn_result_is_independent_of_thread_count() {
    let pts = cube_points(&mut rng(3), 3000, 1.0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| knn_positions(&pts, &pts, 16).unwrap());
    let default = knn_positions(&pts, &pts, 16).unwrap();
    assert_eq!(single, default);
}

// ---------------------------------------------------------------------------
// Poisson-disk subsampling
// ---------------------------------------------------------------------------

fn check_pds(points: &[[f64; 3]], r: f64, seed: u64) -> Vec<usize> {
    let idx = poisson_disk_subsample_positions(points, r, seed).unwrap();
    assert!(idx.windows(2).all(|w| w[0] < w[1]), "indices sorted and unique");
    assert!(!idx.is_empty());
    let sep = min_pairwise(points, &idx);
    assert!(sep > r, "separation {sep} <= r {r}");
    let cov = coverage_radius(points, &idx);
    assert!(cov <= r, "coverage radius {cov} > r {r}");
    idx
}

#[test]
fn pds_is_separated_and_covering() {
    let mut r = rng(4);
    let pts = cube_points(&mut r, 3000, 1.0);
    for &radius in &[0.05, 0.1, 0.3, 1.0, 5.0] {
        for seed in 0..3 {
            check_pds(&pts, radius, seed);
        }
    }
}

#[test]
fn pds_is_deterministic_per_seed() {
    let pts = cube_points(&mut rng(5), 2000, 1.0);
    let a = poisson_disk_subsample_positions(&pts, 0.1, 9).unwrap();
    let b = poisson_disk_subsample_positions(&pts, 0.1, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pds_count_shrinks_with_large_radius_ratio() {
    // Greedy elimination is not monotone for nearby radii, so only well
    // separated radii are compared.
    let pts = cube_points(&mut rng(6), 4000, 1.0);
    let counts: Vec<usize> = [0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&r| poisson_disk_subsample_positions(&pts, r, 0).unwrap().len())
        .collect();
    assert!(counts.windows(2).all(|w| w[1] < w[0]), "{counts:?}");
}

#[test]
fn pds_zero_radius_and_duplicates() {
    let pts = vec![[1.0, 1.0, 1.0]; 10];
    assert_eq!(poisson_disk_subsample_positions(&pts, 0.0, 0).unwrap().len(), 10);
    assert_eq!(poisson_disk_subsample_positions(&pts, 0.01, 0).unwrap().len(), 1);
    assert!(poisson_disk_subsample_positions(&pts, f64::NAN, 0).is_err());
}

#[test]
fn radius_schedule_doubles() {
    assert_eq!(radius_schedule(0.04, 4).unwrap(), vec![0.04, 0.08, 0.16, 0.32]);
    assert_eq!(radius_schedule(0.0, 2).unwrap(), vec![0.0, 0.0]);
    assert!(radius_schedule(0.1, 0).is_err());
    assert!(radius_schedule(-0.1, 2).is_err());
}

// ---------------------------------------------------------------------------
// Sphere crop
// ---------------------------------------------------------------------------

#[test]
fn crop_matches_brute_force_filter() {
    let mut r = rng(7);
    let mut cloud = PointCloud::from_positions(cube_points(&mut r, 2000, 2.0));
    cloud.labels = Some((0..2000).map(|i| i % 6).collect());
    for _ in 0..20 {
        let center: [f64; 3] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
        let radius = r.random_range(0.2..1.5);
        let want: Vec<usize> = (0..2000)
            .filter(|&i| d2(&cloud.positions[i], &center) <= radius * radius)
            .collect();
        match sphere_crop(&cloud, center, radius) {
            Ok(crop) => {
                assert_eq!(crop.indices, want);
                let labels = crop.cloud.labels.unwrap();
                for (k, &i) in crop.indices.iter().enumerate() {
                    assert_eq!(crop.cloud.positions[k], cloud.positions[i]);
                    assert_eq!(labels[k], i % 6);
                }
            }
            Err(GeometryError::EmptyCrop) => assert!(want.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn crop_rejects_non_positive_radius() {
    let cloud = PointCloud::from_positions(vec![[0.0f64; 3]]);
    assert!(sphere_crop(&cloud, [0.0; 3], 0.0).is_err());
}

// ---------------------------------------------------------------------------
// Properties
// ---------------------------------------------------------------------------

fn points_strategy(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_knn_equals_brute_force(src in points_strategy(120), q in points_strategy(10), m in 1usize..12) {
        let table = knn_positions(&src, &q, m).unwrap();
        for (i, p) in q.iter().enumerate() {
            let want = brute_knn(&src, p, m);
            prop_assert_eq!(table.row(i), want.as_slice());
        }
    }

    #[test]
    fn prop_pds_separation_and_coverage(pts in points_strategy(300), r in 0.05f64..3.0, seed in any::<u64>()) {
        let idx = poisson_disk_subsample_positions(&pts, r, seed).unwrap();
        prop_assert!(min_pairwise(&pts, &idx) > r);
        prop_assert!(coverage_radius(&pts, &idx) <= r);
    }

    #[test]
    fn prop_crop_is_exact(pts in points_strategy(200), c in prop::array::uniform3(-5.0f64..5.0), r in 0.1f64..6.0) {
        let cloud = PointCloud::from_positions(pts.clone());
        let want: Vec<usize> = (0..pts.len()).filter(|&i| d2(&pts[i], &c) <= r * r).collect();
        match sphere_crop(&cloud, c, r) {
            Ok(crop) => prop_assert_eq!(crop.indices, want),
            Err(_) => prop_assert!(want.is_empty()),
        }
    }
}
