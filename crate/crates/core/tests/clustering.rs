mod common;

use common::*;
use psg::clustering::{labels_from_text, labels_to_text};
use psg::{kmeans, Matrix};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, sd: f64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    centers
        .iter()
        .flat_map(|c| (0..per).map(|_| vec![c[0] + noise.sample(&mut r), c[1] + noise.sample(&mut r)]).collect::<Vec<_>>())
        .collect()
}

fn matrix(points: &[Vec<f64>]) -> Matrix {
    Matrix::from_fn(points.len(), points[0].len(), |i, j| points[i][j])
}

#[test]
fn two_blobs_reach_the_exhaustive_optimum() {
    for seed in 0..5 {
        let points = blobs(seed, &[[0.0, 0.0], [4.0, 1.0]], 7, 0.8);
        let (best, labels) = exhaustive_two_partition(&points);
        let fit = kmeans(&matrix(&points), 2, 100, 1e-9, &mut rng(seed)).unwrap();
        assert!(same_partition(&fit.labels, &labels), "seed {seed}");
        assert!((fit.inertia - best).abs() < 1e-9);
        assert!((partition_inertia(&points, &fit.labels, 2) - fit.inertia).abs() < 1e-9);
    }
}

#[test]
fn no_single_move_improves_the_result() {
    let points = blobs(3, &[[0.0, 0.0], [3.0, 3.0], [-3.0, 2.0]], 20, 1.2);
    let fit = kmeans(&matrix(&points), 3, 300, 0.0, &mut rng(3)).unwrap();
    // a converged assignment is nearest-centroid for every point
    for (i, p) in points.iter().enumerate() {
        let d = |k: usize| (0..2).map(|j| (p[j] - fit.centroids.get(k, j)).powi(2)).sum::<f64>();
        assert!((0..3).all(|k| d(fit.labels[i]) <= d(k) + 1e-12));
    }
    // and each centroid is the mean of its members
    for k in 0..3 {
        let members: Vec<_> = points.iter().zip(&fit.labels).filter(|(_, &l)| l == k).map(|(p, _)| p).collect();
        assert!(!members.is_empty());
        for j in 0..2 {
            let mean = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
            assert!((mean - fit.centroids.get(k, j)).abs() < 1e-9);
        }
    }
}

#[test]
fn inertia_never_increases() {
    let mut r = rng(11);
    for seed in 0..20 {
        let n = r.random_range(10..80);
        let c = r.random_range(1..=n.min(8));
        let x = Matrix::from_fn(n, 3, |_, _| r.random_range(-5.0..5.0));
        let fit = kmeans(&x, c, 50, 1e-6, &mut rng(seed)).unwrap();
        assert!(fit.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert_eq!(fit.inertia, *fit.inertia_history.last().unwrap());
        assert!(fit.labels.iter().all(|&l| l < c));
    }
}

#[test]
fn same_seed_same_clusters() {
    let x = matrix(&blobs(8, &[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]], 30, 0.6));
    let a = kmeans(&x, 4, 100, 1e-6, &mut rng(1)).unwrap();
    let b = kmeans(&x, 4, 100, 1e-6, &mut rng(1)).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.centroids, b.centroids);
}

#[test]
fn cluster_count_extremes() {
    let x = matrix(&blobs(2, &[[0.0, 0.0]], 6, 1.0));
    let one = kmeans(&x, 1, 10, 1e-9, &mut rng(0)).unwrap();
    assert!(one.labels.iter().all(|&l| l == 0));
    let all = kmeans(&x, 6, 10, 1e-9, &mut rng(0)).unwrap();
    let mut seen = all.labels.clone();
    seen.sort();
    assert_eq!(seen, (0..6).collect::<Vec<_>>());
    assert!(all.inertia.abs() < 1e-12);
    assert!(kmeans(&x, 0, 10, 1e-9, &mut rng(0)).is_err());
    assert!(kmeans(&x, 7, 10, 1e-9, &mut rng(0)).is_err());
}

#[test]
fn duplicate_points_still_fill_every_cluster() {
    let x = Matrix::from_fn(8, 2, |i, _| if i < 6 { 1.0 } else { i as f64 });
    let fit = kmeans(&x, 3, 20, 1e-9, &mut rng(4)).unwrap();
    assert!(fit.centroids.is_finite());
    assert!(fit.labels.iter().all(|&l| l < 3));
}

#[test]
fn label_file_round_trip() {
    let labels = vec![2, 0, 1, 1, 0];
    let text = labels_to_text(&labels, &["psg test".into()]);
    assert_eq!(labels_from_text(&text, 5).unwrap(), labels);
    assert!(labels_from_text(&text, 6).is_err());
    assert!(labels_from_text("0\tx\n", 1).is_err());
}
