//! K-means content labels.
//!
//! k-means++ seeding followed by full-batch Lloyd iterations. Empty clusters
//! are re-seeded at the point farthest from its current centroid.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{PsgError, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment<T = f64> {
    pub labels: Vec<usize>,
    pub centroids: Matrix<T>,
    pub inertia: T,
    /// Lloyd iterations performed.
    pub iterations: usize,
    /// Inertia after the seeding assignment and after every iteration.
    pub inertia_history: Vec<T>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point (lowest index on ties) and its squared distance.
fn assign<T: Scalar>(points: &Matrix<T>, centroids: &Matrix<T>) -> Vec<(usize, T)> {
    (0..points.rows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut best = (0, sq_dist(p, centroids.row(0)));
            for c in 1..centroids.rows() {
                let d = sq_dist(p, centroids.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

fn seed_plus_plus<T: Scalar>(
    points: &Matrix<T>,
    c: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Matrix<T> {
    let n = points.rows();
    let mut centroids = Matrix::zeros(c, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut nearest: Vec<T> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)))
        .collect();
    for k in 1..c {
        let weights: Vec<f64> = nearest.iter().map(|d| d.as_f64()).collect();
        let pick = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a centroid already
            Err(_) => rng.random_range(0..n),
        };
        centroids.row_mut(k).copy_from_slice(points.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            let nd = sq_dist(points.row(i), points.row(pick));
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

/// Means of the assigned points; empty clusters move to the farthest
/// unclaimed point.
fn update<T: Scalar>(points: &Matrix<T>, assigned: &[(usize, T)], c: usize) -> Matrix<T> {
    let d = points.cols();
    let mut sums = Matrix::zeros(c, d);
    let mut counts = vec![0usize; c];
    for (i, &(k, _)) in assigned.iter().enumerate() {
        counts[k] += 1;
        for (s, &x) in sums.row_mut(k).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    let mut claimed = vec![false; points.rows()];
    for k in 0..c {
        if counts[k] > 0 {
            let n = T::from_count(counts[k]);
            sums.row_mut(k).iter_mut().for_each(|s| *s /= n);
            continue;
        }
        let far = assigned
            .iter()
            .enumerate()
            .filter(|(i, _)| !claimed[*i])
            .fold(None::<(usize, T)>, |best, (i, &(_, dist))| match best {
                Some((_, bd)) if bd >= dist => best,
                _ => Some((i, dist)),
            });
        if let Some((i, _)) = far {
            claimed[i] = true;
            sums.row_mut(k).copy_from_slice(points.row(i));
        }
    }
    sums
}

pub fn kmeans<T: Scalar>(
    points: &Matrix<T>,
    num_clusters: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<ClusterAssignment<T>> {
    let n = points.rows();
    if num_clusters == 0 || num_clusters > n {
        return Err(PsgError::Precondition(format!(
            "cluster count {num_clusters} must be in 1..={n}"
        )));
    }
    if points.cols() == 0 {
        return Err(PsgError::Precondition("points have zero dimensions".into()));
    }
    if !points.is_finite() {
        return Err(PsgError::NonFinite("k-means input".into()));
    }

    let inertia_of = |a: &[(usize, T)]| a.iter().map(|&(_, d)| d).sum::<T>();
    let mut centroids = seed_plus_plus(points, num_clusters, rng);
    let mut assigned = assign(points, &centroids);
    let mut history = vec![inertia_of(&assigned)];
    let mut iterations = 0;
    let tol = T::lit(tol);
    while iterations < max_iters {
        let next = update(points, &assigned, num_clusters);
        let shift = (0..num_clusters)
            .map(|k| sq_dist(next.row(k), centroids.row(k)).sqrt())
            .fold(T::zero(), T::max);
        centroids = next;
        assigned = assign(points, &centroids);
        history.push(inertia_of(&assigned));
        iterations += 1;
        debug_assert!(history[history.len() - 1] <= history[history.len() - 2]);
        if shift < tol {
            break;
        }
    }

    Ok(ClusterAssignment {
        labels: assigned.iter().map(|&(k, _)| k).collect(),
        centroids,
        inertia: *history.last().expect("history is never empty"),
        iterations,
        inertia_history: history,
    })
}

/// Node → cluster map for training, checked against the graph size.
pub fn assign_labels<T: Scalar, U: Scalar>(
    assignment: &ClusterAssignment<T>,
    graph: &Graph<U>,
) -> Result<Vec<usize>> {
    if assignment.labels.len() != graph.num_nodes() {
        return Err(PsgError::Dimension(format!(
            "{} labels for {} nodes",
            assignment.labels.len(),
            graph.num_nodes()
        )));
    }
    Ok(assignment.labels.clone())
}

/// "node_id<TAB>cluster_id" lines after '#' header comments.
pub fn labels_to_text(labels: &[usize], header: &[String]) -> String {
    let mut out = String::new();
    for line in header {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    for (v, c) in labels.iter().enumerate() {
        out.push_str(&format!("{v}\t{c}\n"));
    }
    out
}

pub fn labels_from_text(text: &str, num_nodes: usize) -> Result<Vec<usize>> {
    let mut labels = vec![None; num_nodes];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| PsgError::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected node_id<TAB>cluster_id"))?;
        let v: usize = a.trim().parse().map_err(|_| bad("invalid node id"))?;
        let c: usize = b.trim().parse().map_err(|_| bad("invalid cluster id"))?;
        if v >= num_nodes {
            return Err(PsgError::OutOfRange { node: v, num_nodes });
        }
        labels[v] = Some(c);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(v, c)| c.ok_or_else(|| PsgError::Validation(format!("no label for node {v}"))))
        .collect()
}
