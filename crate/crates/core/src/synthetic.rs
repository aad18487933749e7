//! Seeded synthetic graphs for tests, acceptance runs and demos.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// G(n, p): each of the `n(n-1)/2` pairs independently with probability `p`.
pub fn erdos_renyi(n: usize, p: f64, rng: &mut (impl RngCore + ?Sized)) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sbm {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// Block id of every node.
    pub blocks: Vec<usize>,
}

/// Stochastic block model with consecutive node ids per block.
pub fn stochastic_block_model(
    block_sizes: &[usize],
    p_in: f64,
    p_out: f64,
    rng: &mut (impl RngCore + ?Sized),
) -> Sbm {
    let blocks: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = blocks.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if blocks[u] == blocks[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Sbm {
        num_nodes: n,
        edges,
        blocks,
    }
}

/// Content vectors planted by block: a random `±1` center per block plus
/// Gaussian noise of standard deviation `noise`.
pub fn planted_features<T: Scalar>(
    blocks: &[usize],
    dim: usize,
    noise: f64,
    rng: &mut (impl RngCore + ?Sized),
) -> Matrix<T> {
    let num_blocks = blocks.iter().copied().max().map_or(0, |b| b + 1);
    let centers: Vec<Vec<f64>> = (0..num_blocks)
        .map(|_| {
            (0..dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let normal = Normal::new(0.0, noise).expect("noise is a valid standard deviation");
    let mut x = Matrix::zeros(blocks.len(), dim);
    for (v, &b) in blocks.iter().enumerate() {
        for (j, slot) in x.row_mut(v).iter_mut().enumerate() {
            *slot = T::lit(centers[b][j] + normal.sample(rng));
        }
    }
    x
}

/// Feature-file text: "node_id<TAB>v1 v2 … vd".
pub fn features_to_text<T: Scalar>(x: &Matrix<T>) -> String {
    let mut out = String::new();
    for v in 0..x.rows() {
        let row: Vec<String> = x.row(v).iter().map(|f| f.to_string()).collect();
        out.push_str(&format!("{v}\t{}\n", row.join(" ")));
    }
    out
}
