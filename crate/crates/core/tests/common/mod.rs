//! Reference implementations shared by the integration suites. Nothing here
//! calls the library routine it is used to check.
#![allow(dead_code)]

use psg::backward::{backward, forward_batch, Batch, LossComposition};
use psg::graph::EdgeSet;
use psg::losses::Lambdas;
use psg::model::{Aggregator, ForwardMode, InputEncoding, ModelConfig, ModelParams};
use psg::path_features::EdgeFeatureStore;
use psg::{Graph, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INF: usize = usize::MAX;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense 0/1 adjacency.
pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; n]; n];
    for &(u, v) in edges {
        if u != v {
            a[u][v] = true;
            a[v][u] = true;
        }
    }
    a
}

/// All-pairs hop distances, `INF` when disconnected.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let a = dense_adjacency(n, edges);
    let mut d = vec![vec![INF; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if a[i][j] {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] != INF && d[k][j] != INF && d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Random edge list with duplicates and both orientations mixed in.
pub fn random_edges(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                if rng.random::<bool>() {
                    edges.push((u, v));
                } else {
                    edges.push((v, u));
                }
            }
        }
    }
    edges
}

/// Hits@K by sorting every negative: fraction of positives strictly above
/// the K-th highest negative.
pub fn full_sort_hits(pos: &[f64], neg: &[f64], k: usize) -> f64 {
    if k > neg.len() {
        return 1.0;
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let t = sorted[k - 1];
    pos.iter().filter(|&&p| p > t).count() as f64 / pos.len() as f64
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Within-cluster squared distance of a labelling, centroids at the means.
pub fn partition_inertia(points: &[Vec<f64>], labels: &[usize], c: usize) -> f64 {
    let d = points[0].len();
    let mut total = 0.0;
    for k in 0..c {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == k).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..d)
            .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
            .collect();
        total += members.iter().map(|p| sq(p, &mean)).sum::<f64>();
    }
    total
}

/// Best two-way split over all `2^(n-1) - 1` non-trivial partitions.
pub fn exhaustive_two_partition(points: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut best = (f64::INFINITY, Vec::new());
    // point 0 is always in cluster 0
    for mask in 1u64..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n)
            .map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize })
            .collect();
        let inertia = partition_inertia(points, &labels, 2);
        if inertia < best.0 {
            best = (inertia, labels);
        }
    }
    best
}

/// Two labellings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// Encoder evaluated for every node at once with dense loops over the
/// adjacency matrix and full neighborhoods.
pub fn dense_encoder(g: &Graph, params: &ModelParams, feats: &EdgeFeatureStore) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let cfg = &params.config;
    let matvec = |m: &Matrix, x: &[f64]| -> Vec<f64> {
        (0..m.rows())
            .map(|i| (0..m.cols()).map(|j| m.get(i, j) * x[j]).sum())
            .collect()
    };
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|v| match &params.input {
            InputEncoding::Embedding(t) => t.row(v).to_vec(),
            InputEncoding::Projection(p) => matvec(p, g.node_features().unwrap().row(v)),
        })
        .collect();
    for layer in &params.layers {
        let d_in = h[0].len();
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            let msgs: Vec<Vec<f64>> = (0..n)
                .filter(|&u| g.has_edge(u, v))
                .map(|u| {
                    let mut m = h[u].clone();
                    if let Some(w3) = &layer.w3 {
                        let e = feats.get(v, u).unwrap();
                        for (x, y) in m.iter_mut().zip(matvec(w3, e)) {
                            *x += y;
                        }
                    }
                    m.iter().map(|&x| x.max(0.0)).collect()
                })
                .collect();
            let agg: Vec<f64> = (0..d_in)
                .map(|c| {
                    if msgs.is_empty() {
                        return 0.0;
                    }
                    let col = msgs.iter().map(|m| m[c]);
                    match cfg.aggregator {
                        Aggregator::Sum => col.sum(),
                        Aggregator::Mean => col.sum::<f64>() / msgs.len() as f64,
                        Aggregator::Max => col.fold(f64::NEG_INFINITY, f64::max),
                    }
                })
                .collect();
            let a = matvec(&layer.w1, &h[v]);
            let b = matvec(&layer.w2, &agg);
            next.push(a.iter().zip(&b).map(|(x, y)| (x + y).max(0.0)).collect());
        }
        h = next;
    }
    h
}

/// Link score by dense evaluation of the readout stack.
pub fn dense_link(params: &ModelParams, a: &[f64], b: &[f64]) -> f64 {
    let mut x: Vec<f64> = a.iter().zip(b).map(|(p, q)| p * q).collect();
    let last = params.readout.len() - 1;
    for (i, w) in params.readout.iter().enumerate() {
        let z: Vec<f64> = (0..w.rows())
            .map(|r| (0..w.cols()).map(|c| w.get(r, c) * x[c]).sum())
            .collect();
        x = if i == last { z } else { z.iter().map(|v| v.max(0.0)).collect() };
    }
    x[0]
}

/// A small random training problem.
pub struct Instance {
    pub graph: Graph,
    pub feats: EdgeFeatureStore,
    pub params: ModelParams,
    pub labels: Vec<usize>,
    pub batch: Batch,
    pub comp: LossComposition,
    pub mode: ForwardMode,
    pub seed: u64,
}

/// Random instance with `n ≤ 12`, dims ≤ 5, `C ≤ 3`, `k ≤ 2`. The variant
/// index cycles through aggregators and options.
pub fn random_instance(seed: u64, gamma: f64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(5..=12);
    let mut edges = random_edges(n, 0.4, &mut r);
    // keep at least one edge and one non-edge
    edges.push((0, 1));
    edges.retain(|&(u, v)| psg::graph::edge_key(u, v) != (n - 2, n - 1));
    let with_features = r.random::<bool>();
    let mut graph: Graph = Graph::from_edges(n, edges).unwrap();
    if with_features {
        let dx = r.random_range(1..=4);
        let x = Matrix::from_fn(n, dx, |_, _| r.random_range(-1.0..1.0));
        graph = graph.with_features(x).unwrap();
    }
    let k = r.random_range(1..=2);
    let config = ModelConfig {
        embed_dim: r.random_range(2..=5),
        hidden_dim: r.random_range(2..=5),
        num_layers: r.random_range(1..=2),
        readout_layers: r.random_range(1..=3),
        num_classes: r.random_range(2..=3),
        edge_dim: k,
        aggregator: [Aggregator::Mean, Aggregator::Sum, Aggregator::Max][(seed % 3) as usize],
        edge_features_every_layer: r.random::<bool>(),
    };
    let train: Vec<(usize, usize)> = graph.edges().collect();
    // edge features are arbitrary positive reals here
    let mut feats = EdgeFeatureStore::new(k, n);
    for &(u, v) in &train {
        feats.insert(u, v, (0..k).map(|_| r.random_range(0.5..3.0)).collect()).unwrap();
    }
    let mut params = ModelParams::init(&graph, &config, &mut r).unwrap();
    // larger weights keep activations away from the kinks
    for m in params.tensors_mut() {
        m.scale(1.5);
    }
    let labels = (0..n).map(|_| r.random_range(0..config.num_classes)).collect();
    let p = r.random_range(1..=train.len().min(4));
    let m = r.random_range(1..=2);
    let positives: Vec<(usize, usize)> = (0..p).map(|_| train[r.random_range(0..train.len())]).collect();
    let edge_set = EdgeSet::from_pairs(&train);
    let mut negatives = Vec::new();
    while negatives.len() < p * m {
        let (u, v) = (r.random_range(0..n), r.random_range(0..n));
        if u != v && !edge_set.contains(u, v) {
            negatives.push((u, v));
        }
    }
    let lambdas = Lambdas([0, 1, 2, 3, 4].map(|_| if r.random::<bool>() { r.random_range(0.0..0.2) } else { 0.0 }));
    let mode = ForwardMode {
        fanout: if r.random::<bool>() { Some(2) } else { None },
        dropout: if r.random::<bool>() { 0.3 } else { 0.0 },
    };
    Instance {
        graph,
        feats,
        params,
        labels,
        batch: Batch { positives, negatives },
        comp: LossComposition::new(gamma, lambdas),
        mode,
        seed: r.random(),
    }
}

impl Instance {
    pub fn loss_and_pattern(&self, params: &ModelParams) -> (f64, Vec<usize>) {
        let labels = (self.comp.gamma < 1.0).then_some(self.labels.as_slice());
        let fwd = forward_batch(
            &self.graph,
            params,
            &self.feats,
            labels,
            &self.batch,
            &self.comp,
            self.mode,
            &mut rng(self.seed),
        )
        .unwrap();
        (fwd.total, fwd.activation_pattern())
    }

    pub fn analytic(&self) -> ModelParams {
        let labels = (self.comp.gamma < 1.0).then_some(self.labels.as_slice());
        let fwd = forward_batch(
            &self.graph,
            &self.params,
            &self.feats,
            labels,
            &self.batch,
            &self.comp,
            self.mode,
            &mut rng(self.seed),
        )
        .unwrap();
        backward(&self.params, &fwd, &self.comp).unwrap().grads
    }
}

#[derive(Debug, Default, Clone)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub worst_at: String,
    /// Parameter matrices with at least one checked coordinate.
    pub tensors: Vec<String>,
}

/// Central differences against the analytic gradient, coordinate by
/// coordinate. Coordinates whose perturbation changes any Relu state or max
/// winner are skipped.
pub fn finite_difference_check(inst: &Instance, eps: f64) -> FdReport {
    let analytic = inst.analytic();
    let (_, base_pattern) = inst.loss_and_pattern(&inst.params);
    let names: Vec<String> = inst.params.tensors().into_iter().map(|(n, _, _)| n).collect();
    let grads: Vec<Matrix> = analytic.tensors().into_iter().map(|(_, _, m)| m.clone()).collect();
    let mut report = FdReport::default();
    for (t, name) in names.iter().enumerate() {
        let len = grads[t].as_slice().len();
        let mut touched = false;
        for i in 0..len {
            let mut plus = inst.params.clone();
            plus.tensors_mut()[t].as_mut_slice()[i] += eps;
            let mut minus = inst.params.clone();
            minus.tensors_mut()[t].as_mut_slice()[i] -= eps;
            let (lp, pp) = inst.loss_and_pattern(&plus);
            let (lm, pm) = inst.loss_and_pattern(&minus);
            if pp != base_pattern || pm != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * eps);
            let a = grads[t].as_slice()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            touched = true;
            if rel > report.worst {
                report.worst = rel;
                report.worst_at = format!("{name}[{i}] analytic {a} numeric {numeric}");
            }
        }
        if touched {
            report.tensors.push(name.clone());
        }
    }
    report
}
