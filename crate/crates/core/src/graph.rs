//! Undirected graph in compressed sparse row form, plus edge splits.
//!
//! Node ids are dense integers `0..N` taken verbatim from the input files.
//! Adjacency lists are sorted, symmetric and free of self-loops and
//! duplicates; the dense adjacency matrix is never materialized.

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::seq::index;
use rand::{Rng, RngCore};

use crate::error::{PsgError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Unordered node pair normalized so that `.0 <= .1`.
#[inline]
pub fn edge_key(u: usize, v: usize) -> (usize, usize) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Set of unordered pairs, keyed through [`edge_key`].
#[derive(Debug, Clone, Default)]
pub struct EdgeSet {
    pairs: HashSet<(usize, usize)>,
}

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a (usize, usize)>) -> Self {
        let mut set = EdgeSet::new();
        for &(u, v) in pairs {
            set.insert(u, v);
        }
        set
    }

    pub fn insert(&mut self, u: usize, v: usize) -> bool {
        self.pairs.insert(edge_key(u, v))
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.pairs.contains(&edge_key(u, v))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T = f64> {
    num_nodes: usize,
    num_edges: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    node_features: Option<Matrix<T>>,
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph from arbitrary (possibly duplicated or reversed) pairs.
    pub fn from_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for (u, v) in edges {
            check_node(u, num_nodes)?;
            check_node(v, num_nodes)?;
            if u == v {
                return Err(PsgError::Validation(format!("self-loop on node {u}")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Ok(Graph {
            num_nodes,
            num_edges: neighbors.len() / 2,
            offsets,
            neighbors,
            node_features: None,
        })
    }

    /// Attaches an `N × d` content matrix.
    pub fn with_features(mut self, features: Matrix<T>) -> Result<Self> {
        if features.rows() != self.num_nodes {
            return Err(PsgError::Validation(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                self.num_nodes
            )));
        }
        if features.cols() == 0 {
            return Err(PsgError::Validation("feature dimension is zero".into()));
        }
        if !features.is_finite() {
            return Err(PsgError::Validation("non-finite node feature".into()));
        }
        self.node_features = Some(features);
        Ok(self)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn node_features(&self) -> Option<&Matrix<T>> {
        self.node_features.as_ref()
    }

    /// Sorted adjacency list of `v`.
    pub fn neighbors(&self, v: usize) -> Result<&[usize]> {
        check_node(v, self.num_nodes)?;
        Ok(self.adj(v))
    }

    #[inline]
    pub(crate) fn adj(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> Result<usize> {
        check_node(v, self.num_nodes)?;
        Ok(self.offsets[v + 1] - self.offsets[v])
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes && v < self.num_nodes && self.adj(u).binary_search(&v).is_ok()
    }

    /// Every edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.adj(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    /// All nodes `u != v` within `radius` hops of `v`.
    pub fn k_hop_neighborhood(&self, v: usize, radius: usize) -> Result<BTreeSet<usize>> {
        check_node(v, self.num_nodes)?;
        if radius == 0 {
            return Err(PsgError::Precondition("radius must be at least 1".into()));
        }
        let mut depth = vec![usize::MAX; self.num_nodes];
        let mut queue = VecDeque::new();
        let mut out = BTreeSet::new();
        depth[v] = 0;
        queue.push_back(v);
        while let Some(x) = queue.pop_front() {
            if depth[x] == radius {
                continue;
            }
            for &y in self.adj(x) {
                if depth[y] == usize::MAX {
                    depth[y] = depth[x] + 1;
                    out.insert(y);
                    queue.push_back(y);
                }
            }
        }
        Ok(out)
    }

    /// Up to `fanout` distinct neighbors of `v`, uniformly without replacement.
    ///
    /// Returns the full list (without touching `rng`) when the degree does not
    /// exceed `fanout`. The sample is returned in ascending order.
    pub fn sample_neighbors(
        &self,
        v: usize,
        fanout: usize,
        rng: &mut (impl RngCore + ?Sized),
    ) -> Result<Vec<usize>> {
        check_node(v, self.num_nodes)?;
        if fanout == 0 {
            return Err(PsgError::Precondition("fanout must be at least 1".into()));
        }
        let adj = self.adj(v);
        if adj.len() <= fanout {
            return Ok(adj.to_vec());
        }
        let mut picked: Vec<usize> = index::sample(rng, adj.len(), fanout)
            .into_iter()
            .map(|i| adj[i])
            .collect();
        picked.sort_unstable();
        Ok(picked)
    }

    pub fn edge_set(&self) -> EdgeSet {
        let mut set = EdgeSet::new();
        for (u, v) in self.edges() {
            set.insert(u, v);
        }
        set
    }

    pub fn is_complete(&self) -> bool {
        let n = self.num_nodes;
        n < 2 || self.num_edges == n * (n - 1) / 2
    }
}

#[inline]
pub(crate) fn check_node(v: usize, num_nodes: usize) -> Result<()> {
    if v >= num_nodes {
        Err(PsgError::OutOfRange { node: v, num_nodes })
    } else {
        Ok(())
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_id(token: &str, line: usize) -> Result<usize> {
    token.parse().map_err(|_| PsgError::Parse {
        line,
        msg: format!("invalid node id {token:?}"),
    })
}

/// Parses "u<TAB>v" lines; '#' comments and blank lines are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (line, content) in content_lines(text) {
        let mut fields = content.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(PsgError::Parse {
                line,
                msg: "expected exactly two node ids".into(),
            });
        };
        pairs.push((parse_id(a, line)?, parse_id(b, line)?));
    }
    Ok(pairs)
}

/// Parses "node_id<TAB>v1 v2 … vd" lines into an `N × d` matrix.
pub fn parse_features<T: Scalar>(text: &str, num_nodes: usize) -> Result<Matrix<T>> {
    let mut rows: Vec<Option<Vec<T>>> = vec![None; num_nodes];
    let mut dim = None;
    for (line, content) in content_lines(text) {
        let mut fields = content.split_whitespace();
        let id = parse_id(fields.next().unwrap_or_default(), line)?;
        check_node(id, num_nodes)?;
        let values = fields
            .map(|tok| {
                tok.parse::<f64>().map(T::lit).map_err(|_| PsgError::Parse {
                    line,
                    msg: format!("invalid feature value {tok:?}"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        if values.is_empty() {
            return Err(PsgError::Parse {
                line,
                msg: "feature row has no values".into(),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(PsgError::Parse {
                    line,
                    msg: format!("feature row has {} values, expected {d}", values.len()),
                })
            }
            _ => {}
        }
        if rows[id].replace(values).is_some() {
            return Err(PsgError::Validation(format!("duplicate feature row for node {id}")));
        }
    }
    let dim = dim.ok_or_else(|| PsgError::Validation("feature file has no rows".into()))?;
    let mut data = Vec::with_capacity(num_nodes * dim);
    for (v, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| PsgError::Validation(format!("no feature row for node {v}")))?;
        data.extend(row);
    }
    Matrix::from_vec(num_nodes, dim, data)
}

/// Builds a validated graph from edge-list text and optional feature text.
pub fn load_graph<T: Scalar>(
    edge_text: &str,
    num_nodes: usize,
    feature_text: Option<&str>,
) -> Result<Graph<T>> {
    let graph = Graph::from_edges(num_nodes, parse_edge_list(edge_text)?)?;
    match feature_text {
        Some(text) => graph.with_features(parse_features(text, num_nodes)?),
        None => Ok(graph),
    }
}

pub fn write_edge_list(pairs: &[(usize, usize)]) -> String {
    let mut out = String::new();
    for &(u, v) in pairs {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    out
}

/// Which evaluation split to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Valid,
    Test,
}

impl SplitRole {
    pub fn name(self) -> &'static str {
        match self {
            SplitRole::Valid => "valid",
            SplitRole::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub valid_pos: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub valid_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

impl EdgeSplit {
    pub fn positives(&self, role: SplitRole) -> &[(usize, usize)] {
        match role {
            SplitRole::Valid => &self.valid_pos,
            SplitRole::Test => &self.test_pos,
        }
    }

    pub fn negatives(&self, role: SplitRole) -> &[(usize, usize)] {
        match role {
            SplitRole::Valid => &self.valid_neg,
            SplitRole::Test => &self.test_neg,
        }
    }

    /// Every known positive pair (train ∪ valid ∪ test).
    pub fn all_positives(&self) -> EdgeSet {
        let mut set = EdgeSet::new();
        for &(u, v) in self
            .train_pos
            .iter()
            .chain(&self.valid_pos)
            .chain(&self.test_pos)
        {
            set.insert(u, v);
        }
        set
    }

    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let all = [
            &self.train_pos,
            &self.valid_pos,
            &self.test_pos,
            &self.valid_neg,
            &self.test_neg,
        ];
        for pairs in all {
            for &(u, v) in pairs.iter() {
                check_node(u, num_nodes)?;
                check_node(v, num_nodes)?;
            }
        }
        let mut seen = EdgeSet::new();
        for (name, pairs) in [
            ("train", &self.train_pos),
            ("valid", &self.valid_pos),
            ("test", &self.test_pos),
        ] {
            let mut local = EdgeSet::new();
            for &(u, v) in pairs.iter() {
                if !local.insert(u, v) {
                    continue;
                }
                if !seen.insert(u, v) {
                    return Err(PsgError::Validation(format!(
                        "pair ({u}, {v}) in {name} split also appears in an earlier positive split"
                    )));
                }
            }
        }
        for (name, pairs) in [("valid", &self.valid_neg), ("test", &self.test_neg)] {
            if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| seen.contains(u, v)) {
                return Err(PsgError::Validation(format!(
                    "{name} negative ({u}, {v}) is a positive edge"
                )));
            }
        }
        Ok(())
    }
}

/// Shuffles `edges` and cuts them into train/valid/test positives by fraction.
/// Negatives are left empty.
pub fn split_edges(
    edges: &[(usize, usize)],
    valid_fraction: f64,
    test_fraction: f64,
    rng: &mut (impl RngCore + ?Sized),
) -> EdgeSplit {
    use rand::seq::SliceRandom;
    let mut shuffled = edges.to_vec();
    shuffled.shuffle(rng);
    let n_valid = (edges.len() as f64 * valid_fraction).round() as usize;
    let n_test = (edges.len() as f64 * test_fraction).round() as usize;
    let n_train = edges.len().saturating_sub(n_valid + n_test);
    let test_pos = shuffled.split_off(n_train + n_valid);
    let valid_pos = shuffled.split_off(n_train);
    EdgeSplit {
        train_pos: shuffled,
        valid_pos,
        test_pos,
        ..EdgeSplit::default()
    }
}

/// Uniform random pairs `(u, v)`, `u != v`, that are not in `exclude`.
pub(crate) fn sample_non_edges(
    num_nodes: usize,
    exclude: impl Fn(usize, usize) -> bool,
    excluded_count: usize,
    count: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<Vec<(usize, usize)>> {
    if num_nodes < 2 || excluded_count >= num_nodes * (num_nodes - 1) / 2 {
        return Err(PsgError::Unsatisfiable(
            "graph is complete; no non-edge pairs exist".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..num_nodes);
        let v = rng.random_range(0..num_nodes);
        if u != v && !exclude(u, v) {
            out.push((u, v));
        }
    }
    Ok(out)
}
