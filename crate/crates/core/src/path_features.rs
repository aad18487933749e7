//! Relay-path shortest-path-distance edge features.
//!
//! For every requested pair `(u, v)` each of `k` rounds contributes one
//! component: the mean over a sampled relay area `R` of
//! `spd(u, r) + spd(r, v)`. A round draws a single relay area shared by all
//! pairs, so the round costs `|R|` breadth-first searches no matter how many
//! pairs are requested.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use rand::seq::index;
use rand::RngCore;
use rayon::prelude::*;

use crate::error::{PsgError, Result};
use crate::graph::{check_node, edge_key, Graph};
use crate::scalar::Scalar;

/// Distance reported by [`bfs_spd`] for nodes not reachable from the source.
pub const UNREACHABLE: usize = usize::MAX;

/// Unweighted single-source shortest-path hop counts.
pub fn bfs_spd<T: Scalar>(g: &Graph<T>, source: usize) -> Result<Vec<usize>> {
    check_node(source, g.num_nodes())?;
    let mut dist = vec![UNREACHABLE; g.num_nodes()];
    let mut queue = VecDeque::with_capacity(g.num_nodes());
    dist[source] = 0;
    queue.push_back(source);
    while let Some(x) = queue.pop_front() {
        let next = dist[x] + 1;
        for &y in g.adj(x) {
            if dist[y] == UNREACHABLE {
                dist[y] = next;
                queue.push_back(y);
            }
        }
    }
    Ok(dist)
}

#[inline]
fn capped(d: usize, cap: usize) -> u64 {
    if d == UNREACHABLE {
        cap as u64
    } else {
        d as u64
    }
}

/// Mean relay-path length between `u` and `v` through the nodes of `relay_area`.
///
/// Unreachable legs count as `cap`. Searches from `u` and `v` directly, so it
/// serves as an independent check on [`build_edge_features`].
pub fn relay_path_feature<T: Scalar>(
    g: &Graph<T>,
    u: usize,
    v: usize,
    relay_area: &[usize],
    cap: usize,
) -> Result<T> {
    if relay_area.is_empty() {
        return Err(PsgError::Precondition("relay area is empty".into()));
    }
    if cap == 0 {
        return Err(PsgError::Precondition("cap must be positive".into()));
    }
    let from_u = bfs_spd(g, u)?;
    let from_v = bfs_spd(g, v)?;
    let mut total = 0u64;
    for &r in relay_area {
        check_node(r, g.num_nodes())?;
        total += capped(from_u[r], cap) + capped(from_v[r], cap);
    }
    Ok(T::from_u64(total).expect("hop sums fit every Scalar") / T::from_count(relay_area.len()))
}

/// Relay areas for `k` rounds: `area_size` distinct nodes per round, ascending.
pub fn draw_relay_areas(
    num_nodes: usize,
    k: usize,
    area_size: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(PsgError::Precondition("k must be at least 1".into()));
    }
    if area_size == 0 || area_size > num_nodes {
        return Err(PsgError::Precondition(format!(
            "relay area size {area_size} must be in 1..={num_nodes}"
        )));
    }
    Ok((0..k)
        .map(|_| {
            let mut area = index::sample(rng, num_nodes, area_size).into_vec();
            area.sort_unstable();
            area
        })
        .collect())
}

/// Default relay area size: one percent of the nodes, at least one.
pub fn default_relay_area_size(num_nodes: usize) -> usize {
    num_nodes.div_ceil(100).max(1)
}

/// Per-pair `k`-dimensional feature vectors, stored once per unordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeatureStore<T = f64> {
    k: usize,
    cap: usize,
    values: BTreeMap<(usize, usize), Vec<T>>,
}

impl<T: Scalar> EdgeFeatureStore<T> {
    pub fn new(k: usize, cap: usize) -> Self {
        EdgeFeatureStore {
            k,
            cap,
            values: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, u: usize, v: usize) -> Option<&[T]> {
        self.values.get(&edge_key(u, v)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, u: usize, v: usize, value: Vec<T>) -> Result<()> {
        if value.len() != self.k {
            return Err(PsgError::Dimension(format!(
                "edge feature has {} components, store k = {}",
                value.len(),
                self.k
            )));
        }
        self.values.insert(edge_key(u, v), value);
        Ok(())
    }

    /// Entries in ascending `(u, v)` order with `u <= v`.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &[T])> {
        self.values.iter().map(|(&p, v)| (p, v.as_slice()))
    }

    /// Text form: "k<TAB>cap" then one "u<TAB>v<TAB>f_1 … f_k" line per pair.
    /// `header` lines are emitted first as '#' comments.
    pub fn to_text(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&format!("{}\t{}\n", self.k, self.cap));
        for (&(u, v), values) in &self.values {
            let joined: Vec<String> = values.iter().map(|x| x.to_string()).collect();
            out.push_str(&format!("{u}\t{v}\t{}\n", joined.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, head) = lines.next().ok_or_else(|| PsgError::Parse {
            line: 1,
            msg: "missing k/cap header".into(),
        })?;
        let bad = |line: usize, msg: &str| PsgError::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut fields = head.split('\t');
        let k: usize = fields
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(line, "invalid k"))?;
        let cap: usize = fields
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(line, "invalid cap"))?;
        let mut store = EdgeFeatureStore::new(k, cap);
        for (line, content) in lines {
            let mut parts = content.splitn(3, '\t');
            let (Some(a), Some(b), Some(rest)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(line, "expected u<TAB>v<TAB>values"));
            };
            let u: usize = a.parse().map_err(|_| bad(line, "invalid node id"))?;
            let v: usize = b.parse().map_err(|_| bad(line, "invalid node id"))?;
            let values = rest
                .split_whitespace()
                .map(|t| t.parse::<T>().map_err(|_| bad(line, "invalid feature value")))
                .collect::<Result<Vec<T>>>()?;
            if values.len() != k {
                return Err(bad(line, "wrong number of feature components"));
            }
            store.values.insert(edge_key(u, v), values);
        }
        Ok(store)
    }
}

/// Features for `pairs` using pre-drawn relay areas (one per round).
pub fn build_edge_features_with_areas<T: Scalar>(
    g: &Graph<T>,
    pairs: &[(usize, usize)],
    relay_areas: &[Vec<usize>],
    cap: usize,
) -> Result<EdgeFeatureStore<T>> {
    if relay_areas.is_empty() {
        return Err(PsgError::Precondition("k must be at least 1".into()));
    }
    if cap == 0 {
        return Err(PsgError::Precondition("cap must be positive".into()));
    }
    for &(u, v) in pairs {
        check_node(u, g.num_nodes())?;
        check_node(v, g.num_nodes())?;
    }
    let mut keys: Vec<(usize, usize)> = pairs.iter().map(|&(u, v)| edge_key(u, v)).collect();
    keys.sort_unstable();
    keys.dedup();

    let k = relay_areas.len();
    let mut columns: Vec<Vec<T>> = Vec::with_capacity(k);
    for area in relay_areas {
        if area.is_empty() {
            return Err(PsgError::Precondition("relay area is empty".into()));
        }
        let dists = area
            .par_iter()
            .map(|&r| bfs_spd(g, r))
            .collect::<Result<Vec<_>>>()?;
        let denom = T::from_count(area.len());
        let column = keys
            .iter()
            .map(|&(u, v)| {
                let total: u64 = dists
                    .iter()
                    .map(|d| capped(d[u], cap) + capped(d[v], cap))
                    .sum();
                T::from_u64(total).expect("hop sums fit every Scalar") / denom
            })
            .collect();
        columns.push(column);
    }

    let mut store = EdgeFeatureStore::new(k, cap);
    for (i, &(u, v)) in keys.iter().enumerate() {
        store
            .values
            .insert((u, v), columns.iter().map(|c| c[i]).collect());
    }
    Ok(store)
}

/// Draws `k` relay areas of `area_size` nodes and featurizes `pairs`.
pub fn build_edge_features<T: Scalar>(
    g: &Graph<T>,
    pairs: &[(usize, usize)],
    k: usize,
    area_size: usize,
    cap: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<EdgeFeatureStore<T>> {
    let areas = draw_relay_areas(g.num_nodes(), k, area_size, rng)?;
    build_edge_features_with_areas(g, pairs, &areas, cap)
}
