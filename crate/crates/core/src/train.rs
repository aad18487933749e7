//! Negative sampling and the epoch loop.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backward::{backward, forward_batch, Batch, LossComposition};
use crate::error::{PsgError, Result};
use crate::graph::{sample_non_edges, EdgeSet, EdgeSplit, Graph};
use crate::losses::{check_gamma, Lambdas};
use crate::model::{ForwardMode, ModelParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::path_features::EdgeFeatureStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// `λ₁..λ₅`.
    pub lambdas: [f64; 5],
    pub gamma: f64,
    pub negatives_per_positive: usize,
    pub dropout: f64,
    /// Neighbors sampled per node and layer during training; `None` uses all.
    pub fanout: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 65536,
            epochs: 500,
            lambdas: [0.0; 5],
            gamma: 0.5,
            negatives_per_positive: 1,
            dropout: 0.3,
            fanout: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(PsgError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(PsgError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.negatives_per_positive == 0 {
            return Err(PsgError::Config(
                "batch_size and negatives_per_positive must be positive".into(),
            ));
        }
        if self.fanout == Some(0) {
            return Err(PsgError::Config("fanout must be positive".into()));
        }
        if self.lambdas.iter().any(|&l| !(l >= 0.0)) {
            return Err(PsgError::Config("lambdas must be non-negative".into()));
        }
        Ok(())
    }

    pub fn composition<T: Scalar>(&self) -> LossComposition<T> {
        LossComposition::new(T::lit(self.gamma), Lambdas(self.lambdas.map(T::lit)))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_learning_rate(self.learning_rate)
    }

    pub fn mode(&self) -> ForwardMode {
        ForwardMode {
            fanout: self.fanout,
            dropout: self.dropout,
        }
    }
}

/// Optimizer moments plus the random stream driving shuffling, negative
/// sampling, neighbor sampling and dropout.
#[derive(Debug, Clone)]
pub struct TrainState<T = f64> {
    pub adam: AdamState<T>,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: &ModelParams<T>, seed: u64) -> Self {
        TrainState {
            adam: AdamState::new(params),
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean `L_h` over batches.
    pub pairwise: f64,
    /// Mean `L_c` over batches.
    pub contrastive: f64,
    pub total: f64,
    pub batches: usize,
}

/// `count` uniform pairs `(u, v)`, `u != v`, that are not edges of `g`.
pub fn sample_negatives<T: Scalar>(
    g: &Graph<T>,
    count: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<Vec<(usize, usize)>> {
    if g.is_complete() {
        return Err(PsgError::Unsatisfiable(
            "graph is complete; no negative pairs exist".into(),
        ));
    }
    sample_non_edges(g.num_nodes(), |u, v| g.has_edge(u, v), g.num_edges(), count, rng)
}

/// Like [`sample_negatives`] but excluding an arbitrary pair set.
pub fn sample_negatives_excluding(
    num_nodes: usize,
    exclude: &EdgeSet,
    count: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<Vec<(usize, usize)>> {
    sample_non_edges(num_nodes, |u, v| exclude.contains(u, v), exclude.len(), count, rng)
}

/// One pass over the shuffled training positives.
///
/// Each batch draws `negatives_per_positive` negatives per positive from the
/// non-edges of `g`, runs the forward pass in training mode, backpropagates
/// the γ-weighted loss and takes one Adam step.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Scalar>(
    g: &Graph<T>,
    feats: &EdgeFeatureStore<T>,
    params: &mut ModelParams<T>,
    content_labels: Option<&[usize]>,
    split: &EdgeSplit,
    config: &TrainConfig,
    state: &mut TrainState<T>,
) -> Result<EpochReport> {
    config.validate()?;
    if split.train_pos.is_empty() {
        return Err(PsgError::Precondition("no training edges".into()));
    }
    let comp = config.composition::<T>();
    let adam = config.adam();
    let mode = config.mode();
    state.epoch += 1;

    let mut order = split.train_pos.clone();
    order.shuffle(&mut state.rng);

    let (mut lh, mut lc, mut total) = (0.0, 0.0, 0.0);
    let mut batches = 0;
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let negatives =
            sample_negatives(g, chunk.len() * config.negatives_per_positive, &mut state.rng)?;
        let batch = Batch {
            positives: chunk.to_vec(),
            negatives,
        };
        let fwd = forward_batch(g, params, feats, content_labels, &batch, &comp, mode, &mut state.rng)?;
        if !fwd.total.is_finite() {
            return Err(PsgError::NonFinite(format!(
                "loss at epoch {} batch {b}",
                state.epoch
            )));
        }
        let tape = backward(params, &fwd, &comp)?;
        adam_step(params, &tape, &mut state.adam, &adam).map_err(|e| match e {
            PsgError::NonFinite(what) => {
                PsgError::NonFinite(format!("{what} at epoch {} batch {b}", state.epoch))
            }
            other => other,
        })?;
        lh += fwd.pairwise.as_f64();
        lc += fwd.contrastive.as_f64();
        total += fwd.total.as_f64();
        batches += 1;
    }
    let n = batches as f64;
    Ok(EpochReport {
        epoch: state.epoch,
        pairwise: lh / n,
        contrastive: lc / n,
        total: total / n,
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn negatives_avoid_edges() {
        let g: Graph = Graph::from_edges(4, [(0, 1), (0, 2), (1, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_negatives(&g, 2000, &mut rng).unwrap();
        assert_eq!(pairs.len(), 2000);
        for (u, v) in pairs {
            assert_ne!(u, v);
            assert!(u == 3 || v == 3, "({u}, {v})");
        }
    }

    #[test]
    fn complete_graph_is_unsatisfiable() {
        let g: Graph = Graph::from_edges(3, [(0, 1), (0, 2), (1, 2)]).unwrap();
        let err = sample_negatives(&g, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, PsgError::Unsatisfiable(_)));
    }

    #[test]
    fn negatives_are_deterministic() {
        let g: Graph = Graph::from_edges(10, [(0, 1), (5, 6)]).unwrap();
        let a = sample_negatives(&g, 50, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = sample_negatives(&g, 50, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        let excl = EdgeSet::from_pairs(&[(2, 3)]);
        let c = sample_negatives_excluding(4, &excl, 500, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let seen: HashSet<_> = c.iter().map(|&(u, v)| crate::graph::edge_key(u, v)).collect();
        assert!(!seen.contains(&(2, 3)));
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.gamma = 1.2;
        assert!(c.validate().is_err());
        c.gamma = 0.5;
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        c.dropout = 0.3;
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
