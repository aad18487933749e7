//! Candidate scoring and Hits@K.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PsgError, Result};
use crate::graph::{EdgeSplit, Graph, SplitRole};
use crate::model::{encode_nodes, predict_link, ForwardMode, ModelParams};
use crate::path_features::EdgeFeatureStore;
use crate::scalar::Scalar;
use crate::train::sample_negatives_excluding;

/// Evaluation-mode scores (full neighborhoods, no dropout), in input order.
pub fn score_pairs<T: Scalar>(
    g: &Graph<T>,
    feats: &EdgeFeatureStore<T>,
    params: &ModelParams<T>,
    pairs: &[(usize, usize)],
) -> Result<Vec<T>> {
    let nodes: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    // no sampling and no dropout: the stream is never read
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let trace = encode_nodes(g, params, feats, &nodes, ForwardMode::EVAL, &mut unused)?;
    pairs
        .iter()
        .map(|&(a, b)| {
            let ha = trace.embedding(a).expect("encoded above");
            let hb = trace.embedding(b).expect("encoded above");
            predict_link(params, ha, hb).map(|(s, _)| s)
        })
        .collect()
}

/// Fraction of positives scored strictly above the `k`-th highest negative.
/// Returns 1 when there are fewer than `k` negatives.
pub fn hits_at_k<T: Scalar>(pos_scores: &[T], neg_scores: &[T], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(PsgError::Precondition("K must be at least 1".into()));
    }
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(PsgError::Precondition("empty score list".into()));
    }
    if pos_scores.iter().chain(neg_scores).any(|s| s.is_nan()) {
        return Err(PsgError::NonFinite("NaN score".into()));
    }
    if k > neg_scores.len() {
        return Ok(1.0);
    }
    let mut neg = neg_scores.to_vec();
    let (_, kth, _) = neg.select_nth_unstable_by(k - 1, |a, b| b.partial_cmp(a).expect("no NaN"));
    let threshold = *kth;
    let hits = pos_scores.iter().filter(|&&s| s > threshold).count();
    Ok(hits as f64 / pos_scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl ScoreSummary {
    pub fn of<T: Scalar>(scores: &[T]) -> Self {
        let xs = scores.iter().map(|s| s.as_f64());
        ScoreSummary {
            min: xs.clone().fold(f64::INFINITY, f64::min),
            mean: xs.clone().sum::<f64>() / scores.len().max(1) as f64,
            max: xs.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub hits: BTreeMap<usize, f64>,
    pub num_pos: usize,
    pub num_neg: usize,
    pub pos_summary: ScoreSummary,
    pub neg_summary: ScoreSummary,
}

impl EvalReport {
    pub fn from_scores<T: Scalar>(pos: &[T], neg: &[T], ks: &[usize]) -> Result<Self> {
        let mut hits = BTreeMap::new();
        for &k in ks {
            hits.insert(k, hits_at_k(pos, neg, k)?);
        }
        Ok(EvalReport {
            hits,
            num_pos: pos.len(),
            num_neg: neg.len(),
            pos_summary: ScoreSummary::of(pos),
            neg_summary: ScoreSummary::of(neg),
        })
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, h) in &self.hits {
            out.push_str(&format!("hits@{k}={h}\n"));
        }
        out.push_str(&format!("num_pos={}\nnum_neg={}\n", self.num_pos, self.num_neg));
        for (name, s) in [("pos", &self.pos_summary), ("neg", &self.neg_summary)] {
            out.push_str(&format!(
                "{name}_score_min={}\n{name}_score_mean={}\n{name}_score_max={}\n",
                s.min, s.mean, s.max
            ));
        }
        out
    }

    /// Single-line JSON summary.
    pub fn summary_json(&self) -> String {
        let hits: serde_json::Map<String, serde_json::Value> = self
            .hits
            .iter()
            .map(|(k, h)| (format!("hits@{k}"), serde_json::json!(h)))
            .collect();
        serde_json::json!({
            "hits": hits,
            "num_pos": self.num_pos,
            "num_neg": self.num_neg,
            "pos_score_mean": self.pos_summary.mean,
            "neg_score_mean": self.neg_summary.mean,
        })
        .to_string()
    }
}

/// Scores a split's positives against its negatives, or against `neg_budget`
/// freshly sampled non-edges when the split provides none for `role`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split<T: Scalar>(
    g: &Graph<T>,
    feats: &EdgeFeatureStore<T>,
    params: &ModelParams<T>,
    split: &EdgeSplit,
    role: SplitRole,
    ks: &[usize],
    neg_budget: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<EvalReport> {
    let positives = split.positives(role);
    if positives.is_empty() {
        return Err(PsgError::Precondition(format!("{} split has no positives", role.name())));
    }
    let sampled;
    let negatives = if split.negatives(role).is_empty() {
        sampled = sample_negatives_excluding(g.num_nodes(), &split.all_positives(), neg_budget, rng)?;
        &sampled
    } else {
        split.negatives(role)
    };
    let pos = score_pairs(g, feats, params, positives)?;
    let neg = score_pairs(g, feats, params, negatives)?;
    EvalReport::from_scores(&pos, &neg, ks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hits_examples() {
        assert_eq!(hits_at_k(&[0.9], &[0.1, 0.2], 1).unwrap(), 1.0);
        assert_eq!(hits_at_k(&[0.05], &[0.1, 0.2, 0.3], 2).unwrap(), 0.0);
        assert_eq!(hits_at_k(&[0.05], &[0.1, 0.2, 0.3], 4).unwrap(), 1.0);
        // ties with the threshold are misses
        assert_eq!(hits_at_k(&[0.2, 0.3], &[0.1, 0.2], 1).unwrap(), 0.5);
    }

    #[test]
    fn hits_errors() {
        assert!(hits_at_k::<f64>(&[], &[0.1], 1).is_err());
        assert!(hits_at_k(&[0.1], &[], 1).is_err());
        assert!(hits_at_k(&[0.1], &[0.2], 0).is_err());
        assert!(hits_at_k(&[f64::NAN], &[0.2], 1).is_err());
    }

    #[test]
    fn perfect_separation() {
        let r = EvalReport::from_scores(&[5.0, 6.0], &[0.0, 1.0, 2.0], &[1, 2, 3]).unwrap();
        assert!(r.hits.values().all(|&h| h == 1.0));
        assert!(r.to_text().contains("hits@2=1\n"));
        assert!(r.summary_json().starts_with('{'));
        assert!(!r.summary_json().contains('\n'));
    }
}
