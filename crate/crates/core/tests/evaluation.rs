mod common;

use common::*;
use proptest::prelude::*;
use psg::train::sample_negatives_excluding;
use psg::{
    evaluate_split, hits_at_k, score_pairs, Aggregator, EdgeFeatureStore, EdgeSplit, EvalReport, Graph,
    ModelConfig, ModelParams, SplitRole,
};
use rand::Rng;

#[test]
fn large_lists_match_full_sort() {
    let mut r = rng(200);
    for _ in 0..5 {
        // coarse grid so ties with the threshold occur
        let pos: Vec<f64> = (0..200).map(|_| (r.random_range(0.0..1.0f64) * 50.0).round() / 50.0).collect();
        let neg: Vec<f64> = (0..5000).map(|_| (r.random_range(-0.2..0.9f64) * 50.0).round() / 50.0).collect();
        for k in [1, 20, 50, 100, 4999, 5000, 5001] {
            assert_eq!(hits_at_k(&pos, &neg, k).unwrap(), full_sort_hits(&pos, &neg, k), "k={k}");
        }
    }
}

#[test]
fn ties_count_as_misses() {
    assert_eq!(hits_at_k(&[0.5], &[0.5, 0.1], 1).unwrap(), 0.0);
    assert_eq!(hits_at_k(&[0.5, 0.6], &[0.5, 0.5, 0.5], 3).unwrap(), 0.5);
    assert!(hits_at_k(&[0.5, f64::NAN], &[0.1], 1).is_err());
}

fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
    (
        prop::collection::vec(-100i32..100, 1..40),
        prop::collection::vec(-100i32..100, 1..60),
        1usize..70,
    )
        .prop_map(|(p, n, k)| {
            (p.into_iter().map(|x| x as f64 / 10.0).collect(), n.into_iter().map(|x| x as f64 / 10.0).collect(), k)
        })
}

proptest! {
    #[test]
    fn matches_full_sort((pos, neg, k) in scores()) {
        prop_assert_eq!(hits_at_k(&pos, &neg, k).unwrap(), full_sort_hits(&pos, &neg, k));
    }

    #[test]
    fn invariant_under_increasing_maps((pos, neg, k) in scores()) {
        let f = |x: &f64| (x * 0.7).exp() + 3.0 * x;
        let fp: Vec<f64> = pos.iter().map(f).collect();
        let fneg: Vec<f64> = neg.iter().map(f).collect();
        prop_assert_eq!(hits_at_k(&pos, &neg, k).unwrap(), hits_at_k(&fp, &fneg, k).unwrap());
    }

    #[test]
    fn non_decreasing_in_k((pos, neg, k) in scores()) {
        prop_assert!(hits_at_k(&pos, &neg, k).unwrap() <= hits_at_k(&pos, &neg, k + 1).unwrap());
    }

    #[test]
    fn low_negatives_change_nothing((pos, neg, k) in scores()) {
        prop_assume!(k <= neg.len());
        let mut sorted = neg.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut more = neg.clone();
        more.push(sorted[k - 1] - 1.0);
        prop_assert_eq!(hits_at_k(&pos, &neg, k).unwrap(), hits_at_k(&pos, &more, k).unwrap());
    }
}

fn fixture() -> (Graph, EdgeFeatureStore, ModelParams, EdgeSplit) {
    let mut r = rng(12);
    let all = random_edges(40, 0.15, &mut r);
    let canon: Graph = Graph::from_edges(40, all).unwrap();
    let edges: Vec<_> = canon.edges().collect();
    let (held, train) = edges.split_at(20);
    let g: Graph = Graph::from_edges(40, train.iter().copied()).unwrap();
    let mut feats = EdgeFeatureStore::new(1, 40);
    for &(u, v) in train {
        feats.insert(u, v, vec![r.random_range(1.0..3.0)]).unwrap();
    }
    let cfg = ModelConfig {
        embed_dim: 6,
        hidden_dim: 5,
        num_layers: 2,
        readout_layers: 2,
        num_classes: 2,
        edge_dim: 1,
        aggregator: Aggregator::Mean,
        edge_features_every_layer: true,
    };
    let params = ModelParams::init(&g, &cfg, &mut r).unwrap();
    let split = EdgeSplit {
        train_pos: train.to_vec(),
        valid_pos: held[..10].to_vec(),
        test_pos: held[10..].to_vec(),
        ..Default::default()
    };
    (g, feats, params, split)
}

#[test]
fn evaluate_split_is_sampling_then_scoring() {
    let (g, feats, params, split) = fixture();
    let ks = [1, 5, 20];
    let got = evaluate_split(&g, &feats, &params, &split, SplitRole::Test, &ks, 300, &mut rng(77)).unwrap();
    let negatives = sample_negatives_excluding(40, &split.all_positives(), 300, &mut rng(77)).unwrap();
    assert!(negatives.iter().all(|&(u, v)| !split.all_positives().contains(u, v)));
    let pos = score_pairs(&g, &feats, &params, &split.test_pos).unwrap();
    let neg = score_pairs(&g, &feats, &params, &negatives).unwrap();
    assert_eq!(got, EvalReport::from_scores(&pos, &neg, &ks).unwrap());
    for k in ks {
        assert_eq!(got.hits[&k], full_sort_hits(&pos, &neg, k));
    }
    assert_eq!((got.num_pos, got.num_neg), (10, 300));
}

#[test]
fn provided_negatives_take_precedence() {
    let (g, feats, params, mut split) = fixture();
    split.valid_neg = vec![(0, 39), (1, 38), (2, 37)];
    let got = evaluate_split(&g, &feats, &params, &split, SplitRole::Valid, &[2], 5000, &mut rng(1)).unwrap();
    assert_eq!(got.num_neg, 3);
    let pos = score_pairs(&g, &feats, &params, &split.valid_pos).unwrap();
    let neg = score_pairs(&g, &feats, &params, &split.valid_neg).unwrap();
    assert_eq!(got.hits[&2], full_sort_hits(&pos, &neg, 2));
}

#[test]
fn report_formats() {
    let report = EvalReport::from_scores(&[0.9, 0.1], &[0.5, 0.2, 0.0], &[1, 3]).unwrap();
    let text = report.to_text();
    assert!(text.starts_with("hits@1=0.5\nhits@3=1\nnum_pos=2\nnum_neg=3\n"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&report.summary_json()).unwrap();
    assert_eq!(json["hits"]["hits@3"], 1.0);
    assert_eq!(json["num_neg"], 3);
}

#[test]
fn empty_positives_are_rejected() {
    let (g, feats, params, mut split) = fixture();
    split.valid_pos.clear();
    assert!(evaluate_split(&g, &feats, &params, &split, SplitRole::Valid, &[1], 10, &mut rng(0)).is_err());
}
