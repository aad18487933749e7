//! Flat `key = value` run configuration shared by every CLI subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{PsgError, Result};
use crate::graph::SplitRole;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Input and output files. Unset entries are simply not read or written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    /// Training graph edge list; its edges are the training positives.
    pub graph: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub valid_pos: Option<PathBuf>,
    pub valid_neg: Option<PathBuf>,
    pub test_pos: Option<PathBuf>,
    pub test_neg: Option<PathBuf>,
    /// Serialized edge feature store.
    pub edge_features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

const PATH_KEYS: [&str; 11] = [
    "graph",
    "features",
    "valid_pos",
    "valid_neg",
    "test_pos",
    "test_neg",
    "edge_features",
    "labels",
    "checkpoint",
    "log",
    "report",
];

impl Paths {
    fn slot(&mut self, key: &str) -> Option<&mut Option<PathBuf>> {
        Some(match key {
            "graph" => &mut self.graph,
            "features" => &mut self.features,
            "valid_pos" => &mut self.valid_pos,
            "valid_neg" => &mut self.valid_neg,
            "test_pos" => &mut self.test_pos,
            "test_neg" => &mut self.test_neg,
            "edge_features" => &mut self.edge_features,
            "labels" => &mut self.labels,
            "checkpoint" => &mut self.checkpoint,
            "log" => &mut self.log,
            "report" => &mut self.report,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    /// `None` infers the node count from the input files.
    pub num_nodes: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// `None` uses one percent of the nodes.
    pub relay_area_size: Option<usize>,
    /// `None` uses the node count.
    pub cap: Option<usize>,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub eval_k: Vec<usize>,
    pub eval_every: usize,
    pub neg_budget: usize,
    pub eval_split: SplitRole,
    pub workers: usize,
}

impl Default for RunConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            num_nodes: None,
            model: ModelConfig::default(),
            train: TrainConfig {
                learning_rate: 0.005,
                batch_size: 256,
                epochs: 100,
                gamma: 1.0,
                ..TrainConfig::default()
            },
            relay_area_size: None,
            cap: None,
            kmeans_max_iters: 300,
            kmeans_tol: 1e-4,
            eval_k: vec![20],
            eval_every: 1,
            neg_budget: 2000,
            eval_split: SplitRole::Test,
            workers: 1,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| PsgError::Config(format!("invalid value {value:?} for {key}")))
}

fn optional_count(key: &str, value: &str) -> Result<Option<usize>> {
    let n: usize = parse(key, value)?;
    Ok((n > 0).then_some(n))
}

impl RunConfig {
    /// Every recognized key, in canonical order.
    pub fn keys() -> Vec<&'static str> {
        let mut keys = SETTING_KEYS.to_vec();
        keys.extend(PATH_KEYS);
        keys
    }

    /// Applies one setting. Relative paths are joined onto `base`.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        if let Some(slot) = self.paths.slot(&key) {
            let path = PathBuf::from(value);
            *slot = Some(match base {
                Some(b) if path.is_relative() => b.join(path),
                _ => path,
            });
            return Ok(());
        }
        let t = &mut self.train;
        let m = &mut self.model;
        match key.as_str() {
            "num_nodes" => self.num_nodes = optional_count(&key, value)?,
            "seed" => t.seed = parse(&key, value)?,
            "workers" => self.workers = parse(&key, value)?,
            "epochs" => t.epochs = parse(&key, value)?,
            "batch_size" => t.batch_size = parse(&key, value)?,
            "learning_rate" => t.learning_rate = parse(&key, value)?,
            "dropout" => t.dropout = parse(&key, value)?,
            "gamma" => t.gamma = parse(&key, value)?,
            "negatives_per_positive" => t.negatives_per_positive = parse(&key, value)?,
            "fanout" => t.fanout = optional_count(&key, value)?,
            "lambda" => t.lambdas = [parse(&key, value)?; 5],
            "lambda1" => t.lambdas[0] = parse(&key, value)?,
            "lambda2" => t.lambdas[1] = parse(&key, value)?,
            "lambda3" => t.lambdas[2] = parse(&key, value)?,
            "lambda4" => t.lambdas[3] = parse(&key, value)?,
            "lambda5" => t.lambdas[4] = parse(&key, value)?,
            "num_gnn_layers" => m.num_layers = parse(&key, value)?,
            "num_readout_layers" => m.readout_layers = parse(&key, value)?,
            "num_edge_features" => m.edge_dim = parse(&key, value)?,
            "node_embedding_dim" => m.embed_dim = parse(&key, value)?,
            "hidden_channels" => m.hidden_dim = parse(&key, value)?,
            "num_clusters" => m.num_classes = parse(&key, value)?,
            "aggregator" => m.aggregator = value.parse()?,
            "edge_features_every_layer" => m.edge_features_every_layer = parse(&key, value)?,
            "relay_area_size" => self.relay_area_size = optional_count(&key, value)?,
            "cap" => self.cap = optional_count(&key, value)?,
            "kmeans_max_iters" => self.kmeans_max_iters = parse(&key, value)?,
            "kmeans_tol" => self.kmeans_tol = parse(&key, value)?,
            "eval_k" => {
                self.eval_k = value
                    .split(',')
                    .map(|k| parse(&key, k.trim()))
                    .collect::<Result<_>>()?
            }
            "eval_every" => self.eval_every = parse(&key, value)?,
            "neg_budget" => self.neg_budget = parse(&key, value)?,
            "eval_split" => {
                self.eval_split = match value {
                    "valid" => SplitRole::Valid,
                    "test" => SplitRole::Test,
                    _ => return Err(PsgError::Config(format!("invalid eval_split {value:?}"))),
                }
            }
            _ => return Err(PsgError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn setting(&self, key: &str) -> String {
        let t = &self.train;
        let m = &self.model;
        let opt = |v: Option<usize>| v.unwrap_or(0).to_string();
        match key {
            "num_nodes" => opt(self.num_nodes),
            "seed" => t.seed.to_string(),
            "workers" => self.workers.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "dropout" => t.dropout.to_string(),
            "gamma" => t.gamma.to_string(),
            "negatives_per_positive" => t.negatives_per_positive.to_string(),
            "fanout" => opt(t.fanout),
            "lambda1" => t.lambdas[0].to_string(),
            "lambda2" => t.lambdas[1].to_string(),
            "lambda3" => t.lambdas[2].to_string(),
            "lambda4" => t.lambdas[3].to_string(),
            "lambda5" => t.lambdas[4].to_string(),
            "num_gnn_layers" => m.num_layers.to_string(),
            "num_readout_layers" => m.readout_layers.to_string(),
            "num_edge_features" => m.edge_dim.to_string(),
            "node_embedding_dim" => m.embed_dim.to_string(),
            "hidden_channels" => m.hidden_dim.to_string(),
            "num_clusters" => m.num_classes.to_string(),
            "aggregator" => m.aggregator.to_string(),
            "edge_features_every_layer" => m.edge_features_every_layer.to_string(),
            "relay_area_size" => opt(self.relay_area_size),
            "cap" => opt(self.cap),
            "kmeans_max_iters" => self.kmeans_max_iters.to_string(),
            "kmeans_tol" => self.kmeans_tol.to_string(),
            "eval_k" => self
                .eval_k
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "eval_every" => self.eval_every.to_string(),
            "neg_budget" => self.neg_budget.to_string(),
            "eval_split" => self.eval_split.name().to_string(),
            _ => unreachable!("unknown setting {key}"),
        }
    }

    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, base)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| PsgError::Parse {
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            self.set(key, value, base)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PsgError::io(path.display().to_string(), e))?;
        RunConfig::from_text(&text, path.parent())
    }

    /// Canonical `key = value` text of every hyperparameter (no paths).
    pub fn settings_text(&self) -> String {
        SETTING_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.setting(k)))
            .collect()
    }

    /// Short digest of the hyperparameters. Paths and the worker count are
    /// excluded; they do not change any artifact.
    pub fn config_hash(&self) -> String {
        let canonical: String = SETTING_KEYS
            .iter()
            .filter(|&&k| k != "workers")
            .map(|k| format!("{k}={}\n", self.setting(k)))
            .collect();
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Header recorded at the top of every artifact.
    pub fn artifact_header(&self) -> Vec<String> {
        vec![format!(
            "psg {} config={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.config_hash(),
            self.train.seed
        )]
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.eval_k.is_empty() || self.eval_k.contains(&0) {
            return Err(PsgError::Config("eval_k needs positive ranks".into()));
        }
        if self.eval_every == 0 {
            return Err(PsgError::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

const SETTING_KEYS: [&str; 31] = [
    "num_nodes",
    "seed",
    "workers",
    "epochs",
    "batch_size",
    "learning_rate",
    "dropout",
    "gamma",
    "negatives_per_positive",
    "fanout",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "lambda5",
    "num_gnn_layers",
    "num_readout_layers",
    "num_edge_features",
    "node_embedding_dim",
    "hidden_channels",
    "num_clusters",
    "aggregator",
    "edge_features_every_layer",
    "relay_area_size",
    "cap",
    "kmeans_max_iters",
    "kmeans_tol",
    "eval_k",
    "eval_every",
    "neg_budget",
    "eval_split",
];
