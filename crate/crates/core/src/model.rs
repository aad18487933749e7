//! Trainable parameters and the three forward passes.
//!
//! * Encoder, per layer `l`:
//!   `h_v ← Relu(W1 h_v + W2 · Agg_{u ∈ N(v)} Relu(h_u + W3 h_uv))`.
//! * Link predictor: MLP over `h_a ∘ h_b`. Hidden layers use Relu and the
//!   final scalar readout is linear, so scores carry a sign.
//! * Label predictor: `b = Relu(W5 h)`.
//!
//! A single [`ModelParams`] serves both endpoints of every pair. Every
//! forward pass records a trace that the backward pass in
//! [`crate::backward`] consumes.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};

use crate::error::{PsgError, Result};
use crate::graph::{check_node, Graph};
use crate::matrix::Matrix;
use crate::path_features::EdgeFeatureStore;
use crate::scalar::{relu, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    Mean,
    Sum,
    Max,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::Sum => "sum",
            Aggregator::Max => "max",
        })
    }
}

impl FromStr for Aggregator {
    type Err = PsgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "sum" => Ok(Aggregator::Sum),
            "max" => Ok(Aggregator::Max),
            other => Err(PsgError::Config(format!("unknown aggregator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Input embedding width `d₀`.
    pub embed_dim: usize,
    /// Hidden channels of the encoder layers and predictor MLP.
    pub hidden_dim: usize,
    /// Number of shared encoder layers.
    pub num_layers: usize,
    /// Number of link-predictor matrices, the last one being the scalar readout.
    pub readout_layers: usize,
    /// Number of content clusters `C`; zero disables the label head.
    pub num_classes: usize,
    /// Edge feature width `k`; zero disables the edge term.
    pub edge_dim: usize,
    pub aggregator: Aggregator,
    /// When false, only the first encoder layer has an edge projection.
    pub edge_features_every_layer: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            hidden_dim: 64,
            num_layers: 2,
            readout_layers: 2,
            num_classes: 0,
            edge_dim: 3,
            aggregator: Aggregator::Mean,
            edge_features_every_layer: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("readout_layers", self.readout_layers),
        ] {
            if value == 0 {
                return Err(PsgError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Input width of encoder layer `l` (0-based).
    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.embed_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn has_edge_weight(&self, l: usize) -> bool {
        self.edge_dim > 0 && (l == 0 || self.edge_features_every_layer)
    }

    /// Output width of the encoder.
    pub fn output_dim(&self) -> usize {
        self.hidden_dim
    }

    fn to_line(&self) -> String {
        format!(
            "embed_dim={} hidden_dim={} num_layers={} readout_layers={} num_classes={} edge_dim={} aggregator={} edge_features_every_layer={}",
            self.embed_dim,
            self.hidden_dim,
            self.num_layers,
            self.readout_layers,
            self.num_classes,
            self.edge_dim,
            self.aggregator,
            self.edge_features_every_layer
        )
    }
}

/// How layer-0 inputs `h_v⁰` are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum InputEncoding<T = f64> {
    /// Free `N × d₀` table, for graphs without content features.
    Embedding(Matrix<T>),
    /// `d₀ × d_x` projection of the content features.
    Projection(Matrix<T>),
}

impl<T: Scalar> InputEncoding<T> {
    pub fn matrix(&self) -> &Matrix<T> {
        match self {
            InputEncoding::Embedding(m) | InputEncoding::Projection(m) => m,
        }
    }

    fn matrix_mut(&mut self) -> &mut Matrix<T> {
        match self {
            InputEncoding::Embedding(m) | InputEncoding::Projection(m) => m,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            InputEncoding::Embedding(_) => "embedding",
            InputEncoding::Projection(_) => "projection",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T = f64> {
    /// Self weight `W1`, `hidden × d_in`.
    pub w1: Matrix<T>,
    /// Neighbor weight `W2`, `hidden × d_in`.
    pub w2: Matrix<T>,
    /// Edge projection `W3`, `d_in × k`.
    pub w3: Option<Matrix<T>>,
}

/// Regularization group of a parameter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// `W1` of every layer, plus the input embedding or projection.
    SelfWeight,
    /// `W2` of every layer.
    NeighborWeight,
    /// `W3` of every layer.
    EdgeWeight,
    /// Link predictor stack `W4`.
    Readout,
    /// Label head `W5`.
    LabelHead,
}

impl ParamGroup {
    pub fn index(self) -> usize {
        match self {
            ParamGroup::SelfWeight => 0,
            ParamGroup::NeighborWeight => 1,
            ParamGroup::EdgeWeight => 2,
            ParamGroup::Readout => 3,
            ParamGroup::LabelHead => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f64> {
    pub config: ModelConfig,
    pub input: InputEncoding<T>,
    pub layers: Vec<EncoderLayer<T>>,
    /// `W4` stack; the last matrix has one row.
    pub readout: Vec<Matrix<T>>,
    /// `W5`, `C × hidden`.
    pub label_head: Matrix<T>,
}

/// Input source for [`ModelParams::zeros`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Embedding { num_nodes: usize },
    Projection { feature_dim: usize },
}

impl InputKind {
    pub fn for_graph<T: Scalar>(g: &Graph<T>) -> Self {
        match g.node_features() {
            Some(x) => InputKind::Projection {
                feature_dim: x.cols(),
            },
            None => InputKind::Embedding {
                num_nodes: g.num_nodes(),
            },
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters of the right shapes.
    pub fn zeros(config: &ModelConfig, input: InputKind) -> Result<Self> {
        config.validate()?;
        let input = match input {
            InputKind::Embedding { num_nodes } => {
                InputEncoding::Embedding(Matrix::zeros(num_nodes, config.embed_dim))
            }
            InputKind::Projection { feature_dim } => {
                InputEncoding::Projection(Matrix::zeros(config.embed_dim, feature_dim))
            }
        };
        let layers = (0..config.num_layers)
            .map(|l| {
                let d_in = config.layer_input_dim(l);
                EncoderLayer {
                    w1: Matrix::zeros(config.hidden_dim, d_in),
                    w2: Matrix::zeros(config.hidden_dim, d_in),
                    w3: config
                        .has_edge_weight(l)
                        .then(|| Matrix::zeros(d_in, config.edge_dim)),
                }
            })
            .collect();
        let d_out = config.output_dim();
        let readout = (0..config.readout_layers)
            .map(|i| {
                let cols = if i == 0 { d_out } else { config.hidden_dim };
                let rows = if i + 1 == config.readout_layers {
                    1
                } else {
                    config.hidden_dim
                };
                Matrix::zeros(rows, cols)
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            input,
            layers,
            readout,
            label_head: Matrix::zeros(config.num_classes, d_out),
        })
    }

    /// Fan-scaled uniform initialization.
    ///
    /// Weight matrices draw from `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`;
    /// the embedding table draws from `U(-b, b)` with `b = sqrt(3 / d₀)`.
    /// Matrices are filled in checkpoint order with the label head last.
    pub fn init(g: &Graph<T>, config: &ModelConfig, rng: &mut (impl RngCore + ?Sized)) -> Result<Self> {
        let mut params = Self::zeros(config, InputKind::for_graph(g))?;
        let embedding = matches!(params.input, InputEncoding::Embedding(_));
        for (i, m) in params.tensors_mut().into_iter().enumerate() {
            let bound = if i == 0 && embedding {
                embedding_bound(m)
            } else {
                glorot_bound(m)
            };
            for x in m.as_mut_slice() {
                *x = T::lit(rng.random_range(-bound..=bound));
            }
        }
        Ok(params)
    }

    /// Bound used by [`ModelParams::init`] for the `index`-th tensor.
    pub fn init_bound(&self, index: usize) -> f64 {
        let tensors = self.tensors();
        let m = tensors[index].2;
        if index == 0 && matches!(self.input, InputEncoding::Embedding(_)) {
            embedding_bound(m)
        } else {
            glorot_bound(m)
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for m in out.tensors_mut() {
            m.as_mut_slice().iter_mut().for_each(|x| *x = T::zero());
        }
        out
    }

    /// Every matrix with its name and regularization group, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, ParamGroup, &Matrix<T>)> {
        let mut out = vec![(
            format!("input.{}", self.input.name()),
            ParamGroup::SelfWeight,
            self.input.matrix(),
        )];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("encoder.{l}.w1"), ParamGroup::SelfWeight, &layer.w1));
            out.push((format!("encoder.{l}.w2"), ParamGroup::NeighborWeight, &layer.w2));
            if let Some(w3) = &layer.w3 {
                out.push((format!("encoder.{l}.w3"), ParamGroup::EdgeWeight, w3));
            }
        }
        for (i, m) in self.readout.iter().enumerate() {
            out.push((format!("readout.{i}"), ParamGroup::Readout, m));
        }
        out.push(("label_head".into(), ParamGroup::LabelHead, &self.label_head));
        out
    }

    /// Mutable matrices in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = vec![self.input.matrix_mut()];
        for layer in &mut self.layers {
            out.push(&mut layer.w1);
            out.push(&mut layer.w2);
            if let Some(w3) = &mut layer.w3 {
                out.push(w3);
            }
        }
        out.extend(self.readout.iter_mut());
        out.push(&mut self.label_head);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, m)| m.rows() * m.cols()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, m)| m.is_finite())
    }

    /// Checks the parameter shapes against a graph and feature store.
    pub fn check_compatible(&self, g: &Graph<T>, feats: &EdgeFeatureStore<T>) -> Result<()> {
        match (&self.input, g.node_features()) {
            (InputEncoding::Embedding(m), _) if m.rows() != g.num_nodes() => {
                Err(PsgError::Dimension(format!(
                    "embedding table has {} rows for {} nodes",
                    m.rows(),
                    g.num_nodes()
                )))
            }
            (InputEncoding::Projection(_), None) => Err(PsgError::MissingFeatures(
                "model projects content features but the graph has none".into(),
            )),
            (InputEncoding::Projection(p), Some(x)) if p.cols() != x.cols() => {
                Err(PsgError::Dimension(format!(
                    "projection expects {} feature columns, graph has {}",
                    p.cols(),
                    x.cols()
                )))
            }
            _ if self.config.edge_dim > 0 && feats.k() != self.config.edge_dim => {
                Err(PsgError::Dimension(format!(
                    "model edge_dim {} but feature store k = {}",
                    self.config.edge_dim,
                    feats.k()
                )))
            }
            _ => Ok(()),
        }
    }

    /// Versioned text checkpoint. Values use the shortest round-trip decimal
    /// form, so parsing reproduces every bit.
    ///
    /// ```text
    /// # <header lines>
    /// psg-checkpoint 1
    /// config embed_dim=.. hidden_dim=.. ... input=embedding
    /// tensor <name> <rows> <cols>
    /// <one line per row, space separated>
    /// end
    /// ```
    pub fn to_text(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&format!("psg-checkpoint {CHECKPOINT_VERSION}\n"));
        let input_dim = self.input.matrix().shape();
        let input_desc = match &self.input {
            InputEncoding::Embedding(_) => format!("embedding:{}", input_dim.0),
            InputEncoding::Projection(_) => format!("projection:{}", input_dim.1),
        };
        out.push_str(&format!("config {} input={input_desc}\n", self.config.to_line()));
        for (name, _, m) in self.tensors() {
            out.push_str(&format!("tensor {name} {} {}\n", m.rows(), m.cols()));
            for i in 0..m.rows() {
                let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| PsgError::Checkpoint(msg);
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.starts_with('#'));
        match lines.next() {
            Some(l) if l == format!("psg-checkpoint {CHECKPOINT_VERSION}") => {}
            other => return Err(bad(format!("unsupported checkpoint header {other:?}"))),
        }
        let config_line = lines
            .next()
            .and_then(|l| l.strip_prefix("config "))
            .ok_or_else(|| bad("missing config line".into()))?;
        let fields: HashMap<&str, &str> = config_line
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let field = |key: &str| -> Result<&str> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| bad(format!("config is missing {key}")))
        };
        let num = |key: &str| -> Result<usize> {
            field(key)?
                .parse()
                .map_err(|_| bad(format!("invalid {key}")))
        };
        let config = ModelConfig {
            embed_dim: num("embed_dim")?,
            hidden_dim: num("hidden_dim")?,
            num_layers: num("num_layers")?,
            readout_layers: num("readout_layers")?,
            num_classes: num("num_classes")?,
            edge_dim: num("edge_dim")?,
            aggregator: field("aggregator")?.parse()?,
            edge_features_every_layer: field("edge_features_every_layer")?
                .parse()
                .map_err(|_| bad("invalid edge_features_every_layer".into()))?,
        };
        let input = match field("input")?.split_once(':') {
            Some(("embedding", n)) => InputKind::Embedding {
                num_nodes: n.parse().map_err(|_| bad("invalid input size".into()))?,
            },
            Some(("projection", d)) => InputKind::Projection {
                feature_dim: d.parse().map_err(|_| bad("invalid input size".into()))?,
            },
            _ => return Err(bad("invalid input descriptor".into())),
        };
        let mut params = Self::zeros(&config, input)?;
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _, _)| n).collect();
        for (name, m) in names.iter().zip(params.tensors_mut()) {
            let head = lines
                .next()
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            let expected = format!("tensor {name} {} {}", m.rows(), m.cols());
            if head != expected {
                return Err(bad(format!("expected {expected:?}, found {head:?}")));
            }
            for i in 0..m.rows() {
                let line = lines
                    .next()
                    .ok_or_else(|| bad(format!("{name}: missing row {i}")))?;
                let row = m.row_mut(i);
                let mut count = 0;
                for (slot, tok) in row.iter_mut().zip(line.split_whitespace()) {
                    *slot = tok
                        .parse()
                        .map_err(|_| bad(format!("{name}: invalid value {tok:?}")))?;
                    count += 1;
                }
                if count != row.len() || line.split_whitespace().count() != row.len() {
                    return Err(bad(format!("{name}: row {i} has the wrong length")));
                }
            }
        }
        match lines.next() {
            Some("end") => Ok(params),
            other => Err(bad(format!("expected end marker, found {other:?}"))),
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

fn glorot_bound<T: Scalar>(m: &Matrix<T>) -> f64 {
    let fan = (m.rows() + m.cols()).max(1) as f64;
    (6.0 / fan).sqrt()
}

fn embedding_bound<T: Scalar>(m: &Matrix<T>) -> f64 {
    (3.0 / m.cols().max(1) as f64).sqrt()
}

/// Neighbor sampling and dropout settings for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardMode {
    /// `None` aggregates the full neighborhood.
    pub fanout: Option<usize>,
    /// Drop probability for hidden activations; 0 in evaluation.
    pub dropout: f64,
}

impl ForwardMode {
    pub const EVAL: ForwardMode = ForwardMode {
        fanout: None,
        dropout: 0.0,
    };
}

/// Inverted dropout scale factors (`0` or `1 / (1 - rate)`).
pub(crate) fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// Record of one encoder layer, computing level `l + 1` from level `l`.
#[derive(Debug, Clone)]
pub struct LayerTrace<T = f64> {
    /// Per output node, a range into the message arrays.
    pub message_offsets: Vec<usize>,
    /// Neighbor node id of each message.
    pub message_sources: Vec<usize>,
    /// Row of each message's source in the level-`l` hidden matrix.
    pub message_rows: Vec<usize>,
    /// `h_u + W3 h_uv`, one row per message.
    pub message_pre: Matrix<T>,
    /// `h_uv`, one row per message (zero columns without an edge weight).
    pub edge_inputs: Matrix<T>,
    /// Aggregated messages, one row per output node.
    pub aggregate: Matrix<T>,
    /// For the max aggregator, the winning message per (node, channel).
    pub argmax: Vec<usize>,
    /// `W1 h_v + W2 agg`, one row per output node.
    pub pre: Matrix<T>,
    pub mask: Option<Matrix<T>>,
}

/// Record of an encoder forward pass over a set of target nodes.
#[derive(Debug, Clone)]
pub struct EncoderTrace<T = f64> {
    /// `levels[l]` lists the nodes whose `h^l` was computed; the last level
    /// holds the targets. Each level starts with the nodes of the next one.
    pub levels: Vec<Vec<usize>>,
    /// `hidden[l]` rows align with `levels[l]`.
    pub hidden: Vec<Matrix<T>>,
    pub layers: Vec<LayerTrace<T>>,
    /// Content rows `x_v` of `levels[0]` when the input is a projection.
    pub input_features: Option<Matrix<T>>,
    target_rows: HashMap<usize, usize>,
}

impl<T: Scalar> EncoderTrace<T> {
    /// Final embedding of a target node.
    pub fn embedding(&self, v: usize) -> Option<&[T]> {
        let row = *self.target_rows.get(&v)?;
        Some(self.hidden.last()?.row(row))
    }

    pub(crate) fn target_row(&self, v: usize) -> Option<usize> {
        self.target_rows.get(&v).copied()
    }

    pub fn targets(&self) -> &[usize] {
        self.levels.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Layer-0 representation of node `v`.
fn input_row<T: Scalar>(g: &Graph<T>, params: &ModelParams<T>, v: usize) -> Result<Vec<T>> {
    match &params.input {
        InputEncoding::Embedding(table) => Ok(table.row(v).to_vec()),
        InputEncoding::Projection(p) => {
            let x = g.node_features().ok_or_else(|| {
                PsgError::MissingFeatures("model projects content features but the graph has none".into())
            })?;
            Ok(p.matvec(x.row(v)))
        }
    }
}

/// Encodes `targets` with the shared encoder, sampling neighborhoods from
/// the top layer down and then evaluating bottom-up.
pub fn encode_nodes<T: Scalar>(
    g: &Graph<T>,
    params: &ModelParams<T>,
    feats: &EdgeFeatureStore<T>,
    targets: &[usize],
    mode: ForwardMode,
    rng: &mut dyn RngCore,
) -> Result<EncoderTrace<T>> {
    params.check_compatible(g, feats)?;
    let cfg = &params.config;
    let num_layers = cfg.num_layers;

    let mut top = Vec::new();
    let mut target_rows = HashMap::new();
    for &v in targets {
        check_node(v, g.num_nodes())?;
        if let std::collections::hash_map::Entry::Vacant(e) = target_rows.entry(v) {
            e.insert(top.len());
            top.push(v);
        }
    }

    // Sample the computation tree top-down.
    let mut levels = vec![Vec::new(); num_layers + 1];
    let mut sampled: Vec<Vec<Vec<usize>>> = vec![Vec::new(); num_layers];
    levels[num_layers] = top;
    for l in (0..num_layers).rev() {
        let mut level = levels[l + 1].clone();
        let mut rows: HashMap<usize, usize> =
            level.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut per_node = Vec::with_capacity(level.len());
        for &v in &levels[l + 1] {
            let nbrs = match mode.fanout {
                Some(fanout) => g.sample_neighbors(v, fanout, rng)?,
                None => g.adj(v).to_vec(),
            };
            for &u in &nbrs {
                rows.entry(u).or_insert_with(|| {
                    level.push(u);
                    level.len() - 1
                });
            }
            per_node.push(nbrs);
        }
        levels[l] = level;
        sampled[l] = per_node;
    }

    let mut h0 = Matrix::zeros(levels[0].len(), cfg.embed_dim);
    for (i, &v) in levels[0].iter().enumerate() {
        h0.row_mut(i).copy_from_slice(&input_row(g, params, v)?);
    }
    let input_features = match (&params.input, g.node_features()) {
        (InputEncoding::Projection(_), Some(x)) => Some(Matrix::from_fn(levels[0].len(), x.cols(), |i, j| {
            x.get(levels[0][i], j)
        })),
        _ => None,
    };
    let mut hidden = vec![h0];
    let mut layers = Vec::with_capacity(num_layers);

    for (l, layer) in params.layers.iter().enumerate() {
        let below = &hidden[l];
        let row_of: HashMap<usize, usize> =
            levels[l].iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let d_in = cfg.layer_input_dim(l);
        let outputs = &levels[l + 1];
        let total_messages: usize = sampled[l].iter().map(Vec::len).sum();
        let k = layer.w3.as_ref().map_or(0, Matrix::cols);

        let mut message_offsets = Vec::with_capacity(outputs.len() + 1);
        let mut message_sources = Vec::with_capacity(total_messages);
        let mut message_rows = Vec::with_capacity(total_messages);
        let mut message_pre = Matrix::zeros(total_messages, d_in);
        let mut edge_inputs = Matrix::zeros(total_messages, k);
        let mut aggregate = Matrix::zeros(outputs.len(), d_in);
        let mut argmax = Vec::new();
        if cfg.aggregator == Aggregator::Max {
            argmax = vec![usize::MAX; outputs.len() * d_in];
        }
        let mut pre = Matrix::zeros(outputs.len(), cfg.hidden_dim);
        let mut out = Matrix::zeros(outputs.len(), cfg.hidden_dim);
        message_offsets.push(0);

        for (i, &v) in outputs.iter().enumerate() {
            let start = message_sources.len();
            for &u in &sampled[l][i] {
                let m = message_sources.len();
                let src_row = row_of[&u];
                message_sources.push(u);
                message_rows.push(src_row);
                let msg = message_pre.row_mut(m);
                msg.copy_from_slice(below.row(src_row));
                if let Some(w3) = &layer.w3 {
                    let h_uv = feats.get(u, v).ok_or(PsgError::MissingEdgeFeature(u, v))?;
                    edge_inputs.row_mut(m).copy_from_slice(h_uv);
                    for (x, w) in msg.iter_mut().zip(w3.matvec(h_uv)) {
                        *x += w;
                    }
                }
            }
            let end = message_sources.len();
            message_offsets.push(end);

            let agg = aggregate.row_mut(i);
            if end > start {
                match cfg.aggregator {
                    Aggregator::Mean | Aggregator::Sum => {
                        for m in start..end {
                            for (a, &x) in agg.iter_mut().zip(message_pre.row(m)) {
                                *a += relu(x);
                            }
                        }
                        if cfg.aggregator == Aggregator::Mean {
                            let n = T::from_count(end - start);
                            agg.iter_mut().for_each(|a| *a /= n);
                        }
                    }
                    Aggregator::Max => {
                        for c in 0..d_in {
                            let mut best = start;
                            for m in start + 1..end {
                                if relu(message_pre.get(m, c)) > relu(message_pre.get(best, c)) {
                                    best = m;
                                }
                            }
                            agg[c] = relu(message_pre.get(best, c));
                            argmax[i * d_in + c] = best;
                        }
                    }
                }
            }

            // Output node i is also row i of the level below.
            let mut z = layer.w1.matvec(below.row(i));
            for (zj, w) in z.iter_mut().zip(layer.w2.matvec(aggregate.row(i))) {
                *zj += w;
            }
            pre.row_mut(i).copy_from_slice(&z);
            for (o, &zj) in out.row_mut(i).iter_mut().zip(&z) {
                *o = relu(zj);
            }
        }

        let mask = if mode.dropout > 0.0 && l + 1 < num_layers {
            let mask = Matrix::from_vec(
                outputs.len(),
                cfg.hidden_dim,
                dropout_mask(outputs.len() * cfg.hidden_dim, mode.dropout, rng),
            )?;
            for (o, &s) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *o *= s;
            }
            Some(mask)
        } else {
            None
        };

        layers.push(LayerTrace {
            message_offsets,
            message_sources,
            message_rows,
            message_pre,
            edge_inputs,
            aggregate,
            argmax,
            pre,
            mask,
        });
        hidden.push(out);
    }

    Ok(EncoderTrace {
        levels,
        hidden,
        layers,
        input_features,
        target_rows,
    })
}

/// Encodes a single node. Without a fanout the full neighborhood is used
/// and `rng` is not consumed.
pub fn encode_node<T: Scalar>(
    g: &Graph<T>,
    params: &ModelParams<T>,
    feats: &EdgeFeatureStore<T>,
    v: usize,
    fanout: Option<usize>,
    rng: &mut dyn RngCore,
) -> Result<(Vec<T>, EncoderTrace<T>)> {
    let trace = encode_nodes(
        g,
        params,
        feats,
        &[v],
        ForwardMode {
            fanout,
            dropout: 0.0,
        },
        rng,
    )?;
    let emb = trace
        .embedding(v)
        .ok_or_else(|| PsgError::Internal("target missing from trace".into()))?
        .to_vec();
    Ok((emb, trace))
}

/// Record of one link-predictor evaluation.
#[derive(Debug, Clone)]
pub struct LinkTrace<T = f64> {
    pub left: Vec<T>,
    pub right: Vec<T>,
    /// `inputs[i]` enters readout matrix `i`; `inputs[0] = left ∘ right`.
    pub inputs: Vec<Vec<T>>,
    /// Pre-activations of the hidden readout layers.
    pub pre: Vec<Vec<T>>,
    pub masks: Vec<Option<Vec<T>>>,
    pub score: T,
}

pub(crate) fn predict_link_traced<T: Scalar>(
    params: &ModelParams<T>,
    h1: &[T],
    h2: &[T],
    dropout: f64,
    rng: &mut dyn RngCore,
) -> Result<LinkTrace<T>> {
    let d = params.readout[0].cols();
    if h1.len() != d || h2.len() != d {
        return Err(PsgError::Dimension(format!(
            "link predictor expects {d}-dim embeddings, got {} and {}",
            h1.len(),
            h2.len()
        )));
    }
    let mut x: Vec<T> = h1.iter().zip(h2).map(|(&a, &b)| a * b).collect();
    let mut inputs = Vec::with_capacity(params.readout.len());
    let mut pre = Vec::new();
    let mut masks = Vec::new();
    let last = params.readout.len() - 1;
    for (i, w) in params.readout.iter().enumerate() {
        let z = w.matvec(&x);
        inputs.push(std::mem::take(&mut x));
        if i == last {
            return Ok(LinkTrace {
                left: h1.to_vec(),
                right: h2.to_vec(),
                inputs,
                pre,
                masks,
                score: z[0],
            });
        }
        let mut a: Vec<T> = z.iter().map(|&v| relu(v)).collect();
        let mask = (dropout > 0.0).then(|| dropout_mask::<T>(a.len(), dropout, rng));
        if let Some(mask) = &mask {
            a.iter_mut().zip(mask).for_each(|(v, &s)| *v *= s);
        }
        pre.push(z);
        masks.push(mask);
        x = a;
    }
    unreachable!("readout stack is never empty")
}

/// Link score of two embeddings (evaluation mode).
pub fn predict_link<T: Scalar>(
    params: &ModelParams<T>,
    h1: &[T],
    h2: &[T],
) -> Result<(T, LinkTrace<T>)> {
    let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let trace = predict_link_traced(params, h1, h2, 0.0, &mut unused)?;
    Ok((trace.score, trace))
}

#[derive(Debug, Clone)]
pub struct LabelTrace<T = f64> {
    pub input: Vec<T>,
    pub pre: Vec<T>,
    pub logits: Vec<T>,
}

pub(crate) fn predict_label_traced<T: Scalar>(
    params: &ModelParams<T>,
    h: &[T],
) -> Result<LabelTrace<T>> {
    if h.len() != params.label_head.cols() {
        return Err(PsgError::Dimension(format!(
            "label head expects {}-dim embedding, got {}",
            params.label_head.cols(),
            h.len()
        )));
    }
    let pre = params.label_head.matvec(h);
    let logits = pre.iter().map(|&x| relu(x)).collect();
    Ok(LabelTrace {
        input: h.to_vec(),
        pre,
        logits,
    })
}

/// Behavior-label logits `Relu(W5 h)`.
pub fn predict_label<T: Scalar>(params: &ModelParams<T>, h: &[T]) -> Result<Vec<T>> {
    Ok(predict_label_traced(params, h)?.logits)
}
