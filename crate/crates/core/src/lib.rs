//! Link prediction with a path-aware siamese graph neural network.
//!
//! Pipeline: relay-path shortest-distance edge features ([`path_features`]),
//! a shared neighborhood encoder with an MLP link head ([`model`]), pairwise
//! ranking plus contrastive label losses trained with Adam ([`losses`],
//! [`backward`], [`train`]), K-means content labels ([`clustering`]) and
//! Hits@K evaluation ([`eval`]). The numeric core is generic over [`Scalar`]
//! (`f32` or `f64`); the unsuffixed defaults are `f64`.

pub mod backward;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod path_features;
pub mod scalar;
pub mod synthetic;
pub mod train;

pub use backward::{backward, forward_batch, Batch, BatchForward, GradientTape, LossComposition};
pub use clustering::{assign_labels, kmeans, ClusterAssignment};
pub use config::RunConfig;
pub use error::{PsgError, Result};
pub use eval::{evaluate_split, hits_at_k, score_pairs, EvalReport};
pub use graph::{EdgeSet, EdgeSplit, Graph, SplitRole};
pub use losses::{contrastive_loss, pairwise_loss, total_loss, Lambdas};
pub use matrix::Matrix;
pub use model::{
    encode_node, encode_nodes, predict_label, predict_link, Aggregator, ForwardMode, ModelConfig,
    ModelParams, ParamGroup,
};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use path_features::{bfs_spd, build_edge_features, relay_path_feature, EdgeFeatureStore, UNREACHABLE};
pub use scalar::Scalar;
pub use train::{train_epoch, EpochReport, TrainConfig, TrainState};

pub type GraphF64 = Graph<f64>;
pub type GraphF32 = Graph<f32>;
pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelParamsF32 = ModelParams<f32>;
pub type EdgeFeatureStoreF64 = EdgeFeatureStore<f64>;
pub type EdgeFeatureStoreF32 = EdgeFeatureStore<f32>;
pub type GradientTapeF64 = GradientTape<f64>;
pub type GradientTapeF32 = GradientTape<f32>;
