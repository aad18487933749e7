//! Pipeline commands: featurize → cluster → train → eval.
//!
//! Every command reads a [`RunConfig`], writes its artifact with a `#` header
//! (version, config hash, seed) and reports progress on `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{kmeans, labels_from_text, labels_to_text};
use crate::config::RunConfig;
use crate::error::{PsgError, Result};
use crate::eval::{evaluate_split, EvalReport};
use crate::graph::{parse_edge_list, parse_features, split_edges, write_edge_list, EdgeSplit, Graph, SplitRole};
use crate::model::ModelParams;
use crate::path_features::{build_edge_features, default_relay_area_size, EdgeFeatureStore};
use crate::synthetic::{features_to_text, planted_features, stochastic_block_model};
use crate::train::{sample_negatives_excluding, train_epoch, TrainState};

/// Independent random streams per pipeline stage, all derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Featurize = 1,
    Cluster = 2,
    Init = 3,
    Train = 4,
    Valid = 5,
    Test = 6,
    Synth = 7,
}

pub fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PsgError::io(path.display().to_string(), e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PsgError::io(dir.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| PsgError::io(path.display().to_string(), e))
}

fn need<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| PsgError::Config(format!("no path configured for {key}")))
}

fn report_io(e: std::io::Error) -> PsgError {
    PsgError::io("<output>", e)
}

fn commented(header: &[String]) -> String {
    header.iter().map(|h| format!("# {h}\n")).collect()
}

fn max_id(pairs: &[(usize, usize)]) -> Option<usize> {
    pairs.iter().map(|&(u, v)| u.max(v)).max()
}

/// The training graph plus the evaluation pairs named by the config.
struct Inputs {
    graph: Graph,
    split: EdgeSplit,
}

fn load_pairs(path: &Option<PathBuf>) -> Result<Vec<(usize, usize)>> {
    match path {
        Some(p) => parse_edge_list(&read(p)?),
        None => Ok(Vec::new()),
    }
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let p = &cfg.paths;
    let train = parse_edge_list(&read(need(&p.graph, "graph")?)?)?;
    let mut split = EdgeSplit {
        train_pos: train,
        valid_pos: load_pairs(&p.valid_pos)?,
        test_pos: load_pairs(&p.test_pos)?,
        valid_neg: load_pairs(&p.valid_neg)?,
        test_neg: load_pairs(&p.test_neg)?,
    };
    let feature_text = p.features.as_deref().map(read).transpose()?;
    let num_nodes = match cfg.num_nodes {
        Some(n) => n,
        None => {
            let lists = [
                &split.train_pos,
                &split.valid_pos,
                &split.test_pos,
                &split.valid_neg,
                &split.test_neg,
            ];
            let edges = lists.iter().filter_map(|l| max_id(l)).max();
            let rows = feature_text.as_deref().map(|t| {
                t.lines()
                    .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
                    .count()
            });
            edges.map_or(0, |m| m + 1).max(rows.unwrap_or(0))
        }
    };
    let mut graph = Graph::from_edges(num_nodes, split.train_pos.iter().copied())?;
    if let Some(text) = feature_text {
        graph = graph.with_features(parse_features(&text, num_nodes)?)?;
    }
    // the graph deduplicates; train on its canonical edge list
    split.train_pos = graph.edges().collect();
    split.validate(num_nodes)?;
    Ok(Inputs { graph, split })
}

/// Fills in sampled negatives for `role` when none were provided. The stream
/// depends only on the seed, so training and evaluation see the same pairs.
fn resolve_negatives(split: &mut EdgeSplit, role: SplitRole, cfg: &RunConfig, num_nodes: usize) -> Result<()> {
    if split.positives(role).is_empty() || !split.negatives(role).is_empty() {
        return Ok(());
    }
    let stage = match role {
        SplitRole::Valid => Stage::Valid,
        SplitRole::Test => Stage::Test,
    };
    let mut rng = stage_rng(cfg.train.seed, stage);
    let sampled = sample_negatives_excluding(num_nodes, &split.all_positives(), cfg.neg_budget, &mut rng)?;
    match role {
        SplitRole::Valid => split.valid_neg = sampled,
        SplitRole::Test => split.test_neg = sampled,
    }
    Ok(())
}

fn load_store(cfg: &RunConfig) -> Result<EdgeFeatureStore> {
    EdgeFeatureStore::from_text(&read(need(&cfg.paths.edge_features, "edge_features")?)?)
}

pub fn cmd_featurize(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let start = Instant::now();
    let inputs = load_inputs(cfg)?;
    let g = &inputs.graph;
    let n = g.num_nodes();
    let k = cfg.model.edge_dim;
    let area = cfg.relay_area_size.unwrap_or_else(|| default_relay_area_size(n));
    let cap = cfg.cap.unwrap_or(n);
    let mut rng = stage_rng(cfg.train.seed, Stage::Featurize);
    let store = build_edge_features(g, &inputs.split.train_pos, k, area, cap, &mut rng)?;
    let path = need(&cfg.paths.edge_features, "edge_features")?;
    write(path, &store.to_text(&cfg.artifact_header()))?;
    writeln!(
        out,
        "featurize k={k} relay_area_size={area} cap={cap} entries={} elapsed={:.3}s",
        store.len(),
        start.elapsed().as_secs_f64()
    )
    .map_err(report_io)
}

pub fn cmd_cluster(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    if cfg.paths.features.is_none() {
        return Err(PsgError::MissingFeatures(
            "clustering needs a content feature file; without one only gamma = 1 training is possible".into(),
        ));
    }
    let inputs = load_inputs(cfg)?;
    let x = inputs.graph.node_features().expect("features were loaded");
    let mut rng = stage_rng(cfg.train.seed, Stage::Cluster);
    let a = kmeans(x, cfg.model.num_classes, cfg.kmeans_max_iters, cfg.kmeans_tol, &mut rng)?;
    let path = need(&cfg.paths.labels, "labels")?;
    write(path, &labels_to_text(&a.labels, &cfg.artifact_header()))?;
    writeln!(
        out,
        "cluster clusters={} inertia={} iterations={}",
        cfg.model.num_classes, a.inertia, a.iterations
    )
    .map_err(report_io)
}

fn load_labels(cfg: &RunConfig, g: &Graph) -> Result<Option<Vec<usize>>> {
    if cfg.train.gamma >= 1.0 {
        return Ok(None);
    }
    let Some(path) = cfg.paths.labels.as_deref() else {
        return Err(if cfg.paths.features.is_none() {
            PsgError::MissingFeatures(format!(
                "gamma = {} needs content labels, and there are no content features to cluster",
                cfg.train.gamma
            ))
        } else {
            PsgError::Config("gamma < 1 needs a label file; run the cluster command first".into())
        });
    };
    let labels = labels_from_text(&read(path)?, g.num_nodes())?;
    Ok(Some(labels))
}

/// Format of a log cell; epochs without validation print `nan`.
fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_string(), |v| v.to_string())
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let Inputs { graph: g, mut split } = load_inputs(cfg)?;
    let store = load_store(cfg)?;
    let labels = load_labels(cfg, &g)?;
    resolve_negatives(&mut split, SplitRole::Valid, cfg, g.num_nodes())?;

    let mut params = ModelParams::init(&g, &cfg.model, &mut stage_rng(cfg.train.seed, Stage::Init))?;
    params.check_compatible(&g, &store)?;
    let mut state = TrainState::new(&params, cfg.train.seed);
    state.rng = stage_rng(cfg.train.seed, Stage::Train);

    let header = cfg.artifact_header();
    let mut log = commented(&header);
    log.push_str("# epoch\tL_h\tL_c\ttotal\tval_hits\n");
    let log_path = cfg.paths.log.as_deref();
    let k = cfg.eval_k[0];
    let has_valid = !split.valid_pos.is_empty();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    // validation negatives are fixed up front, so evaluation draws nothing
    let mut unused = ChaCha8Rng::seed_from_u64(0);

    for epoch in 1..=cfg.train.epochs {
        let report = match train_epoch(&g, &store, &mut params, labels.as_deref(), &split, &cfg.train, &mut state) {
            Ok(r) => r,
            Err(e) => {
                if let Some(p) = log_path {
                    write(p, &log)?;
                }
                return Err(e);
            }
        };
        let due = epoch % cfg.eval_every == 0 || epoch == cfg.train.epochs;
        let val = if has_valid && due {
            let r = evaluate_split(&g, &store, &params, &split, SplitRole::Valid, &[k], 0, &mut unused)?;
            Some(r.hits[&k])
        } else {
            None
        };
        if let Some(h) = val {
            if best.as_ref().is_none_or(|(b, _, _)| h > *b) {
                best = Some((h, epoch, params.clone()));
            }
        }
        let line = format!(
            "{epoch}\t{}\t{}\t{}\t{}",
            report.pairwise,
            report.contrastive,
            report.total,
            cell(val)
        );
        writeln!(out, "{line}").map_err(report_io)?;
        log.push_str(&line);
        log.push('\n');
    }

    let (chosen, summary) = match best {
        Some((h, epoch, p)) => (p, format!("best_epoch={epoch} val_hits@{k}={h}")),
        None => (params, format!("final_epoch={}", cfg.train.epochs)),
    };
    let ckpt = need(&cfg.paths.checkpoint, "checkpoint")?;
    write(ckpt, &chosen.to_text(&header))?;
    if let Some(p) = log_path {
        write(p, &log)?;
    }
    writeln!(out, "train {summary} parameters={}", chosen.num_parameters()).map_err(report_io)
}

/// Evaluates the configured checkpoint on `eval_split`.
pub fn evaluate_checkpoint(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let ckpt = need(&cfg.paths.checkpoint, "checkpoint")?;
    if !ckpt.exists() {
        return Err(PsgError::Checkpoint(format!("{} does not exist", ckpt.display())));
    }
    let params = ModelParams::from_text(&read(ckpt)?)?;
    let Inputs { graph: g, mut split } = load_inputs(cfg)?;
    let store = load_store(cfg)?;
    params.check_compatible(&g, &store)?;
    let role = cfg.eval_split;
    resolve_negatives(&mut split, role, cfg, g.num_nodes())?;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    evaluate_split(&g, &store, &params, &split, role, &cfg.eval_k, cfg.neg_budget, &mut unused)
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let report = evaluate_checkpoint(cfg)?;
    let mut text = format!("split={}\n", cfg.eval_split.name());
    text.push_str(&report.to_text());
    if let Some(p) = cfg.paths.report.as_deref() {
        write(p, &format!("{}{text}", commented(&cfg.artifact_header())))?;
    }
    writeln!(out, "{text}{}", report.summary_json()).map_err(report_io)
}

/// Parameters of the `synth` fixture generator.
#[derive(Debug, Clone, Args)]
pub struct SynthOptions {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Nodes per block, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    pub blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.15)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    pub p_out: f64,
    #[arg(long, default_value_t = 0.05)]
    pub valid_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub test_fraction: f64,
    /// Planted content feature dimension; 0 writes no feature file.
    #[arg(long, default_value_t = 0)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
}

/// Writes an SBM fixture: `graph.tsv` (training edges), `valid_pos.tsv`,
/// `test_pos.tsv`, `blocks.tsv` and optionally `features.tsv`.
pub fn cmd_synth(opts: &SynthOptions, seed: u64, out: &mut dyn Write) -> Result<()> {
    if opts.blocks.is_empty() || opts.blocks.contains(&0) {
        return Err(PsgError::Config("blocks must be positive sizes".into()));
    }
    for p in [opts.p_in, opts.p_out, opts.valid_fraction, opts.test_fraction] {
        if !(0.0..=1.0).contains(&p) {
            return Err(PsgError::Config(format!("probability {p} outside [0, 1]")));
        }
    }
    let mut rng = stage_rng(seed, Stage::Synth);
    let sbm = stochastic_block_model(&opts.blocks, opts.p_in, opts.p_out, &mut rng);
    let split = split_edges(&sbm.edges, opts.valid_fraction, opts.test_fraction, &mut rng);
    let head = format!("# psg synth seed={seed}\n");
    let dir = &opts.out;
    write(&dir.join("graph.tsv"), &(head.clone() + &write_edge_list(&split.train_pos)))?;
    write(&dir.join("valid_pos.tsv"), &(head.clone() + &write_edge_list(&split.valid_pos)))?;
    write(&dir.join("test_pos.tsv"), &(head.clone() + &write_edge_list(&split.test_pos)))?;
    let blocks: String = sbm.blocks.iter().enumerate().map(|(v, b)| format!("{v}\t{b}\n")).collect();
    write(&dir.join("blocks.tsv"), &(head.clone() + &blocks))?;
    if opts.feature_dim > 0 {
        let x = planted_features::<f64>(&sbm.blocks, opts.feature_dim, opts.noise, &mut rng);
        write(&dir.join("features.tsv"), &(head + &features_to_text(&x)))?;
    }
    writeln!(
        out,
        "synth nodes={} edges={} train={} valid={} test={}",
        sbm.num_nodes,
        sbm.edges.len(),
        split.train_pos.len(),
        split.valid_pos.len(),
        split.test_pos.len()
    )
    .map_err(report_io)
}

#[derive(Debug, Parser)]
#[command(name = "psg", version, about = "Path-aware siamese GNN link prediction")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 makes every artifact bit-reproducible.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Trailing `--key value` or `--key=value` config overrides.
#[derive(Debug, Clone, Args)]
pub struct Overrides {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub pairs: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute relay-path edge features for the training graph.
    Featurize(Overrides),
    /// K-means content labels from the node feature file.
    Cluster(Overrides),
    /// Train and keep the best-validation checkpoint.
    Train(Overrides),
    /// Hits@K of a checkpoint on the configured split.
    Eval(Overrides),
    /// Write a stochastic block model fixture.
    Synth(SynthOptions),
}

/// Parses `--key value` / `--key=value` tokens into pairs.
pub fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let key = tok
            .strip_prefix("--")
            .ok_or_else(|| PsgError::Config(format!("expected --key, got {tok:?}")))?;
        match key.split_once('=') {
            Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| PsgError::Config(format!("--{key} needs a value")))?;
                pairs.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(pairs)
}

impl Cli {
    /// Config file, then overrides, then the global flags.
    pub fn run_config(&self, overrides: &Overrides) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for (k, v) in parse_overrides(&overrides.pairs)? {
            cfg.set(&k, &v, None)?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }

    /// Worker count for the thread pool, before running.
    pub fn workers(&self) -> Result<usize> {
        match &self.command {
            Command::Synth(_) => Ok(self.workers.unwrap_or(1)),
            Command::Featurize(o) | Command::Cluster(o) | Command::Train(o) | Command::Eval(o) => {
                Ok(self.run_config(o)?.workers)
            }
        }
    }

    pub fn execute(&self, out: &mut dyn Write) -> Result<()> {
        match &self.command {
            Command::Featurize(o) => cmd_featurize(&self.run_config(o)?, out),
            Command::Cluster(o) => cmd_cluster(&self.run_config(o)?, out),
            Command::Train(o) => cmd_train(&self.run_config(o)?, out),
            Command::Eval(o) => cmd_eval(&self.run_config(o)?, out),
            Command::Synth(opts) => cmd_synth(opts, self.seed.unwrap_or(0), out),
        }
    }
}

/// One-line failure message, `error class=<Class> message="…"`.
pub fn error_line(e: &PsgError) -> String {
    let msg = e.to_string().replace(['\n', '"'], " ");
    format!("error class={} message=\"{msg}\"", e.class())
}
