//! Command-line pipeline: config file in, run directory of artifacts out.
//!
//! Every subcommand reads one TOML run config and operates on a run
//! directory named after it. Stages are separate commands (`synth`,
//! `ingest`, `embed-text`, `build-graph`, `embed-graph`, `train`, `eval`)
//! so intermediate artifacts can be inspected or recomputed; `pipeline`
//! chains them all. Each stage validates that the artifacts it consumes
//! exist and names the missing file otherwise.
//!
//! Exit codes: 0 success, 1 config/validation problem (including missing
//! upstream artifacts), 2 runtime failure.
//!
//! The run directory is self-describing: `config.snapshot` holds the exact
//! config consumed and `manifest` records its hash, the seed, and where
//! the corpus lives, so re-running `eval` against an existing directory
//! reproduces `eval.csv` byte for byte.

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::corpus::{load_corpus, read_manifest, Corpus, DatasetId, EntityKind, LoadOptions};
use crate::eval::{evaluate_with, make_split, write_report, EvalReport};
use crate::fusion::FusionMode;
use crate::graphembed::{
    generate_walks, load_embeddings, save_embeddings, split_embeddings, train_skipgram,
    WalkConfig,
};
use crate::hetgraph::{build_graph, load_graph, save_graph, GraphConfig};
use crate::numerics::{AdamConfig, Tensor};
use crate::scorer::{predict, StructureSpec};
use crate::seeds;
use crate::synth::{self, SynthConfig, SynthDataset};
use crate::textembed::{load_vectors, save_vectors, train_pvdbow, PvDbowConfig};
use crate::train::{train_loop, write_trace, Model, Objective, RegTarget, TrainConfig};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

// ============================================================
// Errors and exit codes
// ============================================================

#[derive(Debug)]
pub enum CliError {
    /// Bad config, bad topology, or a missing upstream artifact: exit 1.
    Config(String),
    /// A stage precondition names the file it wanted and the stage that
    /// produces it: exit 1.
    MissingArtifact { stage: &'static str, path: PathBuf, producer: &'static str },
    /// Failure while doing the work: exit 2.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::MissingArtifact { stage, path, producer } => write!(
                f,
                "stage {stage}: missing artifact {}; run `{producer}` first",
                path.display()
            ),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::MissingArtifact { .. } => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(err: impl fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// ============================================================
// Run configuration
// ============================================================

/// How the datasets are allowed to relate. Validation only — the engine
/// handles any overlap topology the corpus declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Scenario {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "dtcdr")]
    Dtcdr,
    #[serde(rename = "mtcdr")]
    Mtcdr,
    #[serde(rename = "cdr+csr")]
    CdrCsr,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::Single => "single",
            Scenario::Dtcdr => "dtcdr",
            Scenario::Mtcdr => "mtcdr",
            Scenario::CdrCsr => "cdr+csr",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run directory name under the output root.
    pub name: String,
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    /// Embedding dimension used by both embedding stages and the model.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Drop users with fewer interactions when loading. Defaults to 5 for
    /// external corpora and 2 for generated ones.
    pub min_interactions_per_user: Option<usize>,
    pub corpus: Option<CorpusSection>,
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub text: TextSection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub walks: WalksSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub train: TrainSection,
}

fn default_k() -> usize {
    128
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Corpus manifest path, relative to this config file.
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub datasets: Vec<SynthDatasetSection>,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default)]
    pub user_overlap: Vec<OverlapSection>,
    #[serde(default)]
    pub item_overlap: Vec<OverlapSection>,
    #[serde(default = "default_rating_levels")]
    pub rating_levels: u32,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_tokens_per_doc")]
    pub tokens_per_doc: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDatasetSection {
    pub name: String,
    pub users: usize,
    pub items: usize,
    pub density: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapSection {
    pub a: usize,
    pub b: usize,
    pub fraction: f64,
}

fn default_latent_dim() -> usize {
    8
}
fn default_clusters() -> usize {
    4
}
fn default_rating_levels() -> u32 {
    5
}
fn default_noise_sigma() -> f64 {
    0.05
}
fn default_vocab_size() -> usize {
    200
}
fn default_tokens_per_doc() -> usize {
    12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextSection {
    /// Content embedding dimension; defaults to the global k.
    pub k_text: Option<usize>,
    pub epochs: usize,
    pub negatives: usize,
    pub lr: f64,
}

impl Default for TextSection {
    fn default() -> Self {
        let d = PvDbowConfig::default();
        TextSection { k_text: None, epochs: d.epochs, negatives: d.negatives, lr: d.lr }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub alpha: f64,
    pub candidate_cap: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        let d = GraphConfig::default();
        GraphSection { alpha: d.alpha, candidate_cap: d.candidate_cap }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalksSection {
    pub p: f64,
    pub q: f64,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for WalksSection {
    fn default() -> Self {
        let d = WalkConfig::default();
        WalksSection {
            p: d.p,
            q: d.q,
            walks_per_node: d.walks_per_node,
            walk_length: d.walk_length,
            window: d.window,
            negatives: d.negatives,
            epochs: d.epochs,
            lr: d.lr,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub mode: String,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection { mode: "attention".into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub objective: String,
    pub structure: String,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub reg_lambda: f64,
    pub theta: f64,
    pub finetune_base: bool,
    pub reg_target: String,
    pub penalty_sample: usize,
    pub init_sigma: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            objective: d.objective.to_string(),
            structure: StructureSpec::default().to_string(),
            negatives_per_positive: d.negatives_per_positive,
            batch_size: d.batch_size,
            epochs: d.epochs,
            lr: d.adam.lr,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            eps: d.adam.eps,
            reg_lambda: d.reg_lambda,
            theta: d.theta,
            finetune_base: d.finetune_base,
            reg_target: d.reg_target.to_string(),
            penalty_sample: d.penalty_sample,
            init_sigma: d.init_sigma,
        }
    }
}

// ============================================================
// Resolved plan and run directory layout
// ============================================================

/// A parsed, validated config bound to its run directory.
#[derive(Debug)]
pub struct Plan {
    pub config: RunConfig,
    /// Raw bytes of the config file, snapshotted into the run directory.
    pub raw: String,
    pub config_dir: PathBuf,
    pub run_dir: PathBuf,
    pub seed: u64,
    pub structure: StructureSpec,
    pub fusion_mode: FusionMode,
    pub objective: Objective,
    pub reg_target: RegTarget,
}

impl Plan {
    pub fn snapshot_path(&self) -> PathBuf {
        self.run_dir.join("config.snapshot")
    }
    pub fn manifest_path(&self) -> PathBuf {
        self.run_dir.join("manifest")
    }
    pub fn embeddings_dir(&self) -> PathBuf {
        self.run_dir.join("embeddings")
    }
    pub fn graphs_dir(&self) -> PathBuf {
        self.run_dir.join("graphs")
    }
    pub fn text_vectors_path(&self, dataset: &str) -> PathBuf {
        self.embeddings_dir().join(format!("text.{dataset}.tsv"))
    }
    pub fn graph_path(&self, dataset: &str) -> PathBuf {
        self.graphs_dir().join(format!("{dataset}.graph"))
    }
    pub fn graph_vectors_path(&self, dataset: &str) -> PathBuf {
        self.embeddings_dir().join(format!("graph.{dataset}.tsv"))
    }
    pub fn checkpoint_path(&self) -> PathBuf {
        self.run_dir.join("model.ckpt")
    }
    pub fn trace_path(&self) -> PathBuf {
        self.run_dir.join("trace.csv")
    }
    pub fn eval_path(&self) -> PathBuf {
        self.run_dir.join("eval.csv")
    }
    pub fn synth_dir(&self) -> PathBuf {
        self.run_dir.join("synth")
    }

    /// Where the corpus manifest lives: generated under the run directory,
    /// or wherever the config points.
    pub fn corpus_manifest(&self) -> PathBuf {
        match (&self.config.synth, &self.config.corpus) {
            (Some(_), _) => self.synth_dir().join("manifest.txt"),
            (None, Some(c)) => self.config_dir.join(&c.manifest),
            (None, None) => unreachable!("validated: one corpus source"),
        }
    }

    fn min_interactions(&self) -> usize {
        self.config
            .min_interactions_per_user
            .unwrap_or(if self.config.synth.is_some() { 2 } else { 5 })
    }

    fn train_config(&self) -> TrainConfig {
        let t = &self.config.train;
        TrainConfig {
            objective: self.objective,
            negatives_per_positive: t.negatives_per_positive,
            batch_size: t.batch_size,
            epochs: t.epochs,
            adam: AdamConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps },
            reg_lambda: t.reg_lambda,
            theta: t.theta,
            finetune_base: t.finetune_base,
            reg_target: self.reg_target,
            penalty_sample: t.penalty_sample,
            init_sigma: t.init_sigma,
            seed: seeds::mix(self.seed, "train", &[]),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse and validate a config file; bind it to `<out>/<name>`.
pub fn load_plan(config_path: &Path, out: &Path, seed_override: Option<u64>) -> Result<Plan, CliError> {
    let raw = fs::read_to_string(config_path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", config_path.display())))?;
    let config: RunConfig =
        toml::from_str(&raw).map_err(|e| config_err(format!("{}: {e}", config_path.display())))?;

    if config.name.is_empty() || config.name.contains(['/', '\\']) {
        return Err(config_err("run name must be a plain directory name"));
    }
    if config.k == 0 {
        return Err(config_err("k must be positive"));
    }
    match (&config.synth, &config.corpus) {
        (None, None) => {
            return Err(config_err("config needs a [synth] or a [corpus] section"))
        }
        (Some(_), Some(_)) => {
            return Err(config_err("[synth] and [corpus] are mutually exclusive"))
        }
        _ => {}
    }
    if let Some(synth) = &config.synth {
        for o in synth.user_overlap.iter().chain(&synth.item_overlap) {
            if o.a >= synth.datasets.len() || o.b >= synth.datasets.len() {
                return Err(config_err(format!(
                    "overlap ({}, {}) references an undeclared dataset",
                    o.a, o.b
                )));
            }
        }
        for d in &synth.datasets {
            if d.name.is_empty() || d.name.contains(['/', '\\']) {
                return Err(config_err(format!("dataset name {:?} not usable in paths", d.name)));
            }
        }
    }
    let structure = StructureSpec::from_str(&config.train.structure)
        .map_err(|e| config_err(format!("train.structure: {e}")))?;
    let fusion_mode = FusionMode::from_str(&config.fusion.mode)
        .map_err(|e| config_err(format!("fusion.mode: {e}")))?;
    let objective = Objective::from_str(&config.train.objective)
        .map_err(|e| config_err(format!("train.objective: {e}")))?;
    let reg_target = RegTarget::from_str(&config.train.reg_target)
        .map_err(|e| config_err(format!("train.reg_target: {e}")))?;

    let seed = seed_override.unwrap_or(config.seed);
    let run_dir = out.join(&config.name);
    let config_dir = config_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    Ok(Plan { config, raw, config_dir, run_dir, seed, structure, fusion_mode, objective, reg_target })
}

/// Create the run directory skeleton and write `config.snapshot` and
/// `manifest`. Idempotent for a fixed config and seed.
pub fn ensure_run_dir(plan: &Plan) -> Result<(), CliError> {
    for dir in [&plan.run_dir, &plan.embeddings_dir(), &plan.graphs_dir()] {
        fs::create_dir_all(dir)
            .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(plan.snapshot_path(), &plan.raw)
        .map_err(|e| runtime(format!("cannot write config snapshot: {e}")))?;
    // generated corpora are recorded relative to the run directory so an
    // identical config yields an identical manifest anywhere on disk
    let corpus_note = match plan.corpus_manifest().strip_prefix(&plan.run_dir) {
        Ok(rel) => rel.display().to_string(),
        Err(_) => plan.corpus_manifest().display().to_string(),
    };
    let manifest = format!(
        "run {}\nscenario {}\nseed {}\nk {}\nconfig_sha256 {}\ncorpus {}\n",
        plan.config.name,
        plan.config.scenario,
        plan.seed,
        plan.config.k,
        sha256_hex(plan.raw.as_bytes()),
        corpus_note,
    );
    fs::write(plan.manifest_path(), manifest)
        .map_err(|e| runtime(format!("cannot write run manifest: {e}")))?;
    Ok(())
}

// ============================================================
// Corpus access and scenario validation
// ============================================================

fn load_full_corpus(plan: &Plan, stage: &'static str) -> Result<Corpus, CliError> {
    let manifest = plan.corpus_manifest();
    if !manifest.exists() {
        let producer = if plan.config.synth.is_some() { "synth" } else { "ingest" };
        return Err(CliError::MissingArtifact { stage, path: manifest, producer });
    }
    let (files, alignment) = read_manifest(&manifest).map_err(|e| config_err(e.to_string()))?;
    for f in &files {
        if f.name.contains(['/', '\\']) {
            return Err(config_err(format!("dataset name {:?} not usable in paths", f.name)));
        }
    }
    let corpus = load_corpus(
        &files,
        alignment.as_deref(),
        &LoadOptions { min_interactions_per_user: plan.min_interactions() },
    )
    .map_err(|e| config_err(e.to_string()))?;
    validate_scenario(plan.config.scenario, &corpus)?;
    Ok(corpus)
}

/// The corpus with every evaluation holdout interaction removed — what the
/// graph and the model are allowed to see.
fn train_view(corpus: &Corpus, seed: u64) -> Corpus {
    let mut drop: HashSet<(usize, u64)> = HashSet::new();
    for d in 0..corpus.n_datasets() {
        let split = make_split(corpus, DatasetId(d), seeds::mix(seed, "eval", &[]));
        drop.extend(split.holdout_keys());
    }
    corpus.without_interactions(&drop)
}

/// Check the declared scenario against what the alignment actually holds.
pub fn validate_scenario(scenario: Scenario, corpus: &Corpus) -> Result<(), CliError> {
    let n = corpus.n_datasets();
    let mut user_pairs = Vec::new();
    let mut item_pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (DatasetId(i), DatasetId(j));
            if !corpus.common_entities(a, b, EntityKind::User).0.is_empty() {
                user_pairs.push((i, j));
            }
            if !corpus.common_entities(a, b, EntityKind::Item).0.is_empty() {
                item_pairs.push((i, j));
            }
        }
    }
    match scenario {
        Scenario::Single => {
            if n != 1 {
                return Err(config_err(format!("scenario single expects 1 dataset, found {n}")));
            }
        }
        Scenario::Dtcdr => {
            if n != 2 {
                return Err(config_err(format!("scenario dtcdr expects 2 datasets, found {n}")));
            }
            if user_pairs.is_empty() {
                return Err(config_err("scenario dtcdr expects common users between the 2 datasets"));
            }
        }
        Scenario::Mtcdr => {
            if n < 3 {
                return Err(config_err(format!("scenario mtcdr expects 3+ datasets, found {n}")));
            }
            for d in 0..n {
                let bridged = user_pairs.iter().any(|&(i, j)| i == d || j == d);
                if !bridged {
                    return Err(config_err(format!(
                        "scenario mtcdr: dataset {d} shares users with no other dataset"
                    )));
                }
            }
        }
        Scenario::CdrCsr => {
            if n < 2 {
                return Err(config_err(format!("scenario cdr+csr expects 2+ datasets, found {n}")));
            }
            if user_pairs.is_empty() || item_pairs.is_empty() {
                return Err(config_err(
                    "scenario cdr+csr expects at least one common-user pair and one common-item pair",
                ));
            }
        }
    }
    Ok(())
}

// ============================================================
// Stages
// ============================================================

fn require_artifact(
    stage: &'static str,
    path: PathBuf,
    producer: &'static str,
) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { stage, path, producer })
    }
}

pub fn cmd_synth(plan: &Plan) -> Result<(), CliError> {
    let section = plan
        .config
        .synth
        .as_ref()
        .ok_or_else(|| config_err("synth: config has no [synth] section"))?;
    ensure_run_dir(plan)?;
    let synth_config = SynthConfig {
        datasets: section
            .datasets
            .iter()
            .map(|d| SynthDataset {
                name: d.name.clone(),
                users: d.users,
                items: d.items,
                density: d.density,
            })
            .collect(),
        latent_dim: section.latent_dim,
        clusters: section.clusters,
        user_overlap: section.user_overlap.iter().map(|o| (o.a, o.b, o.fraction)).collect(),
        item_overlap: section.item_overlap.iter().map(|o| (o.a, o.b, o.fraction)).collect(),
        rating_levels: section.rating_levels,
        noise_sigma: section.noise_sigma,
        vocab_size: section.vocab_size,
        tokens_per_doc: section.tokens_per_doc,
        seed: seeds::mix(plan.seed, "synth", &[]),
    };
    let generated = synth::generate(&synth_config, &plan.synth_dir()).map_err(|e| match e {
        synth::SynthError::Io { .. } => runtime(e),
        _ => config_err(e.to_string()),
    })?;
    print!("{}", synth::describe(&generated));
    Ok(())
}

pub fn cmd_ingest(plan: &Plan) -> Result<(), CliError> {
    ensure_run_dir(plan)?;
    let corpus = load_full_corpus(plan, "ingest")?;
    println!("dataset\tusers\titems\tinteractions\tdensity");
    for d in 0..corpus.n_datasets() {
        let stats = corpus.interaction_matrix_stats(DatasetId(d));
        println!(
            "{}\t{}\t{}\t{}\t{:.6}",
            corpus.dataset(DatasetId(d)).name,
            stats.m,
            stats.n,
            stats.interaction_count,
            stats.density
        );
    }
    for i in 0..corpus.n_datasets() {
        for j in i + 1..corpus.n_datasets() {
            let (a, b) = (DatasetId(i), DatasetId(j));
            let users = corpus.common_entities(a, b, EntityKind::User).0.len();
            let items = corpus.common_entities(a, b, EntityKind::Item).0.len();
            if users + items > 0 {
                println!("common {i}<->{j}\tusers {users}\titems {items}");
            }
        }
    }
    Ok(())
}

pub fn cmd_embed_text(plan: &Plan) -> Result<(), CliError> {
    ensure_run_dir(plan)?;
    let corpus = load_full_corpus(plan, "embed-text")?;
    for d in 0..corpus.n_datasets() {
        let id = DatasetId(d);
        let config = PvDbowConfig {
            k_text: plan.config.text.k_text.unwrap_or(plan.config.k),
            epochs: plan.config.text.epochs,
            negatives: plan.config.text.negatives,
            lr: plan.config.text.lr,
            seed: seeds::mix(plan.seed, "text", &[d as u64]),
        };
        let emb = train_pvdbow(&corpus, id, &config).map_err(runtime)?;
        let path = plan.text_vectors_path(&corpus.dataset(id).name);
        save_vectors(&path, &corpus, id, &emb).map_err(runtime)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_build_graph(plan: &Plan) -> Result<(), CliError> {
    ensure_run_dir(plan)?;
    let corpus = load_full_corpus(plan, "build-graph")?;
    let view = train_view(&corpus, plan.seed);
    for d in 0..view.n_datasets() {
        let id = DatasetId(d);
        let name = view.dataset(id).name.clone();
        let vec_path = require_artifact("build-graph", plan.text_vectors_path(&name), "embed-text")?;
        let content = load_vectors(&vec_path, &view, id).map_err(runtime)?;
        let config = GraphConfig {
            alpha: plan.config.graph.alpha,
            candidate_cap: plan.config.graph.candidate_cap,
            seed: seeds::mix(plan.seed, "graph", &[d as u64]),
        };
        let graph = build_graph(&view, id, &content, &config).map_err(runtime)?;
        let path = plan.graph_path(&name);
        save_graph(&path, &graph).map_err(runtime)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_embed_graph(plan: &Plan) -> Result<(), CliError> {
    ensure_run_dir(plan)?;
    let corpus = load_full_corpus(plan, "embed-graph")?;
    let view = train_view(&corpus, plan.seed);
    for d in 0..view.n_datasets() {
        let id = DatasetId(d);
        let name = view.dataset(id).name.clone();
        let graph_path = require_artifact("embed-graph", plan.graph_path(&name), "build-graph")?;
        let graph = load_graph(&graph_path).map_err(runtime)?;
        let w = &plan.config.walks;
        let config = WalkConfig {
            p: w.p,
            q: w.q,
            walks_per_node: w.walks_per_node,
            walk_length: w.walk_length,
            window: w.window,
            negatives: w.negatives,
            epochs: w.epochs,
            lr: w.lr,
            k: plan.config.k,
            seed: seeds::mix(plan.seed, "walks", &[d as u64]),
        };
        let walks = generate_walks(&graph, &config);
        let matrix = train_skipgram(&walks, graph.node_count(), &config).map_err(runtime)?;
        let (u, v) = split_embeddings(&matrix, graph.m(), graph.n()).map_err(runtime)?;
        let path = plan.graph_vectors_path(&name);
        save_embeddings(&path, &view, id, &u, &v).map_err(runtime)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn load_base_embeddings(
    plan: &Plan,
    view: &Corpus,
    stage: &'static str,
) -> Result<(Vec<Tensor>, Vec<Tensor>), CliError> {
    let mut base_u = Vec::new();
    let mut base_v = Vec::new();
    for d in 0..view.n_datasets() {
        let id = DatasetId(d);
        let name = &view.dataset(id).name;
        let path = require_artifact(stage, plan.graph_vectors_path(name), "embed-graph")?;
        let (u, v) = load_embeddings(&path, view, id).map_err(runtime)?;
        if u.cols() != plan.config.k {
            return Err(config_err(format!(
                "{}: embedding dimension {} does not match configured k {}",
                path.display(),
                u.cols(),
                plan.config.k
            )));
        }
        base_u.push(u);
        base_v.push(v);
    }
    Ok((base_u, base_v))
}

fn checkpoint_meta(plan: &Plan, view: &Corpus) -> CheckpointMeta {
    CheckpointMeta {
        k: plan.config.k,
        structure: plan.structure.to_string(),
        fusion_mode: plan.fusion_mode.to_string(),
        datasets: (0..view.n_datasets())
            .map(|d| {
                let desc = view.dataset(DatasetId(d));
                (desc.name.clone(), desc.m, desc.n)
            })
            .collect(),
    }
}

pub fn cmd_train(plan: &Plan) -> Result<(), CliError> {
    ensure_run_dir(plan)?;
    let corpus = load_full_corpus(plan, "train")?;
    let view = train_view(&corpus, plan.seed);
    let (base_u, base_v) = load_base_embeddings(plan, &view, "train")?;
    let config = plan.train_config();
    let mut model = Model::init(
        &view,
        base_u,
        base_v,
        plan.config.k,
        &plan.structure,
        plan.fusion_mode,
        &config,
    );
    let trace = train_loop(&mut model, &view, &config).map_err(runtime)?;
    write_trace(&plan.trace_path(), &trace, &model.pairs).map_err(runtime)?;
    save_checkpoint(&plan.checkpoint_path(), &checkpoint_meta(plan, &view), &model.store)
        .map_err(runtime)?;
    for row in trace.iter().rev().take(view.n_datasets()) {
        println!(
            "epoch {} dataset {} objective {:.6} mean_nce {:.6}",
            row.epoch, row.dataset, row.objective, row.mean_nce
        );
    }
    Ok(())
}

pub fn cmd_eval(plan: &Plan) -> Result<(), CliError> {
    ensure_run_dir(plan)?;
    let corpus = load_full_corpus(plan, "eval")?;
    let view = train_view(&corpus, plan.seed);
    let (base_u, base_v) = load_base_embeddings(plan, &view, "eval")?;
    let ckpt_path = require_artifact("eval", plan.checkpoint_path(), "train")?;
    let (meta, store) = load_checkpoint(&ckpt_path).map_err(runtime)?;
    let expected = checkpoint_meta(plan, &view);
    if meta.k != expected.k
        || meta.structure != expected.structure
        || meta.fusion_mode != expected.fusion_mode
        || meta.datasets != expected.datasets
    {
        return Err(config_err(format!(
            "checkpoint {} was produced for a different config or corpus \
             (k {} vs {}, structure {} vs {}, fusion {} vs {})",
            ckpt_path.display(),
            meta.k,
            expected.k,
            meta.structure,
            expected.structure,
            meta.fusion_mode,
            expected.fusion_mode,
        )));
    }

    let config = plan.train_config();
    let mut model = Model::init(
        &view,
        base_u,
        base_v,
        plan.config.k,
        &plan.structure,
        plan.fusion_mode,
        &config,
    );
    for name in model.store.names() {
        if !store.contains(&name) {
            return Err(config_err(format!(
                "checkpoint {} lacks parameter {name}",
                ckpt_path.display()
            )));
        }
    }
    model.store = store;
    // a finetuned run carries its base matrices in the checkpoint
    for d in 0..model.n_datasets() {
        for (kind, side) in
            [(EntityKind::User, &mut model.base_u), (EntityKind::Item, &mut model.base_v)]
        {
            if let Ok(tensor) = model.store.get(&crate::train::base_param_name(kind, d)) {
                side[d] = tensor.clone();
            }
        }
    }

    let outputs = crate::train::model_outputs(&model, &view).map_err(runtime)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for d in 0..view.n_datasets() {
        let split = make_split(&corpus, DatasetId(d), seeds::mix(plan.seed, "eval", &[]));
        let (p, q) = &outputs[d];
        let report = evaluate_with(&split, |u, i| predict(p.row(u), q.row(i)));
        reports.push(report);
    }
    write_report(&plan.eval_path(), &reports).map_err(runtime)?;
    println!("dataset\tHR@10\tNDCG@10\tcases");
    for (d, r) in reports.iter().enumerate() {
        println!(
            "{}\t{:.4}\t{:.4}\t{}",
            view.dataset(DatasetId(d)).name,
            r.hr[9],
            r.ndcg[9],
            r.ranks.len()
        );
    }
    Ok(())
}

pub fn cmd_pipeline(plan: &Plan) -> Result<(), CliError> {
    if plan.config.synth.is_some() {
        cmd_synth(plan)?;
    }
    cmd_ingest(plan)?;
    cmd_embed_text(plan)?;
    cmd_build_graph(plan)?;
    cmd_embed_graph(plan)?;
    cmd_train(plan)?;
    cmd_eval(plan)?;
    Ok(())
}

// ============================================================
// Argument parsing and entry point
// ============================================================

#[derive(Parser)]
#[command(
    name = "bridgerec",
    version,
    about = "Multi-dataset recommender pipeline: embeddings, fusion, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Root directory holding run directories
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Override the config's master seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into the run directory
    Synth(StageArgs),
    /// Load, validate, and summarize the corpus
    Ingest(StageArgs),
    /// Train content embeddings from entity documents
    EmbedText(StageArgs),
    /// Build per-dataset heterogeneous graphs
    BuildGraph(StageArgs),
    /// Embed graph nodes via biased random walks
    EmbedGraph(StageArgs),
    /// Train the fusion and scoring model
    Train(StageArgs),
    /// Rank held-out interactions and write metrics
    Eval(StageArgs),
    /// Run every stage in order
    Pipeline(StageArgs),
}

fn dispatch(command: &Command) -> Result<(), CliError> {
    let (args, stage): (&StageArgs, fn(&Plan) -> Result<(), CliError>) = match command {
        Command::Synth(a) => (a, cmd_synth),
        Command::Ingest(a) => (a, cmd_ingest),
        Command::EmbedText(a) => (a, cmd_embed_text),
        Command::BuildGraph(a) => (a, cmd_build_graph),
        Command::EmbedGraph(a) => (a, cmd_embed_graph),
        Command::Train(a) => (a, cmd_train),
        Command::Eval(a) => (a, cmd_eval),
        Command::Pipeline(a) => (a, cmd_pipeline),
    };
    let plan = load_plan(&args.config, &args.out, args.seed)?;
    stage(&plan)
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

// ============================================================
// Tests
// ============================================================
