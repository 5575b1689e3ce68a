//! Training objectives and the multi-dataset optimization loop.
//!
//! Targets follow the interaction-matrix rule: observed pairs carry their
//! rating, sampled unobserved pairs carry zero, and both are normalized by
//! the dataset's declared rating ceiling before entering a soft-label
//! cross-entropy against the cosine prediction.
//!
//! Two objectives share that core. The preliminary objective adds a
//! Frobenius regularizer on the batch's deduplicated output embeddings.
//! The personalized objective instead adds an attention-inducing penalty:
//! for every dataset pair sharing entities, the squared distance d between
//! the pairs' tower outputs on their aligned entities is pushed through
//! A(d) = 1 − exp(−d/θ) and mixed by trainable pair weights λ (a softmax,
//! so Σλ = 1 always holds).
//!
//! Datasets train "in parallel" as interleaved round-robin steps: each
//! global step evaluates one minibatch per dataset on a single tape, adds
//! the penalty once, and applies one optimizer update, so shared parameters
//! (fusion logits, λ, fused entities) accumulate every dataset's gradient
//! before moving.

use crate::corpus::{Corpus, DatasetId, EntityKind};
use crate::fusion::{
    assemble_inputs, fuse_items, fuse_users, phi_name, sharing_groups, AttentionParams,
    FusionError, FusionMode, SharingGroup,
};
use crate::numerics::{
    AdamConfig, NodeId, NumericsError, ParamStore, Tape, Tensor,
};
use crate::scorer::{
    forward_items, forward_users, init_towers, tower_param_name, ScorerError, StructureSpec,
    TowerParams, DEFAULT_INIT_SIGMA, EPS,
};
use crate::seeds;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Store key of the pair-weight logits (one column entry per dataset pair).
pub const LAMBDA_PARAM: &str = "lambda.pairs";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("personalized objective needs at least one dataset pair with common entities")]
    NoCommonEntities,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Preliminary,
    Personalized,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Preliminary => write!(f, "preliminary"),
            Objective::Personalized => write!(f, "personalized"),
        }
    }
}

impl FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "preliminary" => Ok(Objective::Preliminary),
            "personalized" => Ok(Objective::Personalized),
            other => Err(format!("unknown objective {other:?} (preliminary|personalized)")),
        }
    }
}

/// Which embeddings the preliminary objective's Frobenius term touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegTarget {
    Outputs,
    Inputs,
}

impl fmt::Display for RegTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegTarget::Outputs => write!(f, "outputs"),
            RegTarget::Inputs => write!(f, "inputs"),
        }
    }
}

impl FromStr for RegTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "outputs" => Ok(RegTarget::Outputs),
            "inputs" => Ok(RegTarget::Inputs),
            other => Err(format!("unknown regularizer target {other:?} (outputs|inputs)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub objective: Objective,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// λ in the preliminary objective's Frobenius term.
    pub reg_lambda: f64,
    /// θ in A(d) = 1 − exp(−d/θ).
    pub theta: f64,
    /// Update the node2vec base embeddings too (frozen by default).
    pub finetune_base: bool,
    pub reg_target: RegTarget,
    /// Cap on aligned rows per (pair, kind) entering the penalty each step.
    pub penalty_sample: usize,
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Preliminary,
            negatives_per_positive: 7,
            batch_size: 1024,
            epochs: 50,
            adam: AdamConfig::default(),
            reg_lambda: 0.001,
            theta: 1.0,
            finetune_base: false,
            reg_target: RegTarget::Outputs,
            penalty_sample: 1024,
            init_sigma: DEFAULT_INIT_SIGMA,
            seed: 0,
        }
    }
}

// ============================================================
// Model state
// ============================================================

/// Store key of a base embedding matrix when it participates in training.
pub fn base_param_name(kind: EntityKind, dataset: usize) -> String {
    format!("base.{kind}.{dataset}")
}

/// Unordered dataset pairs sharing at least one user or item, ascending.
pub fn common_pairs(corpus: &Corpus) -> Vec<(usize, usize)> {
    let n = corpus.n_datasets();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let users = corpus.common_entities(DatasetId(i), DatasetId(j), EntityKind::User);
            let items = corpus.common_entities(DatasetId(i), DatasetId(j), EntityKind::Item);
            if !users.0.is_empty() || !items.0.is_empty() {
                out.push((i, j));
            }
        }
    }
    out
}

/// Everything training owns: named parameters (towers, fusion logits, pair
/// weights, optionally base embeddings), the frozen base embeddings, and
/// the alignment-derived sharing structure.
pub struct Model {
    pub k: usize,
    pub structure: StructureSpec,
    pub fusion_mode: FusionMode,
    pub groups: Vec<SharingGroup>,
    pub pairs: Vec<(usize, usize)>,
    pub store: ParamStore,
    pub base_u: Vec<Tensor>,
    pub base_v: Vec<Tensor>,
    pub finetune_base: bool,
    /// (kind, dataset, entity index) → (group index, class position).
    lookup: BTreeMap<(EntityKind, usize, usize), (usize, usize)>,
}

impl Model {
    pub fn init(
        corpus: &Corpus,
        base_u: Vec<Tensor>,
        base_v: Vec<Tensor>,
        k: usize,
        structure: &StructureSpec,
        fusion_mode: FusionMode,
        config: &TrainConfig,
    ) -> Model {
        let n = corpus.n_datasets();
        assert_eq!(base_u.len(), n, "one user matrix per dataset");
        assert_eq!(base_v.len(), n, "one item matrix per dataset");
        for d in 0..n {
            assert_eq!(base_u[d].shape(), (corpus.dataset(DatasetId(d)).m, k));
            assert_eq!(base_v[d].shape(), (corpus.dataset(DatasetId(d)).n, k));
        }
        let groups = sharing_groups(corpus);
        let pairs = common_pairs(corpus);
        let mut lookup = BTreeMap::new();
        for (gi, group) in groups.iter().enumerate() {
            for (p, &member) in group.members.iter().enumerate() {
                for (c, &row) in group.rows[p].iter().enumerate() {
                    lookup.insert((group.kind, member.0, row), (gi, c));
                }
            }
        }

        let mut store = ParamStore::new();
        init_towers(n, k, structure, config.init_sigma, config.seed).insert_into(&mut store);
        AttentionParams::init(&groups, k, fusion_mode).insert_into(&mut store);
        if config.objective == Objective::Personalized && !pairs.is_empty() {
            store.insert(LAMBDA_PARAM, Tensor::zeros(pairs.len(), 1));
        }
        if config.finetune_base {
            for d in 0..n {
                store.insert(&base_param_name(EntityKind::User, d), base_u[d].clone());
                store.insert(&base_param_name(EntityKind::Item, d), base_v[d].clone());
            }
        }

        Model {
            k,
            structure: structure.clone(),
            fusion_mode,
            groups,
            pairs,
            store,
            base_u,
            base_v,
            finetune_base: config.finetune_base,
            lookup,
        }
    }

    pub fn n_datasets(&self) -> usize {
        self.base_u.len()
    }

    pub fn towers(&self) -> TowerParams {
        TowerParams::read_from(&self.store, self.n_datasets(), self.k, &self.structure)
            .expect("store holds every tower layer")
    }

    pub fn attention(&self) -> AttentionParams {
        AttentionParams::read_from(&self.store, &self.groups, self.k, self.fusion_mode)
    }

    /// Current pair weights λ^{ij} (softmax of the trained logits); uniform
    /// before any update, empty when no pair shares entities or the model
    /// was built for the preliminary objective.
    pub fn lambda_values(&self) -> Vec<f64> {
        match self.store.get(LAMBDA_PARAM) {
            Err(_) => Vec::new(),
            Ok(logits) => softmax_slice(logits.data()),
        }
    }
}

fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Tower outputs (user matrix, item matrix) per dataset, computed through
/// the pure fusion + scorer path. This is what evaluation scores with.
pub fn model_outputs(model: &Model, corpus: &Corpus) -> Result<Vec<(Tensor, Tensor)>, TrainError> {
    let towers = model.towers();
    let attention = model.attention();
    let mut out = Vec::with_capacity(model.n_datasets());
    for d in 0..model.n_datasets() {
        let target = DatasetId(d);
        let mut fused_users_list: Vec<(&SharingGroup, Tensor)> = Vec::new();
        let mut fused_items_list: Vec<(&SharingGroup, Tensor)> = Vec::new();
        for group in &model.groups {
            if group.member_position(target).is_none() {
                continue;
            }
            match group.kind {
                EntityKind::User => fused_users_list
                    .push((group, fuse_users(group, &attention, &model.base_u, target)?)),
                EntityKind::Item => fused_items_list
                    .push((group, fuse_items(group, &attention, &model.base_v, target)?)),
            }
        }
        let (p_in, q_in) = assemble_inputs(
            corpus,
            target,
            &fused_users_list,
            &fused_items_list,
            &model.base_u[d],
            &model.base_v[d],
        )?;
        let p_out = forward_users(&towers, d, &p_in)?;
        let q_out = forward_items(&towers, d, &q_in)?;
        out.push((p_out, q_out));
    }
    Ok(out)
}

// ============================================================
// Instances and negative sampling
// ============================================================

/// One training example: observed pairs keep their rating, negatives are 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instance {
    pub user: usize,
    pub item: usize,
    pub y: f64,
}

/// Uniform negatives with rejection of observed pairs: `ratio` per
/// positive. A user who has rated the whole item set yields none (warned).
pub fn sample_negatives(
    corpus: &Corpus,
    dataset: DatasetId,
    positives: &[(usize, usize)],
    ratio: usize,
    seed: u64,
) -> Vec<Instance> {
    let n = corpus.dataset(dataset).n;
    let m = corpus.dataset(dataset).m;
    let mut observed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); m];
    for it in corpus.interactions(dataset) {
        observed[it.user.index].insert(it.item.index);
    }
    let mut rng = seeds::stream(seed, "negative-sampling", &[dataset.0 as u64]);
    let mut out = Vec::with_capacity(positives.len() * ratio);
    let mut warned: BTreeSet<usize> = BTreeSet::new();
    for &(u, _) in positives {
        if observed[u].len() >= n {
            if warned.insert(u) {
                log::warn!(
                    "user {u} of dataset {} has rated every item; sampling no negatives",
                    dataset.0
                );
            }
            continue;
        }
        for _ in 0..ratio {
            loop {
                let j = rng.random_range(0..n);
                if !observed[u].contains(&j) {
                    out.push(Instance { user: u, item: j, y: 0.0 });
                    break;
                }
            }
        }
    }
    out
}

/// Soft-label cross-entropy between the normalized rating y/max_r and the
/// clamped prediction; nonnegative, ≈0 for a confident correct answer.
pub fn nce_loss(y: f64, max_r: f64, y_hat: f64) -> f64 {
    let t = y / max_r;
    -(t * y_hat.ln() + (1.0 - t) * (1.0 - y_hat).ln())
}

// ============================================================
// Step planning
// ============================================================

/// How one entity set of a batch maps onto tape rows: plain base rows
/// first, then per sharing group the fused rows actually used.
#[derive(Debug, Clone)]
struct EntityGather {
    distinct: Vec<usize>,
    grouped: Vec<(usize, Vec<usize>)>,
    row_of: BTreeMap<usize, usize>,
}

impl EntityGather {
    fn plan(model: &Model, kind: EntityKind, dataset: usize, entities: &BTreeSet<usize>) -> Self {
        let mut distinct = Vec::new();
        let mut grouped: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for &e in entities {
            match model.lookup.get(&(kind, dataset, e)) {
                None => distinct.push(e),
                Some(&(g, c)) => grouped.entry(g).or_default().push((c, e)),
            }
        }
        let mut row_of = BTreeMap::new();
        let mut next = 0usize;
        for &e in &distinct {
            row_of.insert(e, next);
            next += 1;
        }
        let grouped: Vec<(usize, Vec<usize>)> = grouped
            .into_iter()
            .map(|(g, pairs)| {
                let mut classes = Vec::with_capacity(pairs.len());
                for (c, e) in pairs {
                    row_of.insert(e, next);
                    next += 1;
                    classes.push(c);
                }
                (g, classes)
            })
            .collect();
        EntityGather { distinct, grouped, row_of }
    }
}

#[derive(Debug, Clone)]
struct BatchPlan {
    dataset: usize,
    u_gather: EntityGather,
    i_gather: EntityGather,
    u_pos: Vec<usize>,
    i_pos: Vec<usize>,
    /// Normalized targets y / max_r, one per instance.
    targets: Vec<f64>,
}

impl BatchPlan {
    fn new(model: &Model, corpus: &Corpus, dataset: usize, chunk: &[Instance]) -> Self {
        let max_r = corpus.dataset(DatasetId(dataset)).max_rating;
        let users: BTreeSet<usize> = chunk.iter().map(|i| i.user).collect();
        let items: BTreeSet<usize> = chunk.iter().map(|i| i.item).collect();
        let u_gather = EntityGather::plan(model, EntityKind::User, dataset, &users);
        let i_gather = EntityGather::plan(model, EntityKind::Item, dataset, &items);
        let u_pos = chunk.iter().map(|i| u_gather.row_of[&i.user]).collect();
        let i_pos = chunk.iter().map(|i| i_gather.row_of[&i.item]).collect();
        let targets = chunk.iter().map(|i| i.y / max_r).collect();
        BatchPlan { dataset, u_gather, i_gather, u_pos, i_pos, targets }
    }
}

/// Aligned rows entering one pair's penalty term, per kind:
/// (group index, class positions), identical ordering on both sides.
#[derive(Debug, Clone)]
struct PairPenaltyPlan {
    i: usize,
    j: usize,
    users: Vec<(usize, Vec<usize>)>,
    items: Vec<(usize, Vec<usize>)>,
}

fn plan_pair_penalty(
    model: &Model,
    pair_idx: usize,
    cap: usize,
    seed: u64,
    epoch: usize,
    step: usize,
) -> PairPenaltyPlan {
    let (i, j) = model.pairs[pair_idx];
    let per_kind = |kind: EntityKind, kind_code: u64| -> Vec<(usize, Vec<usize>)> {
        let mut flat: Vec<(usize, usize)> = Vec::new();
        for (gi, group) in model.groups.iter().enumerate() {
            if group.kind == kind
                && group.member_position(DatasetId(i)).is_some()
                && group.member_position(DatasetId(j)).is_some()
            {
                flat.extend((0..group.len()).map(|c| (gi, c)));
            }
        }
        if flat.len() > cap {
            let mut rng = seeds::stream(
                seed,
                "penalty-rows",
                &[pair_idx as u64, kind_code, epoch as u64, step as u64],
            );
            for t in 0..cap {
                let swap = rng.random_range(t..flat.len());
                flat.swap(t, swap);
            }
            flat.truncate(cap);
            flat.sort_unstable();
        }
        let mut grouped: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (g, c) in flat {
            grouped.entry(g).or_default().push(c);
        }
        grouped.into_iter().collect()
    };
    let users = per_kind(EntityKind::User, 0);
    let items = per_kind(EntityKind::Item, 1);
    PairPenaltyPlan { i, j, users, items }
}

struct StepPlan {
    batches: Vec<Option<BatchPlan>>,
    penalties: Vec<PairPenaltyPlan>,
}

// ============================================================
// Tape construction
// ============================================================

/// Scalar readouts of one step's tape, for traces and tests.
#[derive(Debug, Clone)]
pub struct StepStats {
    pub objective: f64,
    /// Per dataset: (summed batch loss, instance count, regularizer value).
    pub per_dataset: Vec<Option<(f64, usize, f64)>>,
    pub penalty: f64,
}

struct TapeBuilder<'a> {
    tape: Tape,
    model: &'a Model,
    store: &'a ParamStore,
    config: &'a TrainConfig,
    objective: Objective,
    base_nodes: BTreeMap<(EntityKind, usize), NodeId>,
    tower_nodes: BTreeMap<(EntityKind, usize), Vec<NodeId>>,
    phi_nodes: BTreeMap<String, NodeId>,
    weight_nodes: BTreeMap<(usize, usize), NodeId>,
    fused_nodes: BTreeMap<(usize, usize), NodeId>,
    lambda_node: Option<NodeId>,
}

impl<'a> TapeBuilder<'a> {
    fn new(
        model: &'a Model,
        store: &'a ParamStore,
        config: &'a TrainConfig,
        objective: Objective,
    ) -> Self {
        TapeBuilder {
            tape: Tape::new(),
            model,
            store,
            config,
            objective,
            base_nodes: BTreeMap::new(),
            tower_nodes: BTreeMap::new(),
            phi_nodes: BTreeMap::new(),
            weight_nodes: BTreeMap::new(),
            fused_nodes: BTreeMap::new(),
            lambda_node: None,
        }
    }

    fn base(&mut self, kind: EntityKind, d: usize) -> NodeId {
        if let Some(&id) = self.base_nodes.get(&(kind, d)) {
            return id;
        }
        let id = if self.model.finetune_base {
            let name = base_param_name(kind, d);
            let value = self.store.get(&name).expect("finetuned base lives in the store");
            self.tape.param(&name, value.clone())
        } else {
            let value = match kind {
                EntityKind::User => &self.model.base_u[d],
                EntityKind::Item => &self.model.base_v[d],
            };
            self.tape.constant(value.clone())
        };
        self.base_nodes.insert((kind, d), id);
        id
    }

    fn tower(&mut self, kind: EntityKind, d: usize) -> Vec<NodeId> {
        if let Some(ids) = self.tower_nodes.get(&(kind, d)) {
            return ids.clone();
        }
        let ids: Vec<NodeId> = (0..self.model.structure.n_layers())
            .map(|l| {
                let name = tower_param_name(d, kind, l);
                let value = self.store.get(&name).expect("store holds every tower layer");
                self.tape.param(&name, value.clone())
            })
            .collect();
        self.tower_nodes.insert((kind, d), ids.clone());
        ids
    }

    /// Column-stochastic weight matrix of one (group, target): softmax of
    /// stacked logits in attention mode, a uniform constant otherwise.
    fn weights(&mut self, group_idx: usize, target: usize) -> NodeId {
        if let Some(&id) = self.weight_nodes.get(&(group_idx, target)) {
            return id;
        }
        let group = &self.model.groups[group_idx];
        let g = group.members.len();
        let id = match self.model.fusion_mode {
            FusionMode::Average => {
                self.tape.constant(Tensor::filled(g, self.model.k, 1.0 / g as f64))
            }
            FusionMode::Attention => {
                let logits: Vec<NodeId> = group
                    .members
                    .iter()
                    .map(|&src| {
                        let name = phi_name(group.kind, DatasetId(target), src);
                        match self.phi_nodes.get(&name) {
                            Some(&id) => id,
                            None => {
                                let value =
                                    self.store.get(&name).expect("store holds fusion logits");
                                let id = self.tape.param(&name, value.clone());
                                self.phi_nodes.insert(name, id);
                                id
                            }
                        }
                    })
                    .collect();
                let stacked = self.tape.concat_rows(&logits);
                self.tape.softmax_cols(stacked)
            }
        };
        self.weight_nodes.insert((group_idx, target), id);
        id
    }

    /// Fused rows of one (group, target): Σ over members of the weight row
    /// broadcast-multiplied into the member's gathered base rows, summed in
    /// member order (the same order the pure fusion path uses).
    fn fused(&mut self, group_idx: usize, target: usize) -> NodeId {
        if let Some(&id) = self.fused_nodes.get(&(group_idx, target)) {
            return id;
        }
        let group = &self.model.groups[group_idx];
        let w = self.weights(group_idx, target);
        let mut acc: Option<NodeId> = None;
        for (p, &member) in group.members.iter().enumerate() {
            let base = self.base(group.kind, member.0);
            let rows = self.model.groups[group_idx].rows[p].clone();
            let gathered = self.tape.gather_rows(base, &rows);
            let w_p = self.tape.row(w, p);
            let term = self.tape.mul_row_bcast(gathered, w_p);
            acc = Some(match acc {
                None => term,
                Some(a) => self.tape.add(a, term),
            });
        }
        let id = acc.expect("groups have at least one member");
        self.fused_nodes.insert((group_idx, target), id);
        id
    }

    /// Batch input rows per the gather plan: distinct base rows, then fused
    /// rows group by group.
    fn batch_input(&mut self, kind: EntityKind, d: usize, eg: &EntityGather) -> NodeId {
        let mut parts = Vec::new();
        if !eg.distinct.is_empty() {
            let base = self.base(kind, d);
            parts.push(self.tape.gather_rows(base, &eg.distinct));
        }
        for (g, classes) in &eg.grouped {
            let fused = self.fused(*g, d);
            parts.push(self.tape.gather_rows(fused, classes));
        }
        assert!(!parts.is_empty(), "batches are never empty");
        if parts.len() == 1 {
            parts[0]
        } else {
            self.tape.concat_rows(&parts)
        }
    }

    fn forward(&mut self, kind: EntityKind, d: usize, input: NodeId) -> NodeId {
        let mut x = input;
        for w in self.tower(kind, d) {
            let lin = self.tape.matmul(x, w);
            x = self.tape.relu(lin);
        }
        x
    }

    /// One dataset's batch term: (objective contribution, loss sum node,
    /// regularizer value).
    fn batch_objective(&mut self, plan: &BatchPlan) -> (NodeId, f64, f64) {
        let d = plan.dataset;
        let p_in = self.batch_input(EntityKind::User, d, &plan.u_gather);
        let q_in = self.batch_input(EntityKind::Item, d, &plan.i_gather);
        let p_out = self.forward(EntityKind::User, d, p_in);
        let q_out = self.forward(EntityKind::Item, d, q_in);
        let pu = self.tape.gather_rows(p_out, &plan.u_pos);
        let qi = self.tape.gather_rows(q_out, &plan.i_pos);
        let cos = self.tape.cosine_rows(pu, qi);
        let preds = self.tape.clamp(cos, EPS, 1.0 - EPS);
        let b = plan.targets.len();
        let t = self.tape.constant(Tensor::column(plan.targets.clone()));
        let ones = self.tape.constant(Tensor::filled(b, 1, 1.0));
        let log_p = self.tape.log(preds);
        let pos_term = self.tape.mul_elem(t, log_p);
        let one_minus = self.tape.sub(ones, preds);
        let log_q = self.tape.log(one_minus);
        let coeff = self.tape.sub(ones, t);
        let neg_term = self.tape.mul_elem(coeff, log_q);
        let ll = self.tape.add(pos_term, neg_term);
        let ll_sum = self.tape.sum_all(ll);
        let nce = self.tape.neg(ll_sum);
        let nce_value = self.tape.value(nce).item();
        match self.objective {
            Objective::Personalized => (nce, nce_value, 0.0),
            Objective::Preliminary => {
                let (ru, rv) = match self.config.reg_target {
                    RegTarget::Outputs => (p_out, q_out),
                    RegTarget::Inputs => (p_in, q_in),
                };
                let fu = self.tape.frob_sq(ru);
                let fv = self.tape.frob_sq(rv);
                let fsum = self.tape.add(fu, fv);
                let reg = self.tape.scalar_mul(fsum, self.config.reg_lambda);
                let reg_value = self.tape.value(reg).item();
                (self.tape.add(nce, reg), nce_value, reg_value)
            }
        }
    }

    fn lambda(&mut self) -> NodeId {
        if let Some(id) = self.lambda_node {
            return id;
        }
        let logits = self.store.get(LAMBDA_PARAM).expect("personalized model holds pair logits");
        let param = self.tape.param(LAMBDA_PARAM, logits.clone());
        let id = self.tape.softmax_cols(param);
        self.lambda_node = Some(id);
        id
    }

    /// Penalty contribution of one dataset pair: λ^{ij} · A(d²) with
    /// d² the squared Frobenius distance between the two datasets' tower
    /// outputs over the aligned rows.
    fn pair_penalty(&mut self, pair_idx: usize, plan: &PairPenaltyPlan) -> NodeId {
        let mut d2: Option<NodeId> = None;
        for (kind, rows) in
            [(EntityKind::User, &plan.users), (EntityKind::Item, &plan.items)]
        {
            if rows.is_empty() {
                continue;
            }
            let side = |target: usize, builder: &mut Self| -> NodeId {
                let parts: Vec<NodeId> = rows
                    .iter()
                    .map(|(g, classes)| {
                        let fused = builder.fused(*g, target);
                        builder.tape.gather_rows(fused, classes)
                    })
                    .collect();
                let input = if parts.len() == 1 {
                    parts[0]
                } else {
                    builder.tape.concat_rows(&parts)
                };
                builder.forward(kind, target, input)
            };
            let w_i = side(plan.i, self);
            let w_j = side(plan.j, self);
            let diff = self.tape.sub(w_i, w_j);
            let f = self.tape.frob_sq(diff);
            d2 = Some(match d2 {
                None => f,
                Some(acc) => self.tape.add(acc, f),
            });
        }
        let d2 = d2.expect("penalty pairs share at least one aligned entity");
        let scaled = self.tape.scalar_mul(d2, -1.0 / self.config.theta);
        let decay = self.tape.exp(scaled);
        let one = self.tape.constant(Tensor::scalar(1.0));
        let a = self.tape.sub(one, decay);
        let lam = self.lambda();
        let lam_p = self.tape.row(lam, pair_idx);
        self.tape.mul_elem(lam_p, a)
    }
}

/// Assemble the full tape of one global step: every participating
/// dataset's batch objective, plus — for the personalized objective — the
/// attention-inducing penalty added exactly once.
fn build_step(
    model: &Model,
    store: &ParamStore,
    config: &TrainConfig,
    objective: Objective,
    plan: &StepPlan,
) -> Result<(Tape, NodeId, StepStats), TrainError> {
    let mut b = TapeBuilder::new(model, store, config, objective);
    let mut per_dataset = vec![None; model.n_datasets()];
    let mut loss: Option<NodeId> = None;
    for batch in plan.batches.iter().flatten() {
        let (obj, nce_value, reg_value) = b.batch_objective(batch);
        per_dataset[batch.dataset] = Some((nce_value, batch.targets.len(), reg_value));
        loss = Some(match loss {
            None => obj,
            Some(acc) => b.tape.add(acc, obj),
        });
    }
    let mut penalty_value = 0.0;
    if objective == Objective::Personalized && !plan.penalties.is_empty() {
        let mut penalty: Option<NodeId> = None;
        for (pair_idx, pp) in plan.penalties.iter().enumerate() {
            let term = b.pair_penalty(pair_idx, pp);
            penalty = Some(match penalty {
                None => term,
                Some(acc) => b.tape.add(acc, term),
            });
        }
        let penalty = penalty.expect("pairs listed");
        penalty_value = b.tape.value(penalty).item();
        loss = Some(match loss {
            None => penalty,
            Some(acc) => b.tape.add(acc, penalty),
        });
    }
    let loss = loss.expect("a step always has at least one term");
    let objective_value = b.tape.value(loss).item();
    let stats = StepStats { objective: objective_value, per_dataset, penalty: penalty_value };
    Ok((b.tape, loss, stats))
}

// ============================================================
// Training loop
// ============================================================

/// One trace line per (epoch, dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub dataset: usize,
    /// Mean per-step objective the dataset participated in (its batch loss
    /// + regularizer, plus the shared penalty under the personalized
    /// objective).
    pub objective: f64,
    /// Mean per-instance batch loss.
    pub mean_nce: f64,
    /// Mean penalty value across the epoch's steps (0 when absent).
    pub penalty: f64,
    /// λ^{ij} after the epoch, in [`common_pairs`] order.
    pub lambda: Vec<f64>,
}

/// Write the loss trace as CSV: `epoch,dataset,objective,mean_nce,penalty,
/// lambda_pairs` with λ values `i-j:value` joined by `;`.
pub fn write_trace(
    path: &Path,
    rows: &[TraceRow],
    pairs: &[(usize, usize)],
) -> Result<(), TrainError> {
    let mut out = String::from("epoch,dataset,objective,mean_nce,penalty,lambda_pairs\n");
    for row in rows {
        let lambda: Vec<String> = row
            .lambda
            .iter()
            .zip(pairs)
            .map(|(v, (i, j))| format!("{i}-{j}:{v}"))
            .collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch,
            row.dataset,
            row.objective,
            row.mean_nce,
            row.penalty,
            lambda.join(";")
        ));
    }
    fs::write(path, out).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
}

/// Run the interleaved round-robin loop: per epoch, resample negatives and
/// shuffle per dataset, then walk global steps that batch every dataset
/// together, one optimizer update per step. Returns the per-epoch trace.
pub fn train_loop(
    model: &mut Model,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<Vec<TraceRow>, TrainError> {
    let objective = if config.objective == Objective::Personalized && model.pairs.is_empty() {
        log::warn!(
            "personalized objective requested but no dataset pair shares entities; \
             falling back to the preliminary objective"
        );
        Objective::Preliminary
    } else {
        config.objective
    };
    let n_ds = corpus.n_datasets();
    let mut trace = Vec::new();

    for epoch in 0..config.epochs {
        let mut lists: Vec<Vec<Instance>> = Vec::with_capacity(n_ds);
        for d in 0..n_ds {
            let id = DatasetId(d);
            let mut instances: Vec<Instance> = corpus
                .interactions(id)
                .iter()
                .map(|it| Instance { user: it.user.index, item: it.item.index, y: it.rating })
                .collect();
            let positives: Vec<(usize, usize)> =
                instances.iter().map(|i| (i.user, i.item)).collect();
            let negatives = sample_negatives(
                corpus,
                id,
                &positives,
                config.negatives_per_positive,
                seeds::mix(config.seed, "epoch-negatives", &[epoch as u64]),
            );
            instances.extend(negatives);
            let mut rng = seeds::stream(config.seed, "epoch-shuffle", &[epoch as u64, d as u64]);
            instances.shuffle(&mut rng);
            lists.push(instances);
        }

        let steps = lists
            .iter()
            .map(|l| l.len().div_ceil(config.batch_size))
            .max()
            .unwrap_or(0);
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_ds]; // (objective, nce, steps)
        let mut penalty_sum = 0.0;

        for step in 0..steps {
            let batches: Vec<Option<BatchPlan>> = (0..n_ds)
                .map(|d| {
                    let lo = step * config.batch_size;
                    if lo >= lists[d].len() {
                        return None;
                    }
                    let hi = (lo + config.batch_size).min(lists[d].len());
                    Some(BatchPlan::new(model, corpus, d, &lists[d][lo..hi]))
                })
                .collect();
            let penalties: Vec<PairPenaltyPlan> = if objective == Objective::Personalized {
                (0..model.pairs.len())
                    .map(|p| {
                        plan_pair_penalty(
                            model,
                            p,
                            config.penalty_sample,
                            config.seed,
                            epoch,
                            step,
                        )
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let plan = StepPlan { batches, penalties };
            let (tape, loss, stats) = build_step(model, &model.store, config, objective, &plan)?;
            let grads = tape.backward(loss)?.leaf_grads(&tape);
            model.store.adam_step(&grads, &config.adam)?;

            penalty_sum += stats.penalty;
            for d in 0..n_ds {
                if let Some((nce, count, reg)) = stats.per_dataset[d] {
                    sums[d].0 += nce + reg + stats.penalty;
                    sums[d].1 += nce / count.max(1) as f64;
                    sums[d].2 += 1;
                }
            }
        }

        let lambda = model.lambda_values();
        for (d, &(obj, nce, n_steps)) in sums.iter().enumerate() {
            let denom = n_steps.max(1) as f64;
            trace.push(TraceRow {
                epoch,
                dataset: d,
                objective: obj / denom,
                mean_nce: nce / denom,
                penalty: penalty_sum / steps.max(1) as f64,
                lambda: lambda.clone(),
            });
        }
    }

    if model.finetune_base {
        for d in 0..n_ds {
            model.base_u[d] =
                model.store.get(&base_param_name(EntityKind::User, d)).unwrap().clone();
            model.base_v[d] =
                model.store.get(&base_param_name(EntityKind::Item, d)).unwrap().clone();
        }
    }
    Ok(trace)
}

/// Finite-difference audit of one personalized (or preliminary) step on a
/// fixed plan: returns the maximum relative error across sampled
/// coordinates. Used by tests and the self-check command.
pub fn gradient_check(
    model: &Model,
    corpus: &Corpus,
    config: &TrainConfig,
    samples: usize,
    h: f64,
) -> Result<f64, TrainError> {
    let objective = if config.objective == Objective::Personalized && model.pairs.is_empty() {
        Objective::Preliminary
    } else {
        config.objective
    };
    let batches: Vec<Option<BatchPlan>> = (0..corpus.n_datasets())
        .map(|d| {
            let id = DatasetId(d);
            let instances: Vec<Instance> = corpus
                .interactions(id)
                .iter()
                .map(|it| Instance { user: it.user.index, item: it.item.index, y: it.rating })
                .collect();
            if instances.is_empty() {
                None
            } else {
                Some(BatchPlan::new(model, corpus, d, &instances))
            }
        })
        .collect();
    let penalties: Vec<PairPenaltyPlan> = if objective == Objective::Personalized {
        (0..model.pairs.len())
            .map(|p| plan_pair_penalty(model, p, config.penalty_sample, config.seed, 0, 0))
            .collect()
    } else {
        Vec::new()
    };
    let plan = StepPlan { batches, penalties };
    let mut loss_fn = |store: &ParamStore| {
        let (tape, loss, _) = build_step(model, store, config, objective, &plan)
            .expect("gradient-check tape construction");
        (tape, loss)
    };
    let report = crate::numerics::finite_diff_check(
        &mut loss_fn,
        &model.store,
        samples,
        h,
        seeds::mix(config.seed, "gradient-check", &[]),
    )?;
    Ok(report.max_rel_error)
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, DatasetFiles, LoadOptions};
    use crate::scorer::predict;
    use proptest::prelude::*;
    use std::path::PathBuf;
    use tempfile::TempDir;

    /// Two datasets, one aligned user, handcrafted ratings.
    fn overlap_corpus(dir: &TempDir) -> Corpus {
        let a = dir.path().join("a.tsv");
        fs::write(&a, "u1\ti1\t5.0\nu1\ti2\t3.0\nu2\ti1\t4.0\nu2\ti3\t2.0\n").unwrap();
        let b = dir.path().join("b.tsv");
        fs::write(&b, "w1\tj1\t1.0\nw1\tj2\t4.0\nw2\tj2\t5.0\n").unwrap();
        let align = dir.path().join("align.tsv");
        fs::write(&align, "user\tA\tu1\tB\tw1\n").unwrap();
        let files = vec![
            DatasetFiles { name: "A".into(), max_rating: 5.0, ratings: a, content: None },
            DatasetFiles { name: "B".into(), max_rating: 5.0, ratings: b, content: None },
        ];
        load_corpus(&files, Some(&align), &LoadOptions { min_interactions_per_user: 1 }).unwrap()
    }

    fn constant_bases(corpus: &Corpus, k: usize, scale: f64) -> (Vec<Tensor>, Vec<Tensor>) {
        let mut us = Vec::new();
        let mut vs = Vec::new();
        for d in 0..corpus.n_datasets() {
            let m = corpus.dataset(DatasetId(d)).m;
            let n = corpus.dataset(DatasetId(d)).n;
            let mk = |rows: usize, tag: f64| {
                Tensor::from_vec(
                    rows,
                    k,
                    (0..rows * k).map(|x| ((x % 7) as f64 * 0.13 + tag) * scale).collect(),
                )
            };
            us.push(mk(m, 0.1 + d as f64));
            vs.push(mk(n, 0.5 + d as f64));
        }
        (us, vs)
    }

    fn small_config(objective: Objective) -> TrainConfig {
        TrainConfig {
            objective,
            negatives_per_positive: 2,
            batch_size: 8,
            epochs: 3,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn negatives_respect_ratio_and_observation() {
        let dir = TempDir::new().unwrap();
        let corpus = overlap_corpus(&dir);
        let positives: Vec<(usize, usize)> = corpus
            .interactions(DatasetId(0))
            .iter()
            .map(|it| (it.user.index, it.item.index))
            .collect();
        let negs = sample_negatives(&corpus, DatasetId(0), &positives, 7, 3);
        assert_eq!(negs.len(), positives.len() * 7);
        let mut observed = BTreeSet::new();
        for it in corpus.interactions(DatasetId(0)) {
            observed.insert((it.user.index, it.item.index));
        }
        for neg in &negs {
            assert!(!observed.contains(&(neg.user, neg.item)));
            assert_eq!(neg.y, 0.0);
        }
        let again = sample_negatives(&corpus, DatasetId(0), &positives, 7, 3);
        assert_eq!(negs, again, "same seed, same draws");
    }

    #[test]
    fn saturated_user_contributes_no_negatives() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("r.tsv");
        // u1 rated both items; u2 rated one of two
        fs::write(&path, "u1\ti1\t5.0\nu1\ti2\t4.0\nu2\ti1\t3.0\n").unwrap();
        let files =
            vec![DatasetFiles { name: "d".into(), max_rating: 5.0, ratings: path, content: None }];
        let corpus =
            load_corpus(&files, None, &LoadOptions { min_interactions_per_user: 1 }).unwrap();
        let positives = vec![(0usize, 0usize), (0, 1), (1, 0)];
        let negs = sample_negatives(&corpus, DatasetId(0), &positives, 4, 1);
        assert_eq!(negs.len(), 4, "only u2's positive yields negatives");
        assert!(negs.iter().all(|n| n.user == 1 && n.item == 1));
    }

    #[test]
    fn loss_oracles() {
        assert!((nce_loss(5.0, 5.0, 0.5) - 2.0f64.ln()).abs() < 1e-12);
        assert!((nce_loss(2.5, 5.0, 0.5) - 2.0f64.ln()).abs() < 1e-12);
        let confident = nce_loss(0.0, 5.0, EPS);
        assert!(confident >= 0.0 && confident < 1e-6, "{confident}");
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative(y in 0.0f64..5.0, y_hat in 1e-7f64..0.9999999) {
            prop_assert!(nce_loss(y, 5.0, y_hat) >= 0.0);
        }
    }

    #[test]
    fn tape_objective_matches_pure_forward_path() {
        let dir = TempDir::new().unwrap();
        let corpus = overlap_corpus(&dir);
        let (us, vs) = constant_bases(&corpus, 4, 0.5);
        let config = small_config(Objective::Preliminary);
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let model =
            Model::init(&corpus, us, vs, 4, &structure, FusionMode::Attention, &config);

        // one full-data batch per dataset
        let batches: Vec<Option<BatchPlan>> = (0..2)
            .map(|d| {
                let instances: Vec<Instance> = corpus
                    .interactions(DatasetId(d))
                    .iter()
                    .map(|it| Instance { user: it.user.index, item: it.item.index, y: it.rating })
                    .collect();
                Some(BatchPlan::new(&model, &corpus, d, &instances))
            })
            .collect();
        let plan = StepPlan { batches, penalties: Vec::new() };
        let (_, _, stats) =
            build_step(&model, &model.store, &config, Objective::Preliminary, &plan).unwrap();

        // pure path: same predictions, loss, and regularizer by hand
        let outputs = model_outputs(&model, &corpus).unwrap();
        for d in 0..2 {
            let id = DatasetId(d);
            let max_r = corpus.dataset(id).max_rating;
            let (p_out, q_out) = &outputs[d];
            let mut nce = 0.0;
            let mut users = BTreeSet::new();
            let mut items = BTreeSet::new();
            for it in corpus.interactions(id) {
                let y_hat = predict(p_out.row(it.user.index), q_out.row(it.item.index));
                nce += nce_loss(it.rating, max_r, y_hat);
                users.insert(it.user.index);
                items.insert(it.item.index);
            }
            let mut reg = 0.0;
            for &u in &users {
                reg += p_out.row(u).iter().map(|v| v * v).sum::<f64>();
            }
            for &i in &items {
                reg += q_out.row(i).iter().map(|v| v * v).sum::<f64>();
            }
            reg *= config.reg_lambda;
            let (got_nce, count, got_reg) = stats.per_dataset[d].unwrap();
            assert_eq!(count, corpus.interactions(id).len());
            assert!((got_nce - nce).abs() < 1e-9, "dataset {d}: {got_nce} vs {nce}");
            assert!((got_reg - reg).abs() < 1e-9, "dataset {d}: {got_reg} vs {reg}");
        }
    }

    #[test]
    fn single_pair_weight_is_exactly_one() {
        let dir = TempDir::new().unwrap();
        let corpus = overlap_corpus(&dir);
        let (us, vs) = constant_bases(&corpus, 4, 0.5);
        let config = small_config(Objective::Personalized);
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let model =
            Model::init(&corpus, us, vs, 4, &structure, FusionMode::Attention, &config);
        assert_eq!(model.pairs, vec![(0, 1)]);
        assert_eq!(model.lambda_values(), vec![1.0]);
    }

    /// Identical towers and average fusion make both sides of the pair
    /// produce the same aligned outputs, so the penalty is exactly zero.
    #[test]
    fn identical_sides_have_zero_penalty() {
        let dir = TempDir::new().unwrap();
        let corpus = overlap_corpus(&dir);
        let (us, vs) = constant_bases(&corpus, 4, 0.5);
        let config = small_config(Objective::Personalized);
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let mut model =
            Model::init(&corpus, us, vs, 4, &structure, FusionMode::Average, &config);
        // copy dataset 0's user tower over dataset 1's
        for l in 0..structure.n_layers() {
            let w = model
                .store
                .get(&tower_param_name(0, EntityKind::User, l))
                .unwrap()
                .clone();
            *model.store.get_mut(&tower_param_name(1, EntityKind::User, l)).unwrap() = w;
        }
        let plan = StepPlan {
            batches: vec![None, None],
            penalties: vec![plan_pair_penalty(&model, 0, 1024, config.seed, 0, 0)],
        };
        let (_, _, stats) =
            build_step(&model, &model.store, &config, Objective::Personalized, &plan).unwrap();
        assert_eq!(stats.penalty, 0.0);
    }

    /// Unit-norm aligned embedding, identity tower on one side and a
    /// doubled identity on the other: d² = ‖x − 2x‖² = 1, so the penalty
    /// equals 1 − e^{−1} with the single pair's λ = 1.
    #[test]
    fn penalty_matches_exponential_oracle() {
        let dir = TempDir::new().unwrap();
        let corpus = overlap_corpus(&dir);
        let k = 2;
        let m0 = corpus.dataset(DatasetId(0)).m;
        let m1 = corpus.dataset(DatasetId(1)).m;
        // aligned user is index 0 in both datasets; give it the row [0.6, 0.8]
        let mut u0 = Tensor::zeros(m0, k);
        let mut u1 = Tensor::zeros(m1, k);
        let aligned0 = corpus.user_index(DatasetId(0), "u1").unwrap();
        let aligned1 = corpus.user_index(DatasetId(1), "w1").unwrap();
        u0.row_mut(aligned0).copy_from_slice(&[0.6, 0.8]);
        u1.row_mut(aligned1).copy_from_slice(&[0.6, 0.8]);
        let vs = vec![
            Tensor::zeros(corpus.dataset(DatasetId(0)).n, k),
            Tensor::zeros(corpus.dataset(DatasetId(1)).n, k),
        ];
        let config = small_config(Objective::Personalized);
        let structure: StructureSpec = "1,1".parse().unwrap();
        let mut model = Model::init(
            &corpus,
            vec![u0, u1],
            vs,
            k,
            &structure,
            FusionMode::Average,
            &config,
        );
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let two_eye = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]);
        *model.store.get_mut(&tower_param_name(0, EntityKind::User, 0)).unwrap() = eye;
        *model.store.get_mut(&tower_param_name(1, EntityKind::User, 0)).unwrap() = two_eye;
        let plan = StepPlan {
            batches: vec![None, None],
            penalties: vec![plan_pair_penalty(&model, 0, 1024, config.seed, 0, 0)],
        };
        let (_, _, stats) =
            build_step(&model, &model.store, &config, Objective::Personalized, &plan).unwrap();
        let expect = 1.0 - (-1.0f64).exp();
        assert!((stats.penalty - expect).abs() < 1e-12, "{} vs {expect}", stats.penalty);
    }

    /// Three datasets overlapping pairwise, attention fusion, personalized
    /// objective: analytic gradients must match central differences.
    #[test]
    fn personalized_gradients_match_finite_differences() {
        let dir = TempDir::new().unwrap();
        let a = dir.path().join("a.tsv");
        fs::write(&a, "u1\ti1\t5.0\nu2\ti1\t2.0\nu2\ti2\t4.0\n").unwrap();
        let b = dir.path().join("b.tsv");
        fs::write(&b, "w1\tj1\t3.0\nw2\tj1\t1.0\n").unwrap();
        let c = dir.path().join("c.tsv");
        fs::write(&c, "x1\tp1\t4.0\nx2\tp2\t5.0\n").unwrap();
        let align = dir.path().join("align.tsv");
        fs::write(&align, "user\tA\tu1\tB\tw1\nuser\tB\tw2\tC\tx1\nuser\tA\tu2\tC\tx2\n").unwrap();
        let files = vec![
            DatasetFiles { name: "A".into(), max_rating: 5.0, ratings: a, content: None },
            DatasetFiles { name: "B".into(), max_rating: 5.0, ratings: b, content: None },
            DatasetFiles { name: "C".into(), max_rating: 5.0, ratings: c, content: None },
        ];
        let corpus =
            load_corpus(&files, Some(&align), &LoadOptions { min_interactions_per_user: 1 })
                .unwrap();
        let (us, vs) = constant_bases(&corpus, 4, 0.3);
        let config = TrainConfig { seed: 5, ..small_config(Objective::Personalized) };
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let model =
            Model::init(&corpus, us, vs, 4, &structure, FusionMode::Attention, &config);
        assert_eq!(model.pairs.len(), 3, "three overlapping pairs for a true λ softmax");
        let max_rel = gradient_check(&model, &corpus, &config, 80, 1e-5).unwrap();
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    /// With average fusion and no shared entities, joint training must be
    /// bit-for-bit the same as training each dataset alone.
    #[test]
    fn disjoint_datasets_train_independently() {
        let dir = TempDir::new().unwrap();
        let a = dir.path().join("a.tsv");
        fs::write(&a, "u1\ti1\t5.0\nu1\ti2\t2.0\nu2\ti1\t3.0\n").unwrap();
        let b = dir.path().join("b.tsv");
        fs::write(&b, "w1\tj1\t4.0\nw2\tj2\t1.0\nw2\tj1\t5.0\n").unwrap();
        let mk_files = |paths: &[(&str, &PathBuf)]| -> Vec<DatasetFiles> {
            paths
                .iter()
                .map(|(name, p)| DatasetFiles {
                    name: (*name).into(),
                    max_rating: 5.0,
                    ratings: (*p).clone(),
                    content: None,
                })
                .collect()
        };
        let opts = LoadOptions { min_interactions_per_user: 1 };
        let joint = load_corpus(&mk_files(&[("A", &a), ("B", &b)]), None, &opts).unwrap();
        let solo = load_corpus(&mk_files(&[("A", &a)]), None, &opts).unwrap();

        let config = small_config(Objective::Preliminary);
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let (ju, jv) = constant_bases(&joint, 4, 0.5);
        let (su, sv) = (vec![ju[0].clone()], vec![jv[0].clone()]);
        let mut joint_model =
            Model::init(&joint, ju, jv, 4, &structure, FusionMode::Average, &config);
        let mut solo_model =
            Model::init(&solo, su, sv, 4, &structure, FusionMode::Average, &config);
        train_loop(&mut joint_model, &joint, &config).unwrap();
        train_loop(&mut solo_model, &solo, &config).unwrap();
        for kind in [EntityKind::User, EntityKind::Item] {
            for l in 0..structure.n_layers() {
                let name = tower_param_name(0, kind, l);
                assert_eq!(
                    joint_model.store.get(&name).unwrap(),
                    solo_model.store.get(&name).unwrap(),
                    "{name} diverged"
                );
            }
        }
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let dir = TempDir::new().unwrap();
        let corpus = overlap_corpus(&dir);
        let (us, vs) = constant_bases(&corpus, 4, 0.5);
        let config = TrainConfig { epochs: 0, ..small_config(Objective::Preliminary) };
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let mut model =
            Model::init(&corpus, us, vs, 4, &structure, FusionMode::Attention, &config);
        let before: Vec<(String, Tensor)> =
            model.store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let trace = train_loop(&mut model, &corpus, &config).unwrap();
        assert!(trace.is_empty());
        for (name, tensor) in before {
            assert_eq!(model.store.get(&name).unwrap(), &tensor);
        }
    }

    #[test]
    fn training_reduces_the_objective() {
        let dir = TempDir::new().unwrap();
        let corpus = overlap_corpus(&dir);
        let (us, vs) = constant_bases(&corpus, 4, 0.5);
        let config = TrainConfig {
            epochs: 25,
            batch_size: 64,
            ..small_config(Objective::Personalized)
        };
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let mut model =
            Model::init(&corpus, us, vs, 4, &structure, FusionMode::Attention, &config);
        let trace = train_loop(&mut model, &corpus, &config).unwrap();
        let first: f64 = trace.iter().filter(|r| r.epoch == 0).map(|r| r.objective).sum();
        let last: f64 =
            trace.iter().filter(|r| r.epoch == config.epochs - 1).map(|r| r.objective).sum();
        assert!(last < first, "objective did not improve: {first} -> {last}");
        // λ stays a simplex through training
        let lambda = model.lambda_values();
        assert_eq!(lambda.len(), 1);
        assert!((lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_reproduces_the_run() {
        let dir = TempDir::new().unwrap();
        let corpus = overlap_corpus(&dir);
        let config = small_config(Objective::Personalized);
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let run = || {
            let (us, vs) = constant_bases(&corpus, 4, 0.5);
            let mut model =
                Model::init(&corpus, us, vs, 4, &structure, FusionMode::Attention, &config);
            let trace = train_loop(&mut model, &corpus, &config).unwrap();
            (trace, model)
        };
        let (trace_a, model_a) = run();
        let (trace_b, model_b) = run();
        assert_eq!(trace_a, trace_b);
        for (name, tensor) in model_a.store.iter() {
            assert_eq!(tensor, model_b.store.get(name).unwrap(), "{name} diverged");
        }
    }

    #[test]
    fn personalized_without_overlap_falls_back() {
        let dir = TempDir::new().unwrap();
        let a = dir.path().join("a.tsv");
        fs::write(&a, "u1\ti1\t5.0\nu2\ti2\t1.0\n").unwrap();
        let b = dir.path().join("b.tsv");
        fs::write(&b, "w1\tj1\t4.0\n").unwrap();
        let files = vec![
            DatasetFiles { name: "A".into(), max_rating: 5.0, ratings: a, content: None },
            DatasetFiles { name: "B".into(), max_rating: 5.0, ratings: b, content: None },
        ];
        let corpus =
            load_corpus(&files, None, &LoadOptions { min_interactions_per_user: 1 }).unwrap();
        let (us, vs) = constant_bases(&corpus, 4, 0.5);
        let config = small_config(Objective::Personalized);
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let mut model =
            Model::init(&corpus, us, vs, 4, &structure, FusionMode::Average, &config);
        assert!(!model.store.contains(LAMBDA_PARAM));
        let trace = train_loop(&mut model, &corpus, &config).unwrap();
        assert!(trace.iter().all(|r| r.penalty == 0.0));
        assert!(trace.iter().all(|r| r.lambda.is_empty()));
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let dir = TempDir::new().unwrap();
        let corpus = overlap_corpus(&dir);
        let (us, vs) = constant_bases(&corpus, 4, 0.5);
        let config = small_config(Objective::Personalized);
        let structure: StructureSpec = "1,2,1".parse().unwrap();
        let mut model =
            Model::init(&corpus, us, vs, 4, &structure, FusionMode::Attention, &config);
        let trace = train_loop(&mut model, &corpus, &config).unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&path, &trace, &model.pairs).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,dataset,objective,mean_nce,penalty,lambda_pairs");
        assert_eq!(lines.len(), 1 + config.epochs * corpus.n_datasets());
        assert!(lines[1].contains("0-1:"), "λ column carries the pair tag: {}", lines[1]);
    }
}
