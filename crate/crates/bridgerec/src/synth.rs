//! Synthetic multi-dataset corpora with planted cross-dataset structure.
//!
//! Every entity owns a latent vector near one of a handful of cluster
//! centers; entities aligned across datasets share one vector. Users pick
//! items by noisy best-score selection (Gumbel perturbation of the latent
//! dot product), ratings are a quantized affine map of that dot product
//! plus Gaussian noise, and content documents draw their tokens mostly
//! from a cluster-specific vocabulary slice. Interaction timestamps are
//! the draw order, so "latest interaction" holdouts are well defined.
//!
//! Because the planted latents fully determine preferences, an oracle
//! ranking by true dot products bounds what any learner can recover — and
//! datasets that share entities genuinely inform each other, which is what
//! the acceptance tests lean on.

use crate::corpus::{Corpus, DatasetId};
use crate::seeds;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(
        "dataset {dataset}: target interaction count {target} is infeasible \
         (must lie within [{min}, {max}]: two per user, one per item, at most m*n)"
    )]
    InfeasibleDensity { dataset: String, target: usize, min: usize, max: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub name: String,
    pub users: usize,
    pub items: usize,
    pub density: f64,
}

/// (dataset a, dataset b, fraction of min(count_a, count_b) aligned).
pub type OverlapSpec = (usize, usize, f64);

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub datasets: Vec<SynthDataset>,
    pub latent_dim: usize,
    pub clusters: usize,
    pub user_overlap: Vec<OverlapSpec>,
    pub item_overlap: Vec<OverlapSpec>,
    /// Ratings take integer values 1..=rating_levels.
    pub rating_levels: u32,
    pub noise_sigma: f64,
    pub vocab_size: usize,
    pub tokens_per_doc: usize,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::BadConfig(msg));
        if self.datasets.is_empty() {
            return bad("at least one dataset".into());
        }
        if self.latent_dim == 0 || self.clusters == 0 {
            return bad("latent_dim and clusters must be positive".into());
        }
        if self.rating_levels < 2 {
            return bad("rating_levels must be at least 2".into());
        }
        if self.vocab_size < self.clusters {
            return bad("vocab_size must cover every cluster".into());
        }
        for d in &self.datasets {
            if d.users == 0 || d.items == 0 {
                return bad(format!("dataset {} must have users and items", d.name));
            }
            if !(d.density > 0.0 && d.density <= 1.0) {
                return bad(format!("dataset {} density must lie in (0, 1]", d.name));
            }
        }
        for &(a, b, frac) in self.user_overlap.iter().chain(&self.item_overlap) {
            if a >= self.datasets.len() || b >= self.datasets.len() || a == b {
                return bad(format!("overlap pair ({a}, {b}) out of range"));
            }
            if !(0.0..=1.0).contains(&frac) {
                return bad(format!("overlap fraction {frac} out of [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Planted latent vectors, keyed by raw entity id per dataset.
#[derive(Debug, Clone)]
pub struct Truth {
    pub users: Vec<BTreeMap<String, Vec<f64>>>,
    pub items: Vec<BTreeMap<String, Vec<f64>>>,
}

impl Truth {
    /// The oracle: dot product of the planted vectors behind a corpus
    /// (user index, item index) pair.
    pub fn score(&self, corpus: &Corpus, dataset: DatasetId, user: usize, item: usize) -> f64 {
        let u = &self.users[dataset.0][corpus.user_raw_id(dataset, user)];
        let v = &self.items[dataset.0][corpus.item_raw_id(dataset, item)];
        u.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub name: String,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub manifest: PathBuf,
    pub truth: Truth,
    pub stats: Vec<DatasetStats>,
    /// (a, b, aligned entity count) per configured overlap.
    pub user_overlaps: Vec<(usize, usize, usize)>,
    pub item_overlaps: Vec<(usize, usize, usize)>,
}

// ============================================================
// Generation
// ============================================================

fn raw_user(name: &str, idx: usize) -> String {
    format!("{name}_u{idx:05}")
}

fn raw_item(name: &str, idx: usize) -> String {
    format!("{name}_i{idx:05}")
}

/// Minimal union-find over a dense node range.
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }
    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb.max(ra)] = rb.min(ra);
        }
    }
}

/// Gumbel(0, 1) perturbation for noisy top-k selection.
fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Selection temperature: lower = interactions hug the planted preference.
const TEMPERATURE: f64 = 0.04;
/// Fraction of document tokens drawn from the entity's cluster slice.
const CLUSTER_TOKEN_P: f64 = 0.8;

struct LatentPlan {
    /// Per dataset: latent vector per user / item index.
    user_vecs: Vec<Vec<Vec<f64>>>,
    item_vecs: Vec<Vec<Vec<f64>>>,
    /// Per dataset: cluster id per user / item index.
    user_cluster: Vec<Vec<usize>>,
    item_cluster: Vec<Vec<usize>>,
    /// Per dataset: shared-class root per user / item (for shared docs).
    user_root: Vec<Vec<usize>>,
    item_root: Vec<Vec<usize>>,
}

fn plan_latents(config: &SynthConfig) -> LatentPlan {
    let a = config.datasets.len();
    // dense node numbering per kind: dataset-major
    let user_offsets: Vec<usize> = config
        .datasets
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d.users;
            Some(o)
        })
        .collect();
    let item_offsets: Vec<usize> = config
        .datasets
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d.items;
            Some(o)
        })
        .collect();
    let total_users: usize = config.datasets.iter().map(|d| d.users).sum();
    let total_items: usize = config.datasets.iter().map(|d| d.items).sum();

    let mut user_uf = UnionFind::new(total_users);
    for &(x, y, frac) in &config.user_overlap {
        let count =
            (frac * config.datasets[x].users.min(config.datasets[y].users) as f64).floor() as usize;
        for e in 0..count {
            user_uf.union(user_offsets[x] + e, user_offsets[y] + e);
        }
    }
    let mut item_uf = UnionFind::new(total_items);
    for &(x, y, frac) in &config.item_overlap {
        let count =
            (frac * config.datasets[x].items.min(config.datasets[y].items) as f64).floor() as usize;
        for e in 0..count {
            item_uf.union(item_offsets[x] + e, item_offsets[y] + e);
        }
    }

    // cluster centers
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = seeds::stream(config.seed, "synth-centers", &[]);
    let centers: Vec<Vec<f64>> = (0..config.clusters)
        .map(|_| {
            let v: Vec<f64> = (0..config.latent_dim).map(|_| normal.sample(&mut rng)).collect();
            normalize(v)
        })
        .collect();

    // one draw per class root, copied to every member
    let mut root_vec: BTreeMap<(u8, usize), (Vec<f64>, usize)> = BTreeMap::new();
    let mut vec_of = |kind: u8, root: usize| -> (Vec<f64>, usize) {
        root_vec
            .entry((kind, root))
            .or_insert_with(|| {
                let mut rng = seeds::stream(config.seed, "synth-latent", &[kind as u64, root as u64]);
                let cluster = rng.random_range(0..config.clusters);
                let v: Vec<f64> = centers[cluster]
                    .iter()
                    .map(|c| c + 0.7 * normal.sample(&mut rng))
                    .collect();
                (normalize(v), cluster)
            })
            .clone()
    };

    let mut plan = LatentPlan {
        user_vecs: vec![Vec::new(); a],
        item_vecs: vec![Vec::new(); a],
        user_cluster: vec![Vec::new(); a],
        item_cluster: vec![Vec::new(); a],
        user_root: vec![Vec::new(); a],
        item_root: vec![Vec::new(); a],
    };
    for (d, spec) in config.datasets.iter().enumerate() {
        for e in 0..spec.users {
            let root = user_uf.find(user_offsets[d] + e);
            let (v, c) = vec_of(0, root);
            plan.user_vecs[d].push(v);
            plan.user_cluster[d].push(c);
            plan.user_root[d].push(root);
        }
        for e in 0..spec.items {
            let root = item_uf.find(item_offsets[d] + e);
            let (v, c) = vec_of(1, root);
            plan.item_vecs[d].push(v);
            plan.item_cluster[d].push(c);
            plan.item_root[d].push(root);
        }
    }
    plan
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / norm).collect()
}

/// Pick each user's items: every item is first covered by its
/// best-scoring (Gumbel-perturbed) user with quota left, then users fill
/// their remaining quota by noisy top-k over unselected items.
fn sample_interactions(
    d: usize,
    spec: &SynthDataset,
    plan: &LatentPlan,
    seed: u64,
) -> Result<Vec<Vec<usize>>, SynthError> {
    let (m, n) = (spec.users, spec.items);
    let target = (spec.density * (m as f64) * (n as f64)).round() as usize;
    let min = (2 * m).max(n);
    if target < min || target > m * n {
        return Err(SynthError::InfeasibleDensity {
            dataset: spec.name.clone(),
            target,
            min,
            max: m * n,
        });
    }

    // quotas: 2 per user, remainder spread uniformly
    let mut quota = vec![2usize; m];
    let mut rng = seeds::stream(seed, "synth-quota", &[d as u64]);
    let mut remaining = target - 2 * m;
    while remaining > 0 {
        let u = rng.random_range(0..m);
        if quota[u] < n {
            quota[u] += 1;
            remaining -= 1;
        }
    }

    let score = |u: usize, j: usize| -> f64 {
        plan.user_vecs[d][u].iter().zip(&plan.item_vecs[d][j]).map(|(a, b)| a * b).sum::<f64>()
            / TEMPERATURE
    };

    let mut selected: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut chosen: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); m];

    // coverage pass, in a shuffled item order
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeds::stream(seed, "synth-cover", &[d as u64]);
    for t in 0..n {
        let s = rng.random_range(t..n);
        order.swap(t, s);
    }
    for &j in &order {
        let mut best: Option<(f64, usize)> = None;
        for u in 0..m {
            if selected[u].len() >= quota[u] {
                continue;
            }
            let key = score(u, j) + gumbel(&mut rng);
            if best.is_none_or(|(b, _)| key > b) {
                best = Some((key, u));
            }
        }
        let (_, u) = best.expect("total quota >= item count");
        selected[u].push(j);
        chosen[u].insert(j);
    }

    // fill pass
    for u in 0..m {
        let need = quota[u] - selected[u].len();
        if need == 0 {
            continue;
        }
        let mut rng = seeds::stream(seed, "synth-fill", &[d as u64, u as u64]);
        let mut keys: Vec<(f64, usize)> = (0..n)
            .filter(|j| !chosen[u].contains(j))
            .map(|j| (score(u, j) + gumbel(&mut rng), j))
            .collect();
        keys.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for &(_, j) in keys.iter().take(need) {
            selected[u].push(j);
            chosen[u].insert(j);
        }
    }
    Ok(selected)
}

fn quantized_rating(dot: f64, levels: u32, noise: f64) -> f64 {
    let half = (levels as f64 - 1.0) / 2.0;
    let raw = half * (dot + noise) + half + 1.0;
    raw.round().clamp(1.0, levels as f64)
}

fn cluster_document(
    cluster: usize,
    config: &SynthConfig,
    rng: &mut impl Rng,
) -> String {
    let slice = config.vocab_size / config.clusters;
    let lo = cluster * slice;
    let mut words = Vec::with_capacity(config.tokens_per_doc);
    for _ in 0..config.tokens_per_doc {
        let w = if rng.random_range(0.0..1.0) < CLUSTER_TOKEN_P && slice > 0 {
            lo + rng.random_range(0..slice)
        } else {
            rng.random_range(0..config.vocab_size)
        };
        words.push(format!("w{w:04}"));
    }
    words.join(" ")
}

/// Write a full corpus (manifest, ratings, content, alignment, truth/)
/// under `out_dir` and return its handle plus the planted factors.
pub fn generate(config: &SynthConfig, out_dir: &Path) -> Result<GeneratedCorpus, SynthError> {
    config.validate()?;
    fs::create_dir_all(out_dir)
        .map_err(|source| SynthError::Io { path: out_dir.to_path_buf(), source })?;
    let truth_dir = out_dir.join("truth");
    fs::create_dir_all(&truth_dir)
        .map_err(|source| SynthError::Io { path: truth_dir.clone(), source })?;
    let write = |path: &Path, text: &str| -> Result<(), SynthError> {
        fs::write(path, text).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })
    };

    let plan = plan_latents(config);
    let mut stats = Vec::new();
    let mut truth = Truth { users: Vec::new(), items: Vec::new() };
    let mut manifest = String::new();

    for (d, spec) in config.datasets.iter().enumerate() {
        let selected = sample_interactions(d, spec, &plan, config.seed)?;

        // ratings, timestamps in draw order
        let mut rating_rng = seeds::stream(config.seed, "synth-rating", &[d as u64]);
        let normal = Normal::new(0.0, config.noise_sigma).unwrap();
        let mut lines = String::new();
        let mut timestamp = 0u64;
        let mut count = 0usize;
        for (u, items) in selected.iter().enumerate() {
            // items arrive coverage-forced first, then own picks strongest
            // first, so the latest (holdout-eligible) interaction is the
            // user's weakest genuine preference
            for &j in items {
                let dot: f64 = plan.user_vecs[d][u]
                    .iter()
                    .zip(&plan.item_vecs[d][j])
                    .map(|(a, b)| a * b)
                    .sum();
                let rating =
                    quantized_rating(dot, config.rating_levels, normal.sample(&mut rating_rng));
                timestamp += 1;
                count += 1;
                writeln!(
                    lines,
                    "{}\t{}\t{}\t{}",
                    raw_user(&spec.name, u),
                    raw_item(&spec.name, j),
                    rating,
                    timestamp
                )
                .unwrap();
            }
        }
        let ratings_path = out_dir.join(format!("{}.ratings.tsv", spec.name));
        write(&ratings_path, &lines)?;

        // content: one document per entity, shared across aligned copies
        let mut content = String::new();
        for u in 0..spec.users {
            let mut rng =
                seeds::stream(config.seed, "synth-doc", &[0, plan.user_root[d][u] as u64]);
            let doc = cluster_document(plan.user_cluster[d][u], config, &mut rng);
            writeln!(content, "user\t{}\t{}", raw_user(&spec.name, u), doc).unwrap();
        }
        for j in 0..spec.items {
            let mut rng =
                seeds::stream(config.seed, "synth-doc", &[1, plan.item_root[d][j] as u64]);
            let doc = cluster_document(plan.item_cluster[d][j], config, &mut rng);
            writeln!(content, "item\t{}\t{}", raw_item(&spec.name, j), doc).unwrap();
        }
        let content_path = out_dir.join(format!("{}.content.tsv", spec.name));
        write(&content_path, &content)?;

        // truth
        let dump = |vecs: &[Vec<f64>], raw: &dyn Fn(usize) -> String| -> String {
            let mut s = String::new();
            for (e, v) in vecs.iter().enumerate() {
                let comps: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                writeln!(s, "{}\t{}", raw(e), comps.join(" ")).unwrap();
            }
            s
        };
        write(
            &truth_dir.join(format!("{}.users.tsv", spec.name)),
            &dump(&plan.user_vecs[d], &|e| raw_user(&spec.name, e)),
        )?;
        write(
            &truth_dir.join(format!("{}.items.tsv", spec.name)),
            &dump(&plan.item_vecs[d], &|e| raw_item(&spec.name, e)),
        )?;
        truth.users.push(
            plan.user_vecs[d]
                .iter()
                .enumerate()
                .map(|(e, v)| (raw_user(&spec.name, e), v.clone()))
                .collect(),
        );
        truth.items.push(
            plan.item_vecs[d]
                .iter()
                .enumerate()
                .map(|(e, v)| (raw_item(&spec.name, e), v.clone()))
                .collect(),
        );

        writeln!(manifest, "dataset.{d}.name {}", spec.name).unwrap();
        writeln!(manifest, "dataset.{d}.ratings {}.ratings.tsv", spec.name).unwrap();
        writeln!(manifest, "dataset.{d}.content {}.content.tsv", spec.name).unwrap();
        writeln!(manifest, "dataset.{d}.max_rating {}", config.rating_levels).unwrap();

        stats.push(DatasetStats {
            name: spec.name.clone(),
            users: spec.users,
            items: spec.items,
            interactions: count,
            density: count as f64 / (spec.users as f64 * spec.items as f64),
        });
    }

    // alignment
    let mut user_overlaps = Vec::new();
    let mut item_overlaps = Vec::new();
    let mut alignment = String::new();
    for &(x, y, frac) in &config.user_overlap {
        let count =
            (frac * config.datasets[x].users.min(config.datasets[y].users) as f64).floor() as usize;
        for e in 0..count {
            writeln!(
                alignment,
                "user\t{}\t{}\t{}\t{}",
                config.datasets[x].name,
                raw_user(&config.datasets[x].name, e),
                config.datasets[y].name,
                raw_user(&config.datasets[y].name, e),
            )
            .unwrap();
        }
        user_overlaps.push((x, y, count));
    }
    for &(x, y, frac) in &config.item_overlap {
        let count =
            (frac * config.datasets[x].items.min(config.datasets[y].items) as f64).floor() as usize;
        for e in 0..count {
            writeln!(
                alignment,
                "item\t{}\t{}\t{}\t{}",
                config.datasets[x].name,
                raw_item(&config.datasets[x].name, e),
                config.datasets[y].name,
                raw_item(&config.datasets[y].name, e),
            )
            .unwrap();
        }
        item_overlaps.push((x, y, count));
    }
    if !alignment.is_empty() {
        write(&out_dir.join("alignment.tsv"), &alignment)?;
        manifest.push_str("alignment alignment.tsv\n");
    }

    let manifest_path = out_dir.join("manifest.txt");
    write(&manifest_path, &manifest)?;

    Ok(GeneratedCorpus {
        manifest: manifest_path,
        truth,
        stats,
        user_overlaps,
        item_overlaps,
    })
}

/// Human-readable stats table (name, m, n, interactions, density, overlaps).
pub fn describe(generated: &GeneratedCorpus) -> String {
    let mut out = String::from("dataset\tusers\titems\tinteractions\tdensity\n");
    for s in &generated.stats {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}",
            s.name, s.users, s.items, s.interactions, s.density
        )
        .unwrap();
    }
    for &(a, b, count) in &generated.user_overlaps {
        writeln!(out, "common users {a}<->{b}\t{count}").unwrap();
    }
    for &(a, b, count) in &generated.item_overlaps {
        writeln!(out, "common items {a}<->{b}\t{count}").unwrap();
    }
    out
}

// ============================================================
// Tests
// ============================================================
