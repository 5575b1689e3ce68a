//! Graph embeddings via biased random walks and skip-gram.
//!
//! Walks are second-order: the probability of stepping from `cur` to `next`
//! is proportional to the edge weight times a bias that depends on the
//! previous node — 1/p to return, 1 to move to a mutual neighbor of the
//! previous node, 1/q to explore outward. The walk corpus then trains a
//! skip-gram model with negative sampling, treating nodes as words; the
//! input vectors become the embedding matrix and are split into the user
//! block U and item block V.
//!
//! Every walk draws from its own RNG stream derived from (seed, start node,
//! walk index), so the corpus is independent of generation order.

use crate::corpus::{Corpus, DatasetId, EntityKind};
use crate::hetgraph::HetGraph;
use crate::numerics::Tensor;
use crate::seeds;
use rand::seq::SliceRandom;
use rand::Rng;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphEmbedError {
    #[error("node {0} has no neighbors")]
    IsolatedNode(usize),
    #[error("embedding matrix has {rows} rows, expected m + n = {expected}")]
    ShapeMismatch { rows: usize, expected: usize },
    #[error("walk corpus is empty")]
    EmptyWalkCorpus,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed line: {reason}")]
    MalformedLine { file: PathBuf, line: usize, reason: String },
    #[error("{file}:{line}: vector has {got} components, expected {expected}")]
    DimensionMismatch { file: PathBuf, line: usize, got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct WalkConfig {
    /// Return bias: likelihood of stepping back to the previous node scales
    /// with 1/p.
    pub p: f64,
    /// In-out bias: likelihood of leaving the previous node's neighborhood
    /// scales with 1/q.
    pub q: f64,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            p: 1.0,
            q: 1.0,
            walks_per_node: 10,
            walk_length: 80,
            window: 10,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            k: 128,
            seed: 0,
        }
    }
}

// ============================================================
// Walks
// ============================================================

/// Unnormalized transition weights out of `cur`, given the previous node of
/// the walk (`None` at the first step, where the bias collapses to the raw
/// edge weights).
pub fn transition_weights(
    graph: &HetGraph,
    prev: Option<usize>,
    cur: usize,
    config: &WalkConfig,
) -> Result<Vec<(usize, f64)>, GraphEmbedError> {
    assert!(config.p > 0.0 && config.q > 0.0, "p and q must be positive");
    let edges = graph.neighbors(cur);
    if edges.is_empty() {
        return Err(GraphEmbedError::IsolatedNode(cur));
    }
    let out = edges
        .iter()
        .map(|e| {
            let bias = match prev {
                None => 1.0,
                Some(prev) if e.to == prev => 1.0 / config.p,
                Some(prev) if graph.has_edge(e.to, prev) => 1.0,
                Some(_) => 1.0 / config.q,
            };
            (e.to, e.weight * bias)
        })
        .collect();
    Ok(out)
}

fn sample_weighted(weights: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let x = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(node, w) in weights {
        acc += w;
        if x < acc {
            return node;
        }
    }
    weights.last().expect("non-empty weights").0
}

/// One biased walk from `start`, on its own RNG stream.
fn walk_from(graph: &HetGraph, start: usize, walk_index: usize, config: &WalkConfig) -> Vec<usize> {
    let mut rng =
        seeds::stream(config.seed, "n2v-walk", &[start as u64, walk_index as u64]);
    let mut walk = Vec::with_capacity(config.walk_length);
    walk.push(start);
    let mut prev: Option<usize> = None;
    let mut cur = start;
    while walk.len() < config.walk_length {
        let weights = match transition_weights(graph, prev, cur, config) {
            Ok(w) => w,
            Err(_) => break, // dead end: emit the shorter walk
        };
        let next = sample_weighted(&weights, &mut rng);
        walk.push(next);
        prev = Some(cur);
        cur = next;
    }
    walk
}

/// `walks_per_node` walks from every non-isolated node, in node order.
pub fn generate_walks(graph: &HetGraph, config: &WalkConfig) -> Vec<Vec<usize>> {
    let mut walks = Vec::new();
    for node in 0..graph.node_count() {
        if graph.is_isolated(node) {
            continue;
        }
        for w in 0..config.walks_per_node {
            walks.push(walk_from(graph, node, w, config));
        }
    }
    walks
}

// ============================================================
// Skip-gram
// ============================================================

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cumulative node frequency^0.75 table over the walk corpus.
struct NodeTable {
    cumulative: Vec<f64>,
}

impl NodeTable {
    fn build(walks: &[Vec<usize>], node_count: usize) -> NodeTable {
        let mut freqs = vec![0u64; node_count];
        for walk in walks {
            for &node in walk {
                freqs[node] += 1;
            }
        }
        let mut cumulative = Vec::with_capacity(node_count);
        let mut acc = 0.0;
        for &f in &freqs {
            acc += (f as f64).powf(0.75);
            cumulative.push(acc);
        }
        NodeTable { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty table");
        let x: f64 = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }
}

/// Train skip-gram with negative sampling over the walk corpus and return
/// the input-vector matrix (node_count x k).
pub fn train_skipgram(
    walks: &[Vec<usize>],
    node_count: usize,
    config: &WalkConfig,
) -> Result<Tensor, GraphEmbedError> {
    train_skipgram_with_trace(walks, node_count, config).map(|(m, _)| m)
}

/// As [`train_skipgram`], also returning each epoch's mean per-positive loss.
pub fn train_skipgram_with_trace(
    walks: &[Vec<usize>],
    node_count: usize,
    config: &WalkConfig,
) -> Result<(Tensor, Vec<f64>), GraphEmbedError> {
    if walks.is_empty() || walks.iter().all(|w| w.len() < 2) {
        return Err(GraphEmbedError::EmptyWalkCorpus);
    }
    let k = config.k;
    let table = NodeTable::build(walks, node_count);

    let mut init_rng = seeds::stream(config.seed, "n2v-init", &[]);
    let mut input = Tensor::zeros(node_count, k);
    let half = 0.5 / k as f64;
    for r in 0..node_count {
        for c in 0..k {
            input.set(r, c, init_rng.random_range(-half..half));
        }
    }
    let mut output = Tensor::zeros(node_count, k);

    let pairs_per_pass: usize = walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| w.len().min(i + config.window + 1) - i.saturating_sub(config.window) - 1)
                .sum::<usize>()
        })
        .sum();
    let total_steps = (config.epochs * pairs_per_pass).max(1) as f64;

    let mut order: Vec<usize> = (0..walks.len()).collect();
    let mut step = 0u64;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut shuffle_rng = seeds::stream(config.seed, "n2v-shuffle", &[epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        let mut neg_rng = seeds::stream(config.seed, "n2v-neg", &[epoch as u64]);

        let mut loss_sum = 0.0;
        let mut positives = 0usize;
        for &wi in &order {
            let walk = &walks[wi];
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = walk.len().min(i + config.window + 1);
                for j in lo..hi {
                    if j == i {
                        continue;
                    }
                    let context = walk[j];
                    let lr = config.lr * (1.0 - step as f64 / total_steps).max(0.01);
                    step += 1;
                    positives += 1;
                    let mut center_delta = vec![0.0; k];
                    let mut loss = 0.0;
                    for sample in 0..=config.negatives {
                        let (target, label) = if sample == 0 {
                            (context, 1.0)
                        } else {
                            let t = table.sample(&mut neg_rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let f: f64 = input
                            .row(center)
                            .iter()
                            .zip(output.row(target))
                            .map(|(a, b)| a * b)
                            .sum();
                        let prob = sigmoid(f);
                        loss -= if label == 1.0 {
                            prob.max(1e-12).ln()
                        } else {
                            (1.0 - prob).max(1e-12).ln()
                        };
                        let g = (label - prob) * lr;
                        for c in 0..k {
                            center_delta[c] += g * output.get(target, c);
                        }
                        for c in 0..k {
                            let cur = output.get(target, c);
                            output.set(target, c, cur + g * input.get(center, c));
                        }
                    }
                    for c in 0..k {
                        let cur = input.get(center, c);
                        input.set(center, c, cur + center_delta[c]);
                    }
                    loss_sum += loss;
                }
            }
        }
        epoch_losses.push(loss_sum / positives.max(1) as f64);
    }
    debug_assert!(input.all_finite());
    Ok((input, epoch_losses))
}

/// Split a (m+n) x k node matrix into the user block U and item block V.
pub fn split_embeddings(
    matrix: &Tensor,
    m: usize,
    n: usize,
) -> Result<(Tensor, Tensor), GraphEmbedError> {
    if matrix.rows() != m + n {
        return Err(GraphEmbedError::ShapeMismatch { rows: matrix.rows(), expected: m + n });
    }
    let k = matrix.cols();
    let mut u = Tensor::zeros(m, k);
    let mut v = Tensor::zeros(n, k);
    for i in 0..m {
        u.row_mut(i).copy_from_slice(matrix.row(i));
    }
    for j in 0..n {
        v.row_mut(j).copy_from_slice(matrix.row(m + j));
    }
    Ok((u, v))
}

// ============================================================
// Embedding files
// ============================================================

/// Write `#dim k` then `kind<TAB>raw_id<TAB>c1 ... ck` per entity. Components
/// round-trip bit-identically.
pub fn save_embeddings(
    path: &Path,
    corpus: &Corpus,
    dataset: DatasetId,
    u: &Tensor,
    v: &Tensor,
) -> Result<(), GraphEmbedError> {
    let d = corpus.dataset(dataset);
    assert_eq!(u.rows(), d.m, "user matrix rows");
    assert_eq!(v.rows(), d.n, "item matrix rows");
    assert_eq!(u.cols(), v.cols(), "dimension mismatch between U and V");
    let mut out = format!("#dim\t{}\n", u.cols());
    for i in 0..d.m {
        let comps: Vec<String> = u.row(i).iter().map(|x| format!("{x}")).collect();
        out.push_str(&format!("user\t{}\t{}\n", corpus.user_raw_id(dataset, i), comps.join(" ")));
    }
    for j in 0..d.n {
        let comps: Vec<String> = v.row(j).iter().map(|x| format!("{x}")).collect();
        out.push_str(&format!("item\t{}\t{}\n", corpus.item_raw_id(dataset, j), comps.join(" ")));
    }
    fs::write(path, out).map_err(|source| GraphEmbedError::Io { path: path.to_path_buf(), source })
}

/// Load a `#dim k` embedding file back into (U, V) for one dataset. Entities
/// missing from the file keep zero rows; unknown raw ids are skipped with a
/// warning.
pub fn load_embeddings(
    path: &Path,
    corpus: &Corpus,
    dataset: DatasetId,
) -> Result<(Tensor, Tensor), GraphEmbedError> {
    let text =
        fs::read_to_string(path).map_err(|source| GraphEmbedError::Io { path: path.to_path_buf(), source })?;
    let malformed = |line: usize, reason: &str| GraphEmbedError::MalformedLine {
        file: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
    let k: usize = match header.split('\t').collect::<Vec<_>>().as_slice() {
        ["#dim", k] => k.parse().map_err(|_| malformed(1, "bad dimension"))?,
        _ => return Err(malformed(1, "expected `#dim<TAB>k` header")),
    };
    let d = corpus.dataset(dataset);
    let mut u = Tensor::zeros(d.m, k);
    let mut v = Tensor::zeros(d.n, k);
    for (line_no, line) in lines {
        let line_no = line_no + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() != 3 {
            return Err(malformed(line_no, "expected `kind<TAB>id<TAB>components`"));
        }
        let kind = match fields[0] {
            "user" => EntityKind::User,
            "item" => EntityKind::Item,
            other => return Err(malformed(line_no, &format!("unknown entity kind {other:?}"))),
        };
        let comps: Result<Vec<f64>, _> =
            fields[2].split_whitespace().map(|c| c.parse::<f64>()).collect();
        let comps =
            comps.map_err(|_| malformed(line_no, "unparseable vector component"))?;
        if comps.len() != k {
            return Err(GraphEmbedError::DimensionMismatch {
                file: path.to_path_buf(),
                line: line_no,
                got: comps.len(),
                expected: k,
            });
        }
        let row = match kind {
            EntityKind::User => corpus.user_index(dataset, fields[1]).map(|i| u.row_mut(i)),
            EntityKind::Item => corpus.item_index(dataset, fields[1]).map(|j| v.row_mut(j)),
        };
        match row {
            Some(slot) => slot.copy_from_slice(&comps),
            None => log::warn!(
                "{}:{line_no}: embedding for unknown {} {:?} skipped",
                path.display(),
                fields[0],
                fields[1]
            ),
        }
    }
    Ok((u, v))
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, DatasetFiles, LoadOptions};
    use crate::hetgraph::{build_graph, load_graph, GraphConfig};
    use crate::textembed::normalized_sim;
    use std::io::Write as _;
    use tempfile::TempDir;

    /// Triangle a-b-c plus pendant c-d, unit weights, via the graph loader.
    fn diamond_graph(dir: &TempDir) -> HetGraph {
        // nodes: 2 users (0,1), 2 items (2,3)
        let path = dir.path().join("g.tsv");
        fs::write(&path, "#nodes\t2\t2\n0\t1\t1\tUU\n0\t2\t1\tUI\n1\t2\t1\tUI\n2\t3\t1\tII\n")
            .unwrap();
        load_graph(&path).unwrap()
    }

    #[test]
    fn neutral_bias_returns_raw_weights() {
        let dir = TempDir::new().unwrap();
        let g = diamond_graph(&dir);
        let cfg = WalkConfig { p: 1.0, q: 1.0, ..WalkConfig::default() };
        let w = transition_weights(&g, Some(0), 2, &cfg).unwrap();
        assert_eq!(w, vec![(0, 1.0), (1, 1.0), (3, 1.0)]);
    }

    #[test]
    fn triangle_and_path_biases() {
        let dir = TempDir::new().unwrap();
        let g = diamond_graph(&dir);
        let cfg = WalkConfig { p: 4.0, q: 2.0, ..WalkConfig::default() };
        // prev=0 (user a), cur=2 (item): neighbors 0 (back → 1/p),
        // 1 (adjacent to 0 → 1), 3 (not adjacent to 0 → 1/q).
        let w = transition_weights(&g, Some(0), 2, &cfg).unwrap();
        assert_eq!(w, vec![(0, 0.25), (1, 1.0), (3, 0.5)]);
        // path: prev=2, cur=3 has only the back edge
        let w = transition_weights(&g, Some(2), 3, &cfg).unwrap();
        assert_eq!(w, vec![(2, 0.25)]);
    }

    #[test]
    fn isolated_node_is_an_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("g.tsv");
        // node 3 (item 1) isolated
        fs::write(&path, "#nodes\t2\t2\n0\t2\t1\tUI\n1\t2\t1\tUI\n").unwrap();
        let g = load_graph(&path).unwrap();
        let cfg = WalkConfig::default();
        assert!(matches!(
            transition_weights(&g, None, 3, &cfg),
            Err(GraphEmbedError::IsolatedNode(3))
        ));
    }

    #[test]
    fn normalized_transitions_sum_to_one() {
        let dir = TempDir::new().unwrap();
        let g = diamond_graph(&dir);
        let cfg = WalkConfig { p: 0.3, q: 7.0, ..WalkConfig::default() };
        for (prev, cur) in [(None, 2), (Some(0), 2), (Some(2), 0), (Some(2), 3)] {
            let w = transition_weights(&g, prev, cur, &cfg).unwrap();
            let total: f64 = w.iter().map(|(_, x)| x).sum();
            let normalized: f64 = w.iter().map(|(_, x)| x / total).sum();
            assert!((normalized - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn walk_counts_and_isolated_nodes() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("g.tsv");
        // 5 nodes, node 4 isolated
        fs::write(&path, "#nodes\t3\t2\n0\t3\t1\tUI\n1\t3\t1\tUI\n2\t3\t1\tUI\n").unwrap();
        let g = load_graph(&path).unwrap();
        let cfg = WalkConfig { walks_per_node: 10, walk_length: 7, ..WalkConfig::default() };
        let walks = generate_walks(&g, &cfg);
        assert_eq!(walks.len(), 40);
        assert!(walks.iter().all(|w| w.len() == 7));
        assert!(walks.iter().all(|w| !w.contains(&4)));
    }

    #[test]
    fn two_node_walks_alternate() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("g.tsv");
        fs::write(&path, "#nodes\t1\t1\n0\t1\t1\tUI\n").unwrap();
        let g = load_graph(&path).unwrap();
        let cfg = WalkConfig { walks_per_node: 3, walk_length: 9, ..WalkConfig::default() };
        for walk in generate_walks(&g, &cfg) {
            for (i, &node) in walk.iter().enumerate() {
                assert_eq!(node, (walk[0] + i) % 2);
            }
        }
    }

    #[test]
    fn walks_are_seed_deterministic() {
        let dir = TempDir::new().unwrap();
        let g = diamond_graph(&dir);
        let cfg = WalkConfig { walks_per_node: 5, walk_length: 20, seed: 3, ..WalkConfig::default() };
        assert_eq!(generate_walks(&g, &cfg), generate_walks(&g, &cfg));
        let other = WalkConfig { seed: 4, ..cfg };
        assert_ne!(generate_walks(&g, &cfg), generate_walks(&g, &other));
    }

    #[test]
    fn skipgram_is_seed_deterministic_and_shaped() {
        let dir = TempDir::new().unwrap();
        let g = diamond_graph(&dir);
        let cfg = WalkConfig {
            walks_per_node: 4,
            walk_length: 10,
            window: 3,
            epochs: 2,
            k: 8,
            seed: 17,
            ..WalkConfig::default()
        };
        let walks = generate_walks(&g, &cfg);
        let a = train_skipgram(&walks, g.node_count(), &cfg).unwrap();
        let b = train_skipgram(&walks, g.node_count(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (4, 8));
        assert!(a.all_finite());
    }

    #[test]
    fn skipgram_loss_decreases() {
        let dir = TempDir::new().unwrap();
        let g = diamond_graph(&dir);
        let cfg = WalkConfig {
            walks_per_node: 10,
            walk_length: 20,
            window: 4,
            epochs: 5,
            k: 8,
            seed: 5,
            ..WalkConfig::default()
        };
        let walks = generate_walks(&g, &cfg);
        let (_, losses) = train_skipgram_with_trace(&walks, g.node_count(), &cfg).unwrap();
        assert!(losses.last().unwrap() < &losses[0], "losses {losses:?}");
    }

    #[test]
    fn clique_structure_is_recovered() {
        // Two 4-cliques joined by a single bridge edge: embeddings should
        // place intra-clique pairs closer than cross-clique pairs.
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("g.tsv");
        let mut text = String::from("#nodes\t8\t0\n");
        for a in 0..4usize {
            for b in a + 1..4 {
                text.push_str(&format!("{a}\t{b}\t1\tUU\n"));
                text.push_str(&format!("{}\t{}\t1\tUU\n", a + 4, b + 4));
            }
        }
        text.push_str("3\t4\t1\tUU\n");
        fs::write(&path, text).unwrap();
        let g = load_graph(&path).unwrap();
        let cfg = WalkConfig {
            walks_per_node: 10,
            walk_length: 30,
            window: 4,
            epochs: 5,
            k: 8,
            seed: 2,
            ..WalkConfig::default()
        };
        let walks = generate_walks(&g, &cfg);
        let emb = train_skipgram(&walks, g.node_count(), &cfg).unwrap();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for a in 0..8usize {
            for b in a + 1..8 {
                let sim = normalized_sim(emb.row(a), emb.row(b));
                if (a < 4) == (b < 4) {
                    intra.push(sim);
                } else {
                    inter.push(sim);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&intra) > mean(&inter),
            "intra {} vs inter {}",
            mean(&intra),
            mean(&inter)
        );
    }

    #[test]
    fn split_shapes_and_errors() {
        let matrix = Tensor::from_vec(5, 2, (0..10).map(|x| x as f64).collect());
        let (u, v) = split_embeddings(&matrix, 2, 3).unwrap();
        assert_eq!(u.shape(), (2, 2));
        assert_eq!(v.shape(), (3, 2));
        assert_eq!(v.row(0), &[4.0, 5.0]);
        let (u, v) = split_embeddings(&matrix, 0, 5).unwrap();
        assert_eq!(u.rows(), 0);
        assert_eq!(v, matrix);
        assert!(matches!(
            split_embeddings(&matrix, 2, 2),
            Err(GraphEmbedError::ShapeMismatch { rows: 5, expected: 4 })
        ));
    }

    #[test]
    fn embedding_file_roundtrip_is_bit_identical() {
        let dir = TempDir::new().unwrap();
        let rpath = dir.path().join("r.tsv");
        fs::File::create(&rpath)
            .unwrap()
            .write_all(b"u1\ti1\t5.0\nu2\ti2\t3.0\n")
            .unwrap();
        let files =
            vec![DatasetFiles { name: "d".into(), max_rating: 5.0, ratings: rpath, content: None }];
        let corpus =
            load_corpus(&files, None, &LoadOptions { min_interactions_per_user: 1 }).unwrap();
        let mut rng = seeds::stream(33, "emb-test", &[]);
        let u = Tensor::from_vec(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
        let v = Tensor::from_vec(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
        let path = dir.path().join("emb.tsv");
        save_embeddings(&path, &corpus, DatasetId(0), &u, &v).unwrap();
        let (lu, lv) = load_embeddings(&path, &corpus, DatasetId(0)).unwrap();
        assert_eq!(u, lu);
        assert_eq!(v, lv);
    }

    #[test]
    fn pipeline_over_built_graph_stays_finite() {
        // end-to-end over a small built graph rather than a handcrafted one
        let dir = TempDir::new().unwrap();
        let rpath = dir.path().join("r.tsv");
        let mut text = String::new();
        for u in 0..6 {
            for i in 0..3 {
                if (u + i) % 2 == 0 {
                    text.push_str(&format!("u{u}\ti{i}\t{}\n", 1 + (u + i) % 5));
                }
            }
        }
        fs::File::create(&rpath).unwrap().write_all(text.as_bytes()).unwrap();
        let files =
            vec![DatasetFiles { name: "d".into(), max_rating: 5.0, ratings: rpath, content: None }];
        let corpus =
            load_corpus(&files, None, &LoadOptions { min_interactions_per_user: 1 }).unwrap();
        let content = crate::textembed::ContentEmbeddings {
            uc: Tensor::zeros(6, 2),
            vc: Tensor::zeros(3, 2),
            user_has_doc: vec![false; 6],
            item_has_doc: vec![false; 3],
        };
        let g = build_graph(
            &corpus,
            DatasetId(0),
            &content,
            &GraphConfig { alpha: 0.0, ..GraphConfig::default() },
        )
        .unwrap();
        let cfg = WalkConfig {
            walks_per_node: 3,
            walk_length: 12,
            window: 3,
            epochs: 2,
            k: 8,
            seed: 9,
            ..WalkConfig::default()
        };
        let walks = generate_walks(&g, &cfg);
        let emb = train_skipgram(&walks, g.node_count(), &cfg).unwrap();
        let (u, v) = split_embeddings(&emb, 6, 3).unwrap();
        assert!(u.all_finite() && v.all_finite());
    }
}
