//! Per-dataset heterogeneous graph.
//!
//! Nodes are one dataset's users followed by its items (node id = user
//! index, or m + item index). Three edge kinds:
//!
//! - UI: one edge per observed interaction, weight = rating / max_rating;
//! - UU / II: same-kind similarity edges, sampled per candidate pair with
//!   Bernoulli probability `alpha * sim` where sim is the normalized cosine
//!   similarity of the endpoints' content vectors, and weighted by that
//!   same similarity when present.
//!
//! Sampling uses one RNG stream per candidate pair, derived from the master
//! seed and the pair indices, so the result is independent of enumeration
//! order. Entities whose content vector is zero never become similarity-edge
//! endpoints.

use crate::corpus::{Corpus, DatasetId};
use crate::seeds;
use crate::textembed::{normalized_sim, ContentEmbeddings};
use rand::Rng;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    UI,
    UU,
    II,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeKind::UI => write!(f, "UI"),
            EdgeKind::UU => write!(f, "UU"),
            EdgeKind::II => write!(f, "II"),
        }
    }
}

impl FromStr for EdgeKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "UI" => Ok(EdgeKind::UI),
            "UU" => Ok(EdgeKind::UU),
            "II" => Ok(EdgeKind::II),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// Undirected weighted graph over one dataset's users and items.
#[derive(Debug, Clone, PartialEq)]
pub struct HetGraph {
    m: usize,
    n: usize,
    adj: Vec<Vec<Edge>>,
}

#[derive(Debug, Error)]
pub enum HetGraphError {
    #[error("synthetic edges requested for dataset {0:?} but every content vector is zero")]
    MissingContent(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed line: {reason}")]
    MalformedLine { file: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, Copy)]
pub struct GraphConfig {
    /// Scale on the similarity-edge sampling probability, in [0, 1].
    pub alpha: f64,
    pub seed: u64,
    /// All-pairs candidate enumeration up to this many same-kind entities;
    /// beyond it, each entity's candidates are its top 50 by similarity.
    pub candidate_cap: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { alpha: 0.05, seed: 0, candidate_cap: 5000 }
    }
}

const TOP_CANDIDATES: usize = 50;

impl HetGraph {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_count(&self) -> usize {
        self.m + self.n
    }

    pub fn user_node(&self, i: usize) -> usize {
        debug_assert!(i < self.m);
        i
    }

    pub fn item_node(&self, j: usize) -> usize {
        debug_assert!(j < self.n);
        self.m + j
    }

    /// Neighbors of a node, sorted by neighbor id.
    pub fn neighbors(&self, node: usize) -> &[Edge] {
        &self.adj[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search_by_key(&b, |e| e.to).is_ok()
    }

    pub fn is_isolated(&self, node: usize) -> bool {
        self.adj[node].is_empty()
    }

    /// Per-kind directed-entry and undirected-edge counts.
    pub fn degree_histogram(&self) -> BTreeMap<EdgeKind, KindStats> {
        let mut out: BTreeMap<EdgeKind, KindStats> = BTreeMap::new();
        for edges in &self.adj {
            for e in edges {
                let s = out.entry(e.kind).or_default();
                s.degree_sum += 1;
            }
        }
        for s in out.values_mut() {
            s.edge_count = s.degree_sum / 2;
        }
        out
    }

    fn push_undirected(&mut self, a: usize, b: usize, weight: f64, kind: EdgeKind) {
        debug_assert_ne!(a, b, "self-loop");
        debug_assert!(weight > 0.0 && weight <= 1.0, "weight {weight} outside (0,1]");
        self.adj[a].push(Edge { to: b, weight, kind });
        self.adj[b].push(Edge { to: a, weight, kind });
    }

    fn sort_adjacency(&mut self) {
        for edges in &mut self.adj {
            edges.sort_unstable_by_key(|e| e.to);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindStats {
    /// Number of directed adjacency entries (sum of degrees).
    pub degree_sum: usize,
    /// Number of undirected edges.
    pub edge_count: usize,
}

// ============================================================
// Construction
// ============================================================

/// Build the heterogeneous graph of one dataset.
pub fn build_graph(
    corpus: &Corpus,
    dataset: DatasetId,
    content: &ContentEmbeddings,
    config: &GraphConfig,
) -> Result<HetGraph, HetGraphError> {
    assert!((0.0..=1.0).contains(&config.alpha), "alpha must lie in [0,1]");
    let d = corpus.dataset(dataset);
    let mut graph = HetGraph { m: d.m, n: d.n, adj: vec![Vec::new(); d.m + d.n] };

    // Interaction edges, weighted by the dataset's rating scale.
    let max_rating = d.max_rating;
    for x in corpus.interactions(dataset) {
        let weight = x.rating / max_rating;
        graph.push_undirected(x.user.index, d.m + x.item.index, weight, EdgeKind::UI);
    }

    // Similarity edges.
    if config.alpha > 0.0 {
        let rows_nonzero = |t: &crate::numerics::Tensor| -> Vec<usize> {
            (0..t.rows()).filter(|&r| t.row(r).iter().any(|&v| v != 0.0)).collect()
        };
        let users = rows_nonzero(&content.uc);
        let items = rows_nonzero(&content.vc);
        if users.is_empty() && items.is_empty() {
            return Err(HetGraphError::MissingContent(d.name.clone()));
        }
        sample_similarity_edges(
            &mut graph,
            &users,
            &content.uc,
            EdgeKind::UU,
            |i| i,
            dataset,
            config,
        );
        sample_similarity_edges(
            &mut graph,
            &items,
            &content.vc,
            EdgeKind::II,
            |j| d.m + j,
            dataset,
            config,
        );
    }

    graph.sort_adjacency();
    Ok(graph)
}

/// Enumerate candidate same-kind pairs and keep each with probability
/// `alpha * sim`. Each pair draws from its own RNG stream, so the outcome
/// does not depend on enumeration order.
fn sample_similarity_edges(
    graph: &mut HetGraph,
    entities: &[usize],
    vectors: &crate::numerics::Tensor,
    kind: EdgeKind,
    node_of: impl Fn(usize) -> usize,
    dataset: DatasetId,
    config: &GraphConfig,
) {
    let tag = match kind {
        EdgeKind::UU => "uu-pair",
        EdgeKind::II => "ii-pair",
        EdgeKind::UI => unreachable!("interaction edges are not sampled"),
    };
    let pairs: Vec<(usize, usize)> = if entities.len() <= config.candidate_cap {
        let mut v = Vec::new();
        for (a, &i) in entities.iter().enumerate() {
            for &l in &entities[a + 1..] {
                v.push((i, l));
            }
        }
        v
    } else {
        // Top candidates per entity by similarity; union of unordered pairs.
        let mut set = std::collections::BTreeSet::new();
        for &i in entities {
            let mut sims: Vec<(f64, usize)> = entities
                .iter()
                .filter(|&&l| l != i)
                .map(|&l| (normalized_sim(vectors.row(i), vectors.row(l)), l))
                .collect();
            // highest similarity first; ties resolved by lower index
            sims.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, l) in sims.iter().take(TOP_CANDIDATES) {
                set.insert((i.min(l), i.max(l)));
            }
        }
        set.into_iter().collect()
    };

    for (i, l) in pairs {
        let sim = normalized_sim(vectors.row(i), vectors.row(l));
        let p = config.alpha * sim;
        if p <= 0.0 {
            continue;
        }
        let mut rng = seeds::stream(config.seed, tag, &[dataset.0 as u64, i as u64, l as u64]);
        if rng.random::<f64>() < p {
            graph.push_undirected(node_of(i), node_of(l), sim, kind);
        }
    }
}

// ============================================================
// Dump / load
// ============================================================

/// Write one line per undirected edge: `src<TAB>dst<TAB>weight<TAB>kind`,
/// with src < dst, preceded by a `#nodes m n` header. Weights are formatted
/// so they parse back bit-identically.
pub fn save_graph(path: &Path, graph: &HetGraph) -> Result<(), HetGraphError> {
    let mut out = format!("#nodes\t{}\t{}\n", graph.m, graph.n);
    for (src, edges) in graph.adj.iter().enumerate() {
        for e in edges {
            if e.to > src {
                out.push_str(&format!("{src}\t{}\t{}\t{}\n", e.to, e.weight, e.kind));
            }
        }
    }
    fs::write(path, out).map_err(|source| HetGraphError::Io { path: path.to_path_buf(), source })
}

pub fn load_graph(path: &Path) -> Result<HetGraph, HetGraphError> {
    let text =
        fs::read_to_string(path).map_err(|source| HetGraphError::Io { path: path.to_path_buf(), source })?;
    let malformed = |line: usize, reason: &str| HetGraphError::MalformedLine {
        file: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
    let mut graph = match header.split('\t').collect::<Vec<_>>().as_slice() {
        ["#nodes", m, n] => {
            let m: usize = m.parse().map_err(|_| malformed(1, "bad node count"))?;
            let n: usize = n.parse().map_err(|_| malformed(1, "bad node count"))?;
            HetGraph { m, n, adj: vec![Vec::new(); m + n] }
        }
        _ => return Err(malformed(1, "expected `#nodes<TAB>m<TAB>n` header")),
    };
    for (line_no, line) in lines {
        let line_no = line_no + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(malformed(line_no, "expected 4 tab-separated fields"));
        }
        let src: usize = fields[0].parse().map_err(|_| malformed(line_no, "bad src"))?;
        let dst: usize = fields[1].parse().map_err(|_| malformed(line_no, "bad dst"))?;
        let weight: f64 = fields[2].parse().map_err(|_| malformed(line_no, "bad weight"))?;
        let kind =
            EdgeKind::from_str(fields[3]).map_err(|_| malformed(line_no, "bad edge kind"))?;
        if src >= graph.node_count() || dst >= graph.node_count() || src == dst {
            return Err(malformed(line_no, "edge endpoints out of range"));
        }
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(malformed(line_no, "weight outside (0,1]"));
        }
        graph.push_undirected(src, dst, weight, kind);
    }
    graph.sort_adjacency();
    Ok(graph)
}

// ============================================================
// Tests
// ============================================================
