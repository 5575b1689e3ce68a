//! Dataset ingestion and interning.
//!
//! Parses per-dataset ratings and content files plus an optional alignment
//! file, interns raw string IDs to dense indices (lexicographic order, so
//! re-loading the same files always yields the same corpus), applies the
//! minimum-interaction user filter, and exposes immutable views: interaction
//! lists, tokenized documents, and the cross-dataset alignment classes that
//! make entities shared between datasets addressable from either side.

use crate::textembed::tokenize;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

// ============================================================
// Identifiers
// ============================================================

/// Position of a dataset within a corpus (contiguous from 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DatasetId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    User,
    Item,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityKind::User => write!(f, "user"),
            EntityKind::Item => write!(f, "item"),
        }
    }
}

/// A user or item of one dataset, by dense index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityRef {
    pub kind: EntityKind,
    pub dataset: DatasetId,
    pub index: usize,
}

/// One observed rating. `seq` is the (1-based) line number of the surviving
/// occurrence in the ratings file; it defines "file order" wherever
/// timestamps are missing or tied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: EntityRef,
    pub item: EntityRef,
    pub rating: f64,
    pub timestamp: Option<i64>,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDescriptor {
    pub name: String,
    pub max_rating: f64,
    /// Number of interned users (post-filter).
    pub m: usize,
    /// Number of interned items.
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixStats {
    pub m: usize,
    pub n: usize,
    pub interaction_count: usize,
    pub density: f64,
}

/// Interaction density of an m x n matrix holding `count` observed entries.
pub fn density(m: usize, n: usize, count: usize) -> f64 {
    if m == 0 || n == 0 {
        0.0
    } else {
        count as f64 / (m as f64 * n as f64)
    }
}

// ============================================================
// Errors
// ============================================================

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed line: {reason}")]
    MalformedLine { file: PathBuf, line: usize, reason: String },
    #[error("{file}:{line}: rating {rating} outside (0, {max_rating}] in dataset {dataset:?}")]
    RatingOutOfRange { file: PathBuf, line: usize, rating: f64, max_rating: f64, dataset: String },
    #[error("conflicting max_rating for dataset {dataset:?}: {first} vs {second}")]
    ConflictingMaxRating { dataset: String, first: f64, second: f64 },
    #[error("{kind} {raw_id:?} is aligned to more than one entity of dataset {dataset:?}")]
    DuplicateAlignment { kind: EntityKind, raw_id: String, dataset: String },
    #[error("duplicate dataset name {0:?}")]
    DuplicateDatasetName(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
}

// ============================================================
// Alignment classes
// ============================================================

/// Cross-dataset identity classes for users and items.
///
/// Every class is the transitive closure of the pair links read from the
/// alignment file; a class never holds two entities of the same dataset.
/// Class member lists are sorted by (dataset, index) and classes are sorted
/// by their first member, so all downstream iteration is deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlignmentMap {
    user_classes: Vec<Vec<EntityRef>>,
    item_classes: Vec<Vec<EntityRef>>,
    user_class_of: BTreeMap<(usize, usize), usize>,
    item_class_of: BTreeMap<(usize, usize), usize>,
}

impl AlignmentMap {
    pub fn classes(&self, kind: EntityKind) -> &[Vec<EntityRef>] {
        match kind {
            EntityKind::User => &self.user_classes,
            EntityKind::Item => &self.item_classes,
        }
    }

    pub fn class_of(&self, entity: EntityRef) -> Option<usize> {
        let key = (entity.dataset.0, entity.index);
        match entity.kind {
            EntityKind::User => self.user_class_of.get(&key).copied(),
            EntityKind::Item => self.item_class_of.get(&key).copied(),
        }
    }

    /// All unordered links, expanded from the classes (an entity aligned
    /// across three datasets yields three pairs).
    pub fn links(&self, kind: EntityKind) -> Vec<(EntityRef, EntityRef)> {
        let mut out = Vec::new();
        for class in self.classes(kind) {
            for i in 0..class.len() {
                for j in i + 1..class.len() {
                    out.push((class[i], class[j]));
                }
            }
        }
        out
    }

    fn common(&self, a: DatasetId, b: DatasetId, kind: EntityKind) -> (Vec<usize>, Vec<usize>) {
        let mut pairs = Vec::new();
        for class in self.classes(kind) {
            let in_a = class.iter().find(|e| e.dataset == a);
            let in_b = class.iter().find(|e| e.dataset == b);
            if let (Some(ea), Some(eb)) = (in_a, in_b) {
                pairs.push((ea.index, eb.index));
            }
        }
        pairs.sort_unstable();
        pairs.into_iter().unzip()
    }

    pub fn is_empty(&self) -> bool {
        self.user_classes.is_empty() && self.item_classes.is_empty()
    }
}

// ============================================================
// Corpus
// ============================================================

/// Immutable multi-dataset view: descriptors, interned ID tables,
/// interactions, tokenized documents, and alignment classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    datasets: Vec<DatasetDescriptor>,
    interactions: Vec<Vec<Interaction>>,
    user_raw_ids: Vec<Vec<String>>,
    item_raw_ids: Vec<Vec<String>>,
    user_docs: Vec<Vec<Vec<String>>>,
    item_docs: Vec<Vec<Vec<String>>>,
    alignments: AlignmentMap,
}

impl Corpus {
    pub fn n_datasets(&self) -> usize {
        self.datasets.len()
    }

    pub fn datasets(&self) -> &[DatasetDescriptor] {
        &self.datasets
    }

    pub fn dataset(&self, id: DatasetId) -> &DatasetDescriptor {
        &self.datasets[id.0]
    }

    pub fn dataset_by_name(&self, name: &str) -> Option<DatasetId> {
        self.datasets.iter().position(|d| d.name == name).map(DatasetId)
    }

    pub fn interactions(&self, id: DatasetId) -> &[Interaction] {
        &self.interactions[id.0]
    }

    pub fn user_raw_id(&self, id: DatasetId, index: usize) -> &str {
        &self.user_raw_ids[id.0][index]
    }

    pub fn item_raw_id(&self, id: DatasetId, index: usize) -> &str {
        &self.item_raw_ids[id.0][index]
    }

    pub fn user_index(&self, id: DatasetId, raw: &str) -> Option<usize> {
        self.user_raw_ids[id.0].binary_search_by(|probe| probe.as_str().cmp(raw)).ok()
    }

    pub fn item_index(&self, id: DatasetId, raw: &str) -> Option<usize> {
        self.item_raw_ids[id.0].binary_search_by(|probe| probe.as_str().cmp(raw)).ok()
    }

    pub fn user_doc(&self, id: DatasetId, index: usize) -> &[String] {
        &self.user_docs[id.0][index]
    }

    pub fn item_doc(&self, id: DatasetId, index: usize) -> &[String] {
        &self.item_docs[id.0][index]
    }

    pub fn alignments(&self) -> &AlignmentMap {
        &self.alignments
    }

    /// Index-aligned rows of the entities shared by datasets `a` and `b`,
    /// sorted by the dataset-`a` index.
    pub fn common_entities(
        &self,
        a: DatasetId,
        b: DatasetId,
        kind: EntityKind,
    ) -> (Vec<usize>, Vec<usize>) {
        assert_ne!(a, b, "common_entities needs two distinct datasets");
        self.alignments.common(a, b, kind)
    }

    pub fn interaction_matrix_stats(&self, id: DatasetId) -> MatrixStats {
        let d = &self.datasets[id.0];
        let count = self.interactions[id.0].len();
        MatrixStats { m: d.m, n: d.n, interaction_count: count, density: density(d.m, d.n, count) }
    }

    /// Largest rating actually observed in a dataset (0 if it has none).
    pub fn observed_max_rating(&self, id: DatasetId) -> f64 {
        self.interactions[id.0].iter().map(|x| x.rating).fold(0.0, f64::max)
    }

    /// Copy of this corpus with the listed interactions removed, keyed by
    /// (dataset index, seq). Universes, documents, and alignments are kept,
    /// so entity indices remain valid — this is how the training view is
    /// derived from an evaluation split.
    pub fn without_interactions(&self, drop: &HashSet<(usize, u64)>) -> Corpus {
        let mut out = self.clone();
        for (d, list) in out.interactions.iter_mut().enumerate() {
            list.retain(|x| !drop.contains(&(d, x.seq)));
        }
        out
    }
}

// ============================================================
// Loading
// ============================================================

/// Input files of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFiles {
    pub name: String,
    pub max_rating: f64,
    pub ratings: PathBuf,
    pub content: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Users with fewer interactions are dropped (repeatedly, to a fixpoint).
    pub min_interactions_per_user: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { min_interactions_per_user: 5 }
    }
}

/// Parse a dataset manifest: `key value` lines, `#` comments.
///
/// Keys are `dataset.<i>.name`, `dataset.<i>.ratings`, `dataset.<i>.content`
/// (optional), `dataset.<i>.max_rating`, and a single optional `alignment`.
/// Relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<(Vec<DatasetFiles>, Option<PathBuf>), CorpusError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let malformed = |line: usize, reason: &str| CorpusError::MalformedLine {
        file: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };

    #[derive(Default)]
    struct Partial {
        name: Option<String>,
        ratings: Option<PathBuf>,
        content: Option<PathBuf>,
        max_rating: Option<f64>,
    }
    let mut partials: BTreeMap<usize, Partial> = BTreeMap::new();
    let mut alignment: Option<PathBuf> = None;

    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = match line.split_once(char::is_whitespace) {
            Some((k, v)) => (k, v.trim()),
            None => return Err(malformed(line_no, "expected `key value`")),
        };
        if value.is_empty() {
            return Err(malformed(line_no, "empty value"));
        }
        if key == "alignment" {
            if alignment.is_some() {
                return Err(malformed(line_no, "duplicate alignment key"));
            }
            alignment = Some(dir.join(value));
            continue;
        }
        let mut parts = key.split('.');
        let (Some("dataset"), Some(idx), Some(field), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(malformed(line_no, "unknown key"));
        };
        let idx: usize =
            idx.parse().map_err(|_| malformed(line_no, "dataset index must be an integer"))?;
        let slot = partials.entry(idx).or_default();
        match field {
            "name" => {
                if slot.name.is_some() {
                    return Err(malformed(line_no, "duplicate name key"));
                }
                slot.name = Some(value.to_string());
            }
            "ratings" => {
                if slot.ratings.is_some() {
                    return Err(malformed(line_no, "duplicate ratings key"));
                }
                slot.ratings = Some(dir.join(value));
            }
            "content" => {
                if slot.content.is_some() {
                    return Err(malformed(line_no, "duplicate content key"));
                }
                slot.content = Some(dir.join(value));
            }
            "max_rating" => {
                let parsed: f64 = value
                    .parse()
                    .map_err(|_| malformed(line_no, "max_rating must be a number"))?;
                if let Some(prev) = slot.max_rating {
                    if prev != parsed {
                        return Err(CorpusError::ConflictingMaxRating {
                            dataset: slot.name.clone().unwrap_or_else(|| format!("#{idx}")),
                            first: prev,
                            second: parsed,
                        });
                    }
                } else {
                    if !(parsed.is_finite() && parsed > 0.0) {
                        return Err(malformed(line_no, "max_rating must be positive"));
                    }
                    slot.max_rating = Some(parsed);
                }
            }
            _ => return Err(malformed(line_no, "unknown dataset field")),
        }
    }

    if partials.is_empty() {
        return Err(malformed(0, "manifest declares no datasets"));
    }
    let mut datasets = Vec::with_capacity(partials.len());
    for (expect, (idx, p)) in partials.into_iter().enumerate() {
        if idx != expect {
            return Err(malformed(0, &format!("dataset indices not contiguous (missing {expect})")));
        }
        let name = p.name.ok_or_else(|| malformed(0, &format!("dataset.{idx}.name missing")))?;
        let ratings =
            p.ratings.ok_or_else(|| malformed(0, &format!("dataset.{idx}.ratings missing")))?;
        let max_rating = p
            .max_rating
            .ok_or_else(|| malformed(0, &format!("dataset.{idx}.max_rating missing")))?;
        datasets.push(DatasetFiles { name, max_rating, ratings, content: p.content });
    }
    Ok((datasets, alignment))
}

struct RawInteraction {
    user: String,
    item: String,
    rating: f64,
    timestamp: Option<i64>,
    seq: u64,
}

fn read_ratings(files: &DatasetFiles) -> Result<Vec<RawInteraction>, CorpusError> {
    let path = &files.ratings;
    let text =
        fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.clone(), source })?;
    let mut out = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(CorpusError::MalformedLine {
                file: path.clone(),
                line: line_no,
                reason: format!("expected 3 or 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let rating: f64 = fields[2].parse().map_err(|_| CorpusError::MalformedLine {
            file: path.clone(),
            line: line_no,
            reason: format!("unparseable rating {:?}", fields[2]),
        })?;
        if !rating.is_finite() || rating <= 0.0 || rating > files.max_rating {
            return Err(CorpusError::RatingOutOfRange {
                file: path.clone(),
                line: line_no,
                rating,
                max_rating: files.max_rating,
                dataset: files.name.clone(),
            });
        }
        let timestamp = match fields.get(3) {
            Some(f) => Some(f.parse::<i64>().map_err(|_| CorpusError::MalformedLine {
                file: path.clone(),
                line: line_no,
                reason: format!("unparseable timestamp {:?}", f),
            })?),
            None => None,
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(CorpusError::MalformedLine {
                file: path.clone(),
                line: line_no,
                reason: "empty entity id".to_string(),
            });
        }
        out.push(RawInteraction {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            rating,
            timestamp,
            seq: line_no as u64,
        });
    }
    Ok(out)
}

/// Build a corpus from per-dataset files plus an optional alignment file.
///
/// Duplicate (user, item) pairs keep their last occurrence. Users below the
/// interaction threshold are dropped; items are kept even if all their
/// interactions vanish, so item universes stay stable for alignment.
pub fn load_corpus(
    datasets: &[DatasetFiles],
    alignment: Option<&Path>,
    options: &LoadOptions,
) -> Result<Corpus, CorpusError> {
    let mut seen = HashSet::new();
    for d in datasets {
        if !seen.insert(d.name.as_str()) {
            return Err(CorpusError::DuplicateDatasetName(d.name.clone()));
        }
    }

    let mut descriptors = Vec::new();
    let mut all_interactions = Vec::new();
    let mut user_tables = Vec::new();
    let mut item_tables = Vec::new();
    let mut user_docs_all = Vec::new();
    let mut item_docs_all = Vec::new();

    for files in datasets {
        let raw = read_ratings(files)?;

        // Deduplicate (user, item), keeping the last occurrence in file order.
        let mut kept: HashMap<(String, String), RawInteraction> = HashMap::new();
        for r in raw {
            kept.insert((r.user.clone(), r.item.clone()), r);
        }
        let mut rows: Vec<RawInteraction> = kept.into_values().collect();
        rows.sort_unstable_by_key(|r| r.seq);

        // Drop under-active users until stable. (Interactions belong to a
        // single user, so this converges immediately, but the loop guards the
        // invariant rather than an argument about it.)
        loop {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for r in &rows {
                *counts.entry(r.user.as_str()).or_default() += 1;
            }
            let keep: HashSet<String> = counts
                .iter()
                .filter(|(_, &c)| c >= options.min_interactions_per_user)
                .map(|(&u, _)| u.to_string())
                .collect();
            if keep.len() == counts.len() {
                break;
            }
            rows.retain(|r| keep.contains(r.user.as_str()));
        }

        // Intern lexicographically. Items come from the full pre-filter file
        // so cold items survive; users only from surviving rows.
        let mut users: Vec<String> =
            rows.iter().map(|r| r.user.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        users.sort_unstable();
        let raw_again = read_ratings(files)?;
        let mut items: Vec<String> =
            raw_again.iter().map(|r| r.item.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        items.sort_unstable();

        let user_idx: HashMap<&str, usize> =
            users.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let item_idx: HashMap<&str, usize> =
            items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

        let dataset = DatasetId(descriptors.len());
        let interactions: Vec<Interaction> = rows
            .iter()
            .map(|r| Interaction {
                user: EntityRef { kind: EntityKind::User, dataset, index: user_idx[r.user.as_str()] },
                item: EntityRef { kind: EntityKind::Item, dataset, index: item_idx[r.item.as_str()] },
                rating: r.rating,
                timestamp: r.timestamp,
                seq: r.seq,
            })
            .collect();

        // Documents.
        let mut user_docs = vec![Vec::new(); users.len()];
        let mut item_docs = vec![Vec::new(); items.len()];
        if let Some(content_path) = &files.content {
            let text = fs::read_to_string(content_path)
                .map_err(|source| CorpusError::Io { path: content_path.clone(), source })?;
            for (line_no, raw_line) in text.lines().enumerate() {
                let line_no = line_no + 1;
                let line = raw_line.trim_end_matches('\r');
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let fields: Vec<&str> = line.splitn(3, '\t').collect();
                if fields.len() != 3 {
                    return Err(CorpusError::MalformedLine {
                        file: content_path.clone(),
                        line: line_no,
                        reason: "expected `kind<TAB>id<TAB>text`".to_string(),
                    });
                }
                let tokens = tokenize(fields[2]);
                match fields[0] {
                    "user" => match user_idx.get(fields[1]) {
                        Some(&i) => user_docs[i].extend(tokens),
                        None => log::warn!(
                            "{}:{line_no}: content for unknown user {:?} skipped",
                            content_path.display(),
                            fields[1]
                        ),
                    },
                    "item" => match item_idx.get(fields[1]) {
                        Some(&i) => item_docs[i].extend(tokens),
                        None => log::warn!(
                            "{}:{line_no}: content for unknown item {:?} skipped",
                            content_path.display(),
                            fields[1]
                        ),
                    },
                    other => {
                        return Err(CorpusError::MalformedLine {
                            file: content_path.clone(),
                            line: line_no,
                            reason: format!("unknown entity kind {other:?}"),
                        })
                    }
                }
            }
        }

        descriptors.push(DatasetDescriptor {
            name: files.name.clone(),
            max_rating: files.max_rating,
            m: users.len(),
            n: items.len(),
        });
        all_interactions.push(interactions);
        user_tables.push(users);
        item_tables.push(items);
        user_docs_all.push(user_docs);
        item_docs_all.push(item_docs);
    }

    let mut corpus = Corpus {
        datasets: descriptors,
        interactions: all_interactions,
        user_raw_ids: user_tables,
        item_raw_ids: item_tables,
        user_docs: user_docs_all,
        item_docs: item_docs_all,
        alignments: AlignmentMap::default(),
    };
    if let Some(path) = alignment {
        corpus.alignments = read_alignment(path, &corpus)?;
    }
    Ok(corpus)
}

// ------------------------------------------------------------
// Alignment parsing (union-find closure)
// ------------------------------------------------------------

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { parent: Vec::new() }
    }
    fn make(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.parent.len() - 1
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
            self.parent[rb] = ra;
        }
    }
}

fn read_alignment(path: &Path, corpus: &Corpus) -> Result<AlignmentMap, CorpusError> {
    let text =
        fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    let mut uf = UnionFind::new();
    let mut node_of: HashMap<EntityRef, usize> = HashMap::new();
    let mut entity_of_node: Vec<EntityRef> = Vec::new();

    for (line_no, raw_line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(CorpusError::MalformedLine {
                file: path.to_path_buf(),
                line: line_no,
                reason: "expected `kind<TAB>dataset_a<TAB>id_a<TAB>dataset_b<TAB>id_b`".to_string(),
            });
        }
        let kind = match fields[0] {
            "user" => EntityKind::User,
            "item" => EntityKind::Item,
            other => {
                return Err(CorpusError::MalformedLine {
                    file: path.to_path_buf(),
                    line: line_no,
                    reason: format!("unknown entity kind {other:?}"),
                })
            }
        };
        let da = corpus
            .dataset_by_name(fields[1])
            .ok_or_else(|| CorpusError::UnknownDataset(fields[1].to_string()))?;
        let db = corpus
            .dataset_by_name(fields[3])
            .ok_or_else(|| CorpusError::UnknownDataset(fields[3].to_string()))?;
        let resolve = |d: DatasetId, raw: &str| match kind {
            EntityKind::User => corpus.user_index(d, raw),
            EntityKind::Item => corpus.item_index(d, raw),
        };
        let (ia, ib) = match (resolve(da, fields[2]), resolve(db, fields[4])) {
            (Some(ia), Some(ib)) => (ia, ib),
            _ => {
                log::warn!(
                    "{}:{line_no}: alignment references an entity absent from the corpus, skipped",
                    path.display()
                );
                continue;
            }
        };
        let ea = EntityRef { kind, dataset: da, index: ia };
        let eb = EntityRef { kind, dataset: db, index: ib };
        if ea == eb {
            continue;
        }
        for e in [ea, eb] {
            node_of.entry(e).or_insert_with(|| {
                entity_of_node.push(e);
                uf.make()
            });
        }
        uf.union(node_of[&ea], node_of[&eb]);
    }

    // Group into classes and check the one-entity-per-dataset invariant.
    let mut by_root: BTreeMap<usize, Vec<EntityRef>> = BTreeMap::new();
    for (entity, &node) in &node_of {
        by_root.entry(uf.find(node)).or_default().push(*entity);
    }
    let mut user_classes = Vec::new();
    let mut item_classes = Vec::new();
    for (_, mut members) in by_root {
        members.sort_unstable();
        let mut seen_datasets = HashSet::new();
        for e in &members {
            if !seen_datasets.insert(e.dataset) {
                let raw_id = match e.kind {
                    EntityKind::User => corpus.user_raw_id(e.dataset, e.index),
                    EntityKind::Item => corpus.item_raw_id(e.dataset, e.index),
                };
                return Err(CorpusError::DuplicateAlignment {
                    kind: e.kind,
                    raw_id: raw_id.to_string(),
                    dataset: corpus.dataset(e.dataset).name.clone(),
                });
            }
        }
        match members[0].kind {
            EntityKind::User => user_classes.push(members),
            EntityKind::Item => item_classes.push(members),
        }
    }
    user_classes.sort_unstable();
    item_classes.sort_unstable();
    let user_class_of = user_classes
        .iter()
        .enumerate()
        .flat_map(|(c, class)| class.iter().map(move |e| ((e.dataset.0, e.index), c)))
        .collect();
    let item_class_of = item_classes
        .iter()
        .enumerate()
        .flat_map(|(c, class)| class.iter().map(move |e| ((e.dataset.0, e.index), c)))
        .collect();
    Ok(AlignmentMap { user_classes, item_classes, user_class_of, item_class_of })
}

// ============================================================
// Tests
// ============================================================
