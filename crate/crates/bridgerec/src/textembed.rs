//! Content-document embeddings.
//!
//! Turns the free-text documents attached to users and items into dense
//! vectors with a minimal PV-DBOW trainer: each document owns one vector
//! that is trained to predict words sampled from the document, against
//! negatives drawn from a unigram^0.75 table. Word vectors are trained as a
//! byproduct and discarded. The normalized cosine similarity of two document
//! vectors, (1 + cos)/2, is what the graph builder consumes, so it lands in
//! [0, 1] and can act as a sampling probability.
//!
//! Documents are embedded jointly per dataset (all user documents followed
//! by all item documents), then split back into the user and item matrices.
//! Entities without any document text keep a zero vector and are flagged so
//! the graph builder can skip them as similarity-edge endpoints.

use crate::corpus::{Corpus, DatasetId, EntityKind};
use crate::numerics::Tensor;
use crate::seeds;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextEmbedError {
    #[error("no usable tokens in any document")]
    EmptyVocabulary,
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

// ============================================================
// Tokenization
// ============================================================

/// Lowercase and split on anything that is not alphanumeric. Empty tokens
/// are dropped, so punctuation and repeated separators never produce tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

// ============================================================
// Vocabulary
// ============================================================

/// Token table with a unigram^0.75 negative-sampling distribution.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_ids: BTreeMap<String, usize>,
    freqs: Vec<u64>,
    /// Cumulative unigram^0.75 weights, for inverse-CDF sampling.
    cumulative: Vec<f64>,
}

impl Vocabulary {
    /// Count tokens over all documents; token ids are assigned in sorted
    /// token order. Returns None when no document has any token.
    pub fn from_docs<'a>(docs: impl Iterator<Item = &'a [String]>) -> Option<Vocabulary> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for doc in docs {
            for tok in doc {
                *counts.entry(tok.clone()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return None;
        }
        let mut token_ids = BTreeMap::new();
        let mut freqs = Vec::with_capacity(counts.len());
        for (i, (tok, freq)) in counts.into_iter().enumerate() {
            token_ids.insert(tok, i);
            freqs.push(freq);
        }
        let mut cumulative = Vec::with_capacity(freqs.len());
        let mut acc = 0.0;
        for &f in &freqs {
            acc += (f as f64).powf(0.75);
            cumulative.push(acc);
        }
        Some(Vocabulary { token_ids, freqs, cumulative })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_ids.get(token).copied()
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freqs[id]
    }

    /// Draw one token id with probability proportional to freq^0.75.
    pub fn sample_negative(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let x: f64 = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= x).min(self.len() - 1)
    }
}

// ============================================================
// Content embeddings
// ============================================================

/// Document vectors for one dataset: `uc` (m x k) for users, `vc` (n x k)
/// for items. Rows of entities without documents are zero and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentEmbeddings {
    pub uc: Tensor,
    pub vc: Tensor,
    pub user_has_doc: Vec<bool>,
    pub item_has_doc: Vec<bool>,
}

impl ContentEmbeddings {
    pub fn k_text(&self) -> usize {
        self.uc.cols()
    }

    pub fn user_vec(&self, i: usize) -> &[f64] {
        self.uc.row(i)
    }

    pub fn item_vec(&self, j: usize) -> &[f64] {
        self.vc.row(j)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PvDbowConfig {
    pub k_text: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PvDbowConfig {
    fn default() -> Self {
        PvDbowConfig { k_text: 128, epochs: 20, negatives: 5, lr: 0.025, seed: 0 }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Train document vectors for every user and item of one dataset.
pub fn train_pvdbow(
    corpus: &Corpus,
    dataset: DatasetId,
    config: &PvDbowConfig,
) -> Result<ContentEmbeddings, TextEmbedError> {
    train_pvdbow_with_trace(corpus, dataset, config).map(|(emb, _)| emb)
}

/// As [`train_pvdbow`], additionally returning the mean per-positive loss of
/// each epoch (used to monitor convergence).
pub fn train_pvdbow_with_trace(
    corpus: &Corpus,
    dataset: DatasetId,
    config: &PvDbowConfig,
) -> Result<(ContentEmbeddings, Vec<f64>), TextEmbedError> {
    let d = corpus.dataset(dataset);
    let (m, n, k) = (d.m, d.n, config.k_text);
    assert!(k > 0, "embedding dimension must be positive");

    // One joint document list: users first, then items.
    let docs: Vec<&[String]> = (0..m)
        .map(|i| corpus.user_doc(dataset, i))
        .chain((0..n).map(|j| corpus.item_doc(dataset, j)))
        .collect();
    let vocab =
        Vocabulary::from_docs(docs.iter().copied()).ok_or(TextEmbedError::EmptyVocabulary)?;

    // Tokens as ids, per document, plus the flat (doc, position) pair list.
    let doc_ids: Vec<Vec<usize>> = docs
        .iter()
        .map(|doc| doc.iter().map(|t| vocab.id_of(t).expect("token in vocab")).collect())
        .collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (di, doc) in doc_ids.iter().enumerate() {
        for pos in 0..doc.len() {
            pairs.push((di, pos));
        }
    }

    // Document vectors start small and random (empty documents stay zero);
    // word output vectors start at zero.
    let mut init_rng = seeds::stream(config.seed, "pvdbow-init", &[dataset.0 as u64]);
    let mut doc_vecs = Tensor::zeros(docs.len(), k);
    let half = 0.5 / k as f64;
    for (di, doc) in doc_ids.iter().enumerate() {
        if doc.is_empty() {
            continue;
        }
        for c in 0..k {
            doc_vecs.set(di, c, init_rng.random_range(-half..half));
        }
    }
    let mut word_vecs = Tensor::zeros(vocab.len(), k);

    let total_steps = (config.epochs * pairs.len()).max(1) as f64;
    let mut step = 0u64;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut shuffle_rng =
            seeds::stream(config.seed, "pvdbow-shuffle", &[dataset.0 as u64, epoch as u64]);
        let mut order = pairs.clone();
        order.shuffle(&mut shuffle_rng);
        let mut neg_rng =
            seeds::stream(config.seed, "pvdbow-neg", &[dataset.0 as u64, epoch as u64]);

        let mut loss_sum = 0.0;
        for &(di, pos) in &order {
            let lr = config.lr * (1.0 - step as f64 / total_steps).max(0.01);
            step += 1;
            let target = doc_ids[di][pos];
            let mut doc_delta = vec![0.0; k];
            let mut loss = 0.0;
            for sample in 0..=config.negatives {
                let (word, label) = if sample == 0 {
                    (target, 1.0)
                } else {
                    let w = vocab.sample_negative(&mut neg_rng);
                    if w == target {
                        continue;
                    }
                    (w, 0.0)
                };
                let f: f64 =
                    doc_vecs.row(di).iter().zip(word_vecs.row(word)).map(|(a, b)| a * b).sum();
                let p = sigmoid(f);
                loss -= if label == 1.0 { p.max(1e-12).ln() } else { (1.0 - p).max(1e-12).ln() };
                let g = (label - p) * lr;
                for c in 0..k {
                    doc_delta[c] += g * word_vecs.get(word, c);
                }
                for c in 0..k {
                    let cur = word_vecs.get(word, c);
                    word_vecs.set(word, c, cur + g * doc_vecs.get(di, c));
                }
            }
            for c in 0..k {
                let cur = doc_vecs.get(di, c);
                doc_vecs.set(di, c, cur + doc_delta[c]);
            }
            loss_sum += loss;
        }
        epoch_losses.push(loss_sum / order.len().max(1) as f64);
    }

    debug_assert!(doc_vecs.all_finite());
    let mut uc = Tensor::zeros(m, k);
    let mut vc = Tensor::zeros(n, k);
    for i in 0..m {
        uc.row_mut(i).copy_from_slice(doc_vecs.row(i));
    }
    for j in 0..n {
        vc.row_mut(j).copy_from_slice(doc_vecs.row(m + j));
    }
    let user_has_doc: Vec<bool> = (0..m).map(|i| !doc_ids[i].is_empty()).collect();
    let item_has_doc: Vec<bool> = (0..n).map(|j| !doc_ids[m + j].is_empty()).collect();
    Ok((ContentEmbeddings { uc, vc, user_has_doc, item_has_doc }, epoch_losses))
}

// ============================================================
// Similarity
// ============================================================

/// Cosine similarity mapped affinely into [0, 1]: (1 + cos)/2. Either
/// operand being the zero vector yields 0.
pub fn normalized_sim(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "similarity operands must have equal length");
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    let cos = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / (nx * ny);
    (1.0 + cos.clamp(-1.0, 1.0)) / 2.0
}

// ============================================================
// Vector files
// ============================================================

/// Write embeddings as `kind<TAB>raw_id<TAB>c1 c2 ... ck` lines. Components
/// are formatted with the shortest representation that round-trips exactly,
/// so a save/load cycle is bit-identical.
pub fn save_vectors(
    path: &Path,
    corpus: &Corpus,
    dataset: DatasetId,
    emb: &ContentEmbeddings,
) -> Result<(), TextEmbedError> {
    let d = corpus.dataset(dataset);
    let mut out = String::new();
    for i in 0..d.m {
        let comps: Vec<String> = emb.uc.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("user\t{}\t{}\n", corpus.user_raw_id(dataset, i), comps.join(" ")));
    }
    for j in 0..d.n {
        let comps: Vec<String> = emb.vc.row(j).iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("item\t{}\t{}\n", corpus.item_raw_id(dataset, j), comps.join(" ")));
    }
    fs::write(path, out).map_err(|source| TextEmbedError::Io { path: path.to_path_buf(), source })
}

/// Load a vector file as a drop-in replacement for [`train_pvdbow`] output.
/// Entities absent from the file keep zero vectors and are flagged as
/// documentless; lines for unknown entities are skipped with a warning.
pub fn load_vectors(
    path: &Path,
    corpus: &Corpus,
    dataset: DatasetId,
) -> Result<ContentEmbeddings, TextEmbedError> {
    let text =
        fs::read_to_string(path).map_err(|source| TextEmbedError::Io { path: path.to_path_buf(), source })?;
    let d = corpus.dataset(dataset);
    let mut k: Option<usize> = None;
    let mut rows: Vec<(EntityKind, usize, Vec<f64>)> = Vec::new();
    for (line_no, raw_line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() != 3 {
            return Err(TextEmbedError::MalformedLine {
                file: path.to_path_buf(),
                line: line_no,
                reason: "expected `kind<TAB>id<TAB>components`".to_string(),
            });
        }
        let kind = match fields[0] {
            "user" => EntityKind::User,
            "item" => EntityKind::Item,
            other => {
                return Err(TextEmbedError::MalformedLine {
                    file: path.to_path_buf(),
                    line: line_no,
                    reason: format!("unknown entity kind {other:?}"),
                })
            }
        };
        let comps: Result<Vec<f64>, _> =
            fields[2].split_whitespace().map(|c| c.parse::<f64>()).collect();
        let comps = comps.map_err(|_| TextEmbedError::MalformedLine {
            file: path.to_path_buf(),
            line: line_no,
            reason: "unparseable vector component".to_string(),
        })?;
        match k {
            None => k = Some(comps.len()),
            Some(expected) if comps.len() != expected => {
                return Err(TextEmbedError::DimensionMismatch {
                    file: path.to_path_buf(),
                    line: line_no,
                    got: comps.len(),
                    expected,
                })
            }
            _ => {}
        }
        let index = match kind {
            EntityKind::User => corpus.user_index(dataset, fields[1]),
            EntityKind::Item => corpus.item_index(dataset, fields[1]),
        };
        match index {
            Some(i) => rows.push((kind, i, comps)),
            None => log::warn!(
                "{}:{line_no}: vector for unknown {} {:?} skipped",
                path.display(),
                fields[0],
                fields[1]
            ),
        }
    }
    let k = k.ok_or(TextEmbedError::EmptyVocabulary)?;
    let mut uc = Tensor::zeros(d.m, k);
    let mut vc = Tensor::zeros(d.n, k);
    let mut user_has_doc = vec![false; d.m];
    let mut item_has_doc = vec![false; d.n];
    for (kind, i, comps) in rows {
        match kind {
            EntityKind::User => {
                uc.row_mut(i).copy_from_slice(&comps);
                user_has_doc[i] = true;
            }
            EntityKind::Item => {
                vc.row_mut(i).copy_from_slice(&comps);
                item_has_doc[i] = true;
            }
        }
    }
    Ok(ContentEmbeddings { uc, vc, user_has_doc, item_has_doc })
}

// ============================================================
// Tests
// ============================================================
