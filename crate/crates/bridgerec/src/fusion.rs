//! Element-wise attention fusion of common-entity embeddings.
//!
//! Entities shared between datasets carry one embedding per dataset. For a
//! target dataset x, the fused embedding is a per-dimension convex
//! combination of the sources: Ũ^x = Σ_y W^{xy} ⊙ U^y, where the weight
//! vectors satisfy Σ_y W^{xy}[d] = 1 for every dimension d. The constraint
//! is enforced by construction — W is the column-wise softmax of free logit
//! vectors Φ^{xy} — so training can treat Φ as unconstrained.
//!
//! One Φ^{xy} exists per (kind, target, source) dataset pair and is shared
//! by every sharing group containing that pair; the softmax normalization
//! runs over each group's own member set. Average-pooling mode replaces the
//! softmax with fixed uniform weights 1/g and keeps Φ out of training
//! entirely. With zero-initialized logits the softmax yields exactly 1/g,
//! so attention starts bitwise-equal to the average-pooling baseline.

use crate::corpus::{Corpus, DatasetId, EntityKind};
use crate::numerics::Tensor;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("embedding dimension mismatch: expected {expected}, got {got} for dataset {dataset}")]
    DimMismatch { expected: usize, got: usize, dataset: usize },
    #[error("common {kind} index {index} of dataset {dataset} has no fused row")]
    CoverageGap { kind: EntityKind, dataset: usize, index: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Attention,
    Average,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::Attention => write!(f, "attention"),
            FusionMode::Average => write!(f, "average"),
        }
    }
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "attention" => Ok(FusionMode::Attention),
            "average" => Ok(FusionMode::Average),
            other => Err(format!("unknown fusion mode {other:?} (attention|average)")),
        }
    }
}

// ============================================================
// Sharing groups
// ============================================================

/// A set of alignment classes that span the same datasets: `members` lists
/// the datasets (ascending), `rows[p][c]` is the entity index of class `c`
/// in member `p`. All row lists have equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct SharingGroup {
    pub kind: EntityKind,
    pub members: Vec<DatasetId>,
    pub rows: Vec<Vec<usize>>,
}

impl SharingGroup {
    pub fn len(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn member_position(&self, dataset: DatasetId) -> Option<usize> {
        self.members.iter().position(|&d| d == dataset)
    }
}

/// Bucket the corpus's alignment classes by (kind, spanned dataset set).
/// Groups are ordered users-then-items, then by member set; within a group,
/// classes keep the alignment map's deterministic order.
pub fn sharing_groups(corpus: &Corpus) -> Vec<SharingGroup> {
    let mut out = Vec::new();
    for kind in [EntityKind::User, EntityKind::Item] {
        let mut buckets: BTreeMap<Vec<DatasetId>, Vec<Vec<usize>>> = BTreeMap::new();
        for class in corpus.alignments().classes(kind) {
            let members: Vec<DatasetId> = class.iter().map(|e| e.dataset).collect();
            // class members are sorted by dataset already
            let slot = buckets
                .entry(members.clone())
                .or_insert_with(|| vec![Vec::new(); class.len()]);
            for (p, e) in class.iter().enumerate() {
                slot[p].push(e.index);
            }
        }
        for (members, rows) in buckets {
            out.push(SharingGroup { kind, members, rows });
        }
    }
    out
}

// ============================================================
// Attention parameters
// ============================================================

/// Name of a logit tensor in the parameter store.
pub fn phi_name(kind: EntityKind, target: DatasetId, source: DatasetId) -> String {
    format!("phi.{kind}.{}.{}", target.0, source.0)
}

/// All (kind, target, source) pairs required by the given groups, sorted.
pub fn phi_pairs(groups: &[SharingGroup]) -> Vec<(EntityKind, DatasetId, DatasetId)> {
    let mut set = BTreeSet::new();
    for g in groups {
        for &x in &g.members {
            for &y in &g.members {
                set.insert((g.kind, x, y));
            }
        }
    }
    set.into_iter().collect()
}

/// Fusion weights as free logits per (kind, target, source) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub mode: FusionMode,
    pub k: usize,
    logits: BTreeMap<(EntityKind, DatasetId, DatasetId), Vec<f64>>,
}

impl AttentionParams {
    /// Zero logits for every pair the groups need (uniform initial weights).
    pub fn init(groups: &[SharingGroup], k: usize, mode: FusionMode) -> Self {
        let mut logits = BTreeMap::new();
        if mode == FusionMode::Attention {
            for pair in phi_pairs(groups) {
                logits.insert(pair, vec![0.0; k]);
            }
        }
        AttentionParams { mode, k, logits }
    }

    pub fn logit(&self, kind: EntityKind, target: DatasetId, source: DatasetId) -> Option<&[f64]> {
        self.logits.get(&(kind, target, source)).map(Vec::as_slice)
    }

    pub fn set_logit(
        &mut self,
        kind: EntityKind,
        target: DatasetId,
        source: DatasetId,
        values: Vec<f64>,
    ) {
        assert_eq!(values.len(), self.k);
        self.logits.insert((kind, target, source), values);
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(EntityKind, DatasetId, DatasetId), &Vec<f64>)> {
        self.logits.iter()
    }

    /// Copy every logit into the store as a 1 x k tensor under
    /// [`phi_name`] keys. Average mode holds no logits and stores nothing.
    pub fn insert_into(&self, store: &mut crate::numerics::ParamStore) {
        for (&(kind, target, source), values) in &self.logits {
            store.insert(
                &phi_name(kind, target, source),
                Tensor::row_vector(values.clone()),
            );
        }
    }

    /// Rebuild logits from a store populated by [`insert_into`]. Average
    /// mode ignores the store entirely.
    pub fn read_from(
        store: &crate::numerics::ParamStore,
        groups: &[SharingGroup],
        k: usize,
        mode: FusionMode,
    ) -> Self {
        let mut params = AttentionParams::init(groups, k, mode);
        if mode == FusionMode::Attention {
            for (kind, target, source) in phi_pairs(groups) {
                let name = phi_name(kind, target, source);
                let logits = store.get(&name).expect("store covers all fusion pairs");
                params.set_logit(kind, target, source, logits.data().to_vec());
            }
        }
        params
    }

    /// Per-member weight rows for one group and target: a g x k matrix whose
    /// columns each sum to 1. Attention mode softmaxes the group's logits
    /// per dimension; average mode is uniform 1/g.
    pub fn weights(&self, group: &SharingGroup, target: DatasetId) -> Tensor {
        let g = group.members.len();
        assert!(group.member_position(target).is_some(), "target not in group");
        let mut w = Tensor::zeros(g, self.k);
        match self.mode {
            FusionMode::Average => {
                let uniform = 1.0 / g as f64;
                for y in 0..g {
                    for d in 0..self.k {
                        w.set(y, d, uniform);
                    }
                }
            }
            FusionMode::Attention => {
                let rows: Vec<&[f64]> = group
                    .members
                    .iter()
                    .map(|&src| {
                        self.logit(group.kind, target, src).expect("logits cover group pairs")
                    })
                    .collect();
                for d in 0..self.k {
                    let mut max = f64::NEG_INFINITY;
                    for row in &rows {
                        max = max.max(row[d]);
                    }
                    let mut sum = 0.0;
                    for (y, row) in rows.iter().enumerate() {
                        let e = (row[d] - max).exp();
                        w.set(y, d, e);
                        sum += e;
                    }
                    for y in 0..g {
                        w.set(y, d, w.get(y, d) / sum);
                    }
                }
            }
        }
        w
    }
}

// ============================================================
// Fusion
// ============================================================

/// Weighted per-dimension combination with explicit weight rows (one 1 x k
/// row per member, in member order). Shared by both fusion modes, so their
/// summation order is identical.
pub fn fuse_with_weights(
    group: &SharingGroup,
    weights: &Tensor,
    mats: &[Tensor],
    target: DatasetId,
) -> Result<Tensor, FusionError> {
    let k = mats[target.0].cols();
    assert_eq!(weights.rows(), group.members.len(), "one weight row per member");
    assert_eq!(weights.cols(), k, "weight width");
    for &m in &group.members {
        if mats[m.0].cols() != k {
            return Err(FusionError::DimMismatch { expected: k, got: mats[m.0].cols(), dataset: m.0 });
        }
    }
    let mut out = Tensor::zeros(group.len(), k);
    for (p, &member) in group.members.iter().enumerate() {
        let w = weights.row(p);
        let src = &mats[member.0];
        for (c, &row) in group.rows[p].iter().enumerate() {
            let dst = out.row_mut(c);
            let src_row = src.row(row);
            for d in 0..k {
                dst[d] += w[d] * src_row[d];
            }
        }
    }
    Ok(out)
}

/// Fused user rows Ũ^target for one sharing group: Σ_y W^{target,y} ⊙ U^y,
/// row-aligned with the group's class order.
pub fn fuse_users(
    group: &SharingGroup,
    params: &AttentionParams,
    u_mats: &[Tensor],
    target: DatasetId,
) -> Result<Tensor, FusionError> {
    assert_eq!(group.kind, EntityKind::User, "user group expected");
    let w = params.weights(group, target);
    fuse_with_weights(group, &w, u_mats, target)
}

/// Fused item rows Ṽ^target; mirror of [`fuse_users`] over V matrices.
pub fn fuse_items(
    group: &SharingGroup,
    params: &AttentionParams,
    v_mats: &[Tensor],
    target: DatasetId,
) -> Result<Tensor, FusionError> {
    assert_eq!(group.kind, EntityKind::Item, "item group expected");
    let w = params.weights(group, target);
    fuse_with_weights(group, &w, v_mats, target)
}

/// Build the scorer input matrices of one dataset: fused rows for common
/// entities, raw base rows for distinct ones.
pub fn assemble_inputs(
    corpus: &Corpus,
    dataset: DatasetId,
    fused_users: &[(&SharingGroup, Tensor)],
    fused_items: &[(&SharingGroup, Tensor)],
    base_u: &Tensor,
    base_v: &Tensor,
) -> Result<(Tensor, Tensor), FusionError> {
    let mut p_in = base_u.clone();
    let mut q_in = base_v.clone();
    let mut covered_users = BTreeSet::new();
    let mut covered_items = BTreeSet::new();
    for (group, fused) in fused_users.iter().chain(fused_items) {
        let Some(pos) = group.member_position(dataset) else { continue };
        assert_eq!(fused.rows(), group.len(), "fused rows align with group classes");
        let (target_mat, covered) = match group.kind {
            EntityKind::User => (&mut p_in, &mut covered_users),
            EntityKind::Item => (&mut q_in, &mut covered_items),
        };
        for (c, &row) in group.rows[pos].iter().enumerate() {
            target_mat.row_mut(row).copy_from_slice(fused.row(c));
            covered.insert(row);
        }
    }
    // every aligned entity of this dataset must have been fused
    for kind in [EntityKind::User, EntityKind::Item] {
        let covered = match kind {
            EntityKind::User => &covered_users,
            EntityKind::Item => &covered_items,
        };
        for class in corpus.alignments().classes(kind) {
            for e in class {
                if e.dataset == dataset && !covered.contains(&e.index) {
                    return Err(FusionError::CoverageGap {
                        kind,
                        dataset: dataset.0,
                        index: e.index,
                    });
                }
            }
        }
    }
    Ok((p_in, q_in))
}

/// Dump post-softmax weights, one line per (group, target, source):
/// `kind<TAB>target<TAB>source<TAB>w1 ... wk`.
pub fn save_attention(
    path: &Path,
    groups: &[SharingGroup],
    params: &AttentionParams,
) -> Result<(), FusionError> {
    let mut out = String::new();
    for (gi, group) in groups.iter().enumerate() {
        out.push_str(&format!("#group\t{gi}\n"));
        for &target in &group.members {
            let w = params.weights(group, target);
            for (p, &source) in group.members.iter().enumerate() {
                let comps: Vec<String> = w.row(p).iter().map(|v| format!("{v}")).collect();
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    group.kind,
                    target.0,
                    source.0,
                    comps.join(" ")
                ));
            }
        }
    }
    fs::write(path, out).map_err(|source| FusionError::Io { path: path.to_path_buf(), source })
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, DatasetFiles, LoadOptions};
    use proptest::prelude::*;
    use std::io::Write as _;
    use tempfile::TempDir;

    fn group2(n_classes: usize) -> SharingGroup {
        SharingGroup {
            kind: EntityKind::User,
            members: vec![DatasetId(0), DatasetId(1)],
            rows: vec![(0..n_classes).collect(), (0..n_classes).collect()],
        }
    }

    #[test]
    fn asymmetric_weights_mix_per_dimension() {
        let group = group2(1);
        let w = Tensor::from_rows(&[vec![0.3, 0.7], vec![0.7, 0.3]]);
        let mats = vec![
            Tensor::from_rows(&[vec![1.0, 2.0]]),
            Tensor::from_rows(&[vec![3.0, 4.0]]),
        ];
        let fused = fuse_with_weights(&group, &w, &mats, DatasetId(0)).unwrap();
        assert!((fused.get(0, 0) - 2.4).abs() < 1e-12);
        assert!((fused.get(0, 1) - 2.6).abs() < 1e-12);
    }

    #[test]
    fn degenerate_one_hot_weights_are_identity() {
        let group = group2(1);
        let w = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]);
        let mats = vec![
            Tensor::from_rows(&[vec![5.0, -1.0]]),
            Tensor::from_rows(&[vec![100.0, 100.0]]),
        ];
        let fused = fuse_with_weights(&group, &w, &mats, DatasetId(0)).unwrap();
        assert_eq!(fused.row(0), mats[0].row(0));
    }

    #[test]
    fn equal_logits_match_average_mode_bitwise() {
        let group = group2(3);
        let mats = vec![
            Tensor::from_rows(&[
                vec![0.1, -0.7, 0.33],
                vec![1.5, 2.5, -3.5],
                vec![0.0, 0.25, 0.125],
            ]),
            Tensor::from_rows(&[
                vec![-0.9, 0.2, 0.11],
                vec![2.5, -1.5, 0.5],
                vec![1.0, 0.75, -0.125],
            ]),
        ];
        let attention = AttentionParams::init(&[group.clone()], 3, FusionMode::Attention);
        let average = AttentionParams::init(&[group.clone()], 3, FusionMode::Average);
        for target in [DatasetId(0), DatasetId(1)] {
            let a = fuse_users(&group, &attention, &mats, target).unwrap();
            let b = fuse_users(&group, &average, &mats, target).unwrap();
            assert_eq!(a, b, "attention at zero logits must equal average pooling");
        }
    }

    #[test]
    fn softmax_of_log_weights_recovers_them() {
        let group = group2(1);
        let mut params = AttentionParams::init(&[group.clone()], 2, FusionMode::Attention);
        params.set_logit(
            EntityKind::User,
            DatasetId(0),
            DatasetId(0),
            vec![0.3f64.ln(), 0.7f64.ln()],
        );
        params.set_logit(
            EntityKind::User,
            DatasetId(0),
            DatasetId(1),
            vec![0.7f64.ln(), 0.3f64.ln()],
        );
        let mats = vec![
            Tensor::from_rows(&[vec![1.0, 2.0]]),
            Tensor::from_rows(&[vec![3.0, 4.0]]),
        ];
        let fused = fuse_users(&group, &params, &mats, DatasetId(0)).unwrap();
        assert!((fused.get(0, 0) - 2.4).abs() < 1e-9, "{}", fused.get(0, 0));
        assert!((fused.get(0, 1) - 2.6).abs() < 1e-9, "{}", fused.get(0, 1));
    }

    #[test]
    fn dim_mismatch_is_detected() {
        let group = group2(1);
        let params = AttentionParams::init(&[group.clone()], 2, FusionMode::Average);
        let mats = vec![
            Tensor::from_rows(&[vec![1.0, 2.0]]),
            Tensor::from_rows(&[vec![3.0, 4.0, 5.0]]),
        ];
        let err = fuse_users(&group, &params, &mats, DatasetId(0)).unwrap_err();
        assert!(matches!(err, FusionError::DimMismatch { .. }));
    }

    proptest! {
        #[test]
        fn attention_weights_form_a_simplex(
            logits in proptest::collection::vec(-8.0f64..8.0, 6),
        ) {
            let group = SharingGroup {
                kind: EntityKind::User,
                members: vec![DatasetId(0), DatasetId(1), DatasetId(2)],
                rows: vec![vec![0], vec![0], vec![0]],
            };
            let mut params = AttentionParams::init(&[group.clone()], 2, FusionMode::Attention);
            for (i, src) in [0usize, 1, 2].iter().enumerate() {
                params.set_logit(
                    EntityKind::User,
                    DatasetId(0),
                    DatasetId(*src),
                    logits[i * 2..i * 2 + 2].to_vec(),
                );
            }
            let w = params.weights(&group, DatasetId(0));
            for d in 0..2 {
                let col: f64 = (0..3).map(|y| w.get(y, d)).sum();
                prop_assert!((col - 1.0).abs() < 1e-9);
                for y in 0..3 {
                    let v = w.get(y, d);
                    prop_assert!(v > 0.0 && v < 1.0);
                }
            }
        }

        #[test]
        fn fused_coordinates_stay_convex_and_idempotent(
            logits in proptest::collection::vec(-6.0f64..6.0, 4),
            a in proptest::collection::vec(-5.0f64..5.0, 2),
            b in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            let group = group2(1);
            let mut params = AttentionParams::init(&[group.clone()], 2, FusionMode::Attention);
            params.set_logit(EntityKind::User, DatasetId(0), DatasetId(0), logits[0..2].to_vec());
            params.set_logit(EntityKind::User, DatasetId(0), DatasetId(1), logits[2..4].to_vec());
            let mats = vec![
                Tensor::from_rows(&[a.clone()]),
                Tensor::from_rows(&[b.clone()]),
            ];
            let fused = fuse_users(&group, &params, &mats, DatasetId(0)).unwrap();
            for d in 0..2 {
                let (lo, hi) = (a[d].min(b[d]), a[d].max(b[d]));
                prop_assert!(fused.get(0, d) >= lo - 1e-9 && fused.get(0, d) <= hi + 1e-9);
            }
            // identical sources fuse to themselves for any weights
            let same = vec![
                Tensor::from_rows(&[a.clone()]),
                Tensor::from_rows(&[a.clone()]),
            ];
            let fused = fuse_users(&group, &params, &same, DatasetId(0)).unwrap();
            for d in 0..2 {
                prop_assert!((fused.get(0, d) - a[d]).abs() < 1e-9);
            }
        }
    }

    fn three_dataset_corpus() -> (TempDir, Corpus) {
        let dir = TempDir::new().unwrap();
        let mk = |name: &str, users: &[&str]| -> PathBuf {
            let path = dir.path().join(format!("{name}.tsv"));
            let mut text = String::new();
            for u in users {
                text.push_str(&format!("{u}\ti1\t4.0\n{u}\ti2\t2.0\n"));
            }
            fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
            path
        };
        let a = mk("a", &["u1", "u2", "u3"]);
        let b = mk("b", &["w1", "w2", "w3"]);
        let c = mk("c", &["x1", "x2"]);
        // u1~w1~x1 spans all three; u2~w2 spans two.
        let align = dir.path().join("align.tsv");
        fs::write(
            &align,
            "user\tA\tu1\tB\tw1\nuser\tB\tw1\tC\tx1\nuser\tA\tu2\tB\tw2\n",
        )
        .unwrap();
        let files = vec![
            DatasetFiles { name: "A".into(), max_rating: 5.0, ratings: a, content: None },
            DatasetFiles { name: "B".into(), max_rating: 5.0, ratings: b, content: None },
            DatasetFiles { name: "C".into(), max_rating: 5.0, ratings: c, content: None },
        ];
        let corpus =
            load_corpus(&files, Some(&align), &LoadOptions { min_interactions_per_user: 1 }).unwrap();
        (dir, corpus)
    }

    #[test]
    fn groups_bucket_classes_by_spanned_datasets() {
        let (_dir, corpus) = three_dataset_corpus();
        let groups = sharing_groups(&corpus);
        assert_eq!(groups.len(), 2);
        // both are user groups; ordering is by member list
        let pair = &groups[0];
        assert_eq!(pair.members, vec![DatasetId(0), DatasetId(1)]);
        assert_eq!(pair.len(), 1);
        let triple = &groups[1];
        assert_eq!(triple.members, vec![DatasetId(0), DatasetId(1), DatasetId(2)]);
        assert_eq!(triple.len(), 1);
        // logit pairs cover the union: 2x2 from the pair group plus 3x3
        let pairs = phi_pairs(&groups);
        assert_eq!(pairs.len(), 9); // (0,1,2)x(0,1,2) — pair group's 2x2 is a subset
    }

    #[test]
    fn assemble_overwrites_common_rows_only() {
        let (_dir, corpus) = three_dataset_corpus();
        let groups = sharing_groups(&corpus);
        let params = AttentionParams::init(&groups, 2, FusionMode::Average);
        // base matrices: distinct values per row
        let mats: Vec<Tensor> = (0..3)
            .map(|d| {
                let m = corpus.dataset(DatasetId(d)).m;
                Tensor::from_vec(m, 2, (0..2 * m).map(|x| (d * 100 + x) as f64).collect())
            })
            .collect();
        let fused: Vec<(&SharingGroup, Tensor)> = groups
            .iter()
            .map(|g| (g, fuse_users(g, &params, &mats, DatasetId(0)).unwrap()))
            .filter(|(g, _)| g.member_position(DatasetId(0)).is_some())
            .collect();
        let base_v = Tensor::zeros(corpus.dataset(DatasetId(0)).n, 2);
        let (p_in, q_in) =
            assemble_inputs(&corpus, DatasetId(0), &fused, &[], &mats[0], &base_v).unwrap();
        assert_eq!(q_in, base_v);
        // u3 (index 2) is distinct → row untouched
        assert_eq!(p_in.row(2), mats[0].row(2));
        // u1 (index 0) is in the triple group → average of three rows
        let expect: Vec<f64> = (0..2)
            .map(|d| (mats[0].get(0, d) + mats[1].get(0, d) + mats[2].get(0, d)) / 3.0)
            .collect();
        for d in 0..2 {
            assert!((p_in.get(0, d) - expect[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn no_common_entities_passes_base_through() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("r.tsv");
        fs::write(&path, "u1\ti1\t3.0\n").unwrap();
        let files =
            vec![DatasetFiles { name: "d".into(), max_rating: 5.0, ratings: path, content: None }];
        let corpus =
            load_corpus(&files, None, &LoadOptions { min_interactions_per_user: 1 }).unwrap();
        let base_u = Tensor::from_rows(&[vec![1.0, 2.0]]);
        let base_v = Tensor::from_rows(&[vec![3.0, 4.0]]);
        let (p_in, q_in) =
            assemble_inputs(&corpus, DatasetId(0), &[], &[], &base_u, &base_v).unwrap();
        assert_eq!(p_in, base_u);
        assert_eq!(q_in, base_v);
    }

    #[test]
    fn missing_fused_rows_are_a_coverage_gap() {
        let (_dir, corpus) = three_dataset_corpus();
        let base_u = Tensor::zeros(corpus.dataset(DatasetId(0)).m, 2);
        let base_v = Tensor::zeros(corpus.dataset(DatasetId(0)).n, 2);
        let err =
            assemble_inputs(&corpus, DatasetId(0), &[], &[], &base_u, &base_v).unwrap_err();
        assert!(matches!(err, FusionError::CoverageGap { kind: EntityKind::User, .. }));
    }

    #[test]
    fn store_round_trip_preserves_logits() {
        let group = group2(1);
        let mut params = AttentionParams::init(&[group.clone()], 2, FusionMode::Attention);
        params.set_logit(EntityKind::User, DatasetId(0), DatasetId(1), vec![0.5, -1.25]);
        let mut store = crate::numerics::ParamStore::new();
        params.insert_into(&mut store);
        assert_eq!(store.len(), 4);
        let back = AttentionParams::read_from(&store, &[group], 2, FusionMode::Attention);
        assert_eq!(params, back);
    }

    #[test]
    fn attention_dump_is_readable() {
        let (dir, corpus) = three_dataset_corpus();
        let groups = sharing_groups(&corpus);
        let params = AttentionParams::init(&groups, 2, FusionMode::Attention);
        let path = dir.path().join("attention.tsv");
        save_attention(&path, &groups, &params).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // pair group: 2 targets x 2 sources; triple group: 3 x 3
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 4 + 9);
        assert!(lines[0].starts_with("user\t0\t0\t0.5 0.5"));
    }
}
