//! Leave-one-out ranking evaluation.
//!
//! For every user with at least two interactions, the latest interaction
//! (by timestamp; ties and missing timestamps fall back to file order) is
//! held out and ranked among 99 items the user never interacted with.
//! Hit ratio and NDCG are reported for cutoffs N = 1..10.
//!
//! Ranking is pessimistic about ties: candidates scoring equal to the test
//! item count as ahead of it, so a constant-score model earns rank 100
//! rather than a lucky HR@10 ≈ 0.1.

use crate::corpus::{Corpus, DatasetId};
use crate::seeds;
use rand::Rng;
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Unobserved items sampled per test user.
pub const CANDIDATES: usize = 99;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One held-out interaction plus its sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    /// Line sequence of the held-out interaction, for carving the train
    /// view out of the corpus.
    pub seq: u64,
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    pub dataset: DatasetId,
    /// Ordered by user index; users with fewer than two interactions are
    /// absent.
    pub cases: Vec<TestCase>,
}

impl EvalSplit {
    /// Keys accepted by `Corpus::without_interactions` to drop every
    /// held-out interaction of this split.
    pub fn holdout_keys(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.cases.iter().map(|c| (self.dataset.0, c.seq))
    }
}

/// Hold out each eligible user's latest interaction and sample its
/// candidate negatives — without replacement, from the items the user
/// never touched in the full corpus. Users with fewer unseen items than
/// [`CANDIDATES`] keep them all (with a warning).
pub fn make_split(corpus: &Corpus, dataset: DatasetId, seed: u64) -> EvalSplit {
    let m = corpus.dataset(dataset).m;
    let n = corpus.dataset(dataset).n;
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); m];
    let interactions = corpus.interactions(dataset);
    for (pos, it) in interactions.iter().enumerate() {
        per_user[it.user.index].push(pos);
    }

    let mut cases = Vec::new();
    let mut excluded = 0usize;
    let mut short_candidates = 0usize;
    let mut saw_timestamp = false;
    for (user, positions) in per_user.iter().enumerate() {
        if positions.len() < 2 {
            excluded += positions.len(); // empty rows aren't users who lost a test item
            continue;
        }
        let held = *positions
            .iter()
            .max_by_key(|&&p| {
                let it = &interactions[p];
                if it.timestamp.is_some() {
                    saw_timestamp = true;
                }
                (it.timestamp.unwrap_or(i64::MIN), it.seq)
            })
            .expect("user has interactions");
        let test = &interactions[held];

        let observed: BTreeSet<usize> =
            positions.iter().map(|&p| interactions[p].item.index).collect();
        let mut unseen: Vec<usize> = (0..n).filter(|j| !observed.contains(j)).collect();
        let take = unseen.len().min(CANDIDATES);
        if take < CANDIDATES {
            short_candidates += 1;
        }
        let mut rng = seeds::stream(seed, "eval-candidates", &[dataset.0 as u64, user as u64]);
        for t in 0..take {
            let s = rng.random_range(t..unseen.len());
            unseen.swap(t, s);
        }
        unseen.truncate(take);

        cases.push(TestCase {
            user,
            item: test.item.index,
            rating: test.rating,
            seq: test.seq,
            candidates: unseen,
        });
    }

    if excluded > 0 {
        log::warn!(
            "dataset {}: {excluded} users have a single interaction and are excluded from the test set",
            dataset.0
        );
    }
    if short_candidates > 0 {
        log::warn!(
            "dataset {}: {short_candidates} test users have fewer than {CANDIDATES} unseen items; using all of them",
            dataset.0
        );
    }
    if !saw_timestamp && !cases.is_empty() {
        log::info!(
            "dataset {}: no timestamps present; holding out the last interaction in file order",
            dataset.0
        );
    }
    EvalSplit { dataset, cases }
}

/// Pessimistic rank of the test item: 1 + the number of candidates scoring
/// at least as high.
pub fn rank_against(test_score: f64, candidate_scores: &[f64]) -> usize {
    1 + candidate_scores.iter().filter(|&&c| c >= test_score).count()
}

/// Fraction of ranks within the top N.
pub fn hr_at(ranks: &[usize], n: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= n).count() as f64 / ranks.len() as f64
}

/// Mean discounted gain of the single relevant item: 1/log2(rank+1) inside
/// the cutoff, 0 outside (ideal DCG is 1, so this is already normalized).
pub fn ndcg_at(ranks: &[usize], n: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let total: f64 = ranks
        .iter()
        .map(|&r| if r <= n { 1.0 / ((r as f64) + 1.0).log2() } else { 0.0 })
        .sum();
    total / ranks.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: usize,
    /// hr[i] = HR@(i+1), i = 0..9.
    pub hr: [f64; 10],
    /// ndcg[i] = NDCG@(i+1).
    pub ndcg: [f64; 10],
    pub ranks: Vec<usize>,
    pub empty: bool,
}

/// Rank every test case with the given scoring function and aggregate
/// HR/NDCG over N = 1..10.
pub fn evaluate_with(
    split: &EvalSplit,
    mut score: impl FnMut(usize, usize) -> f64,
) -> EvalReport {
    let mut ranks = Vec::with_capacity(split.cases.len());
    for case in &split.cases {
        let test = score(case.user, case.item);
        let candidates: Vec<f64> = case.candidates.iter().map(|&j| score(case.user, j)).collect();
        ranks.push(rank_against(test, &candidates));
    }
    let mut hr = [0.0; 10];
    let mut ndcg = [0.0; 10];
    for n in 1..=10 {
        hr[n - 1] = hr_at(&ranks, n);
        ndcg[n - 1] = ndcg_at(&ranks, n);
    }
    EvalReport { dataset: split.dataset.0, hr, ndcg, empty: ranks.is_empty(), ranks }
}

/// Write reports as CSV: `dataset,N,hr,ndcg`, ten rows per dataset.
pub fn write_report(path: &Path, reports: &[EvalReport]) -> Result<(), EvalError> {
    let mut out = String::from("dataset,N,hr,ndcg\n");
    for report in reports {
        for n in 1..=10 {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                report.dataset,
                n,
                report.hr[n - 1],
                report.ndcg[n - 1]
            ));
        }
    }
    fs::write(path, out).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, DatasetFiles, LoadOptions};
    use proptest::prelude::*;
    use std::collections::HashSet;
    use tempfile::TempDir;

    fn corpus_from(lines: &str) -> (TempDir, Corpus) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("r.tsv");
        fs::write(&path, lines).unwrap();
        let files =
            vec![DatasetFiles { name: "d".into(), max_rating: 5.0, ratings: path, content: None }];
        let corpus =
            load_corpus(&files, None, &LoadOptions { min_interactions_per_user: 1 }).unwrap();
        (dir, corpus)
    }

    #[test]
    fn latest_timestamp_is_held_out() {
        let (_dir, corpus) =
            corpus_from("u\ta\t5.0\t1\nu\tb\t4.0\t5\nu\tc\t3.0\t3\nv\ta\t2.0\t1\nv\tb\t1.0\t2\n");
        let split = make_split(&corpus, DatasetId(0), 0);
        let case = &split.cases[split.cases.iter().position(|c| {
            corpus.user_raw_id(DatasetId(0), c.user) == "u"
        }).unwrap()];
        assert_eq!(corpus.item_raw_id(DatasetId(0), case.item), "b");
    }

    #[test]
    fn timestamp_ties_and_missing_fall_back_to_file_order() {
        // tie at t=7 → the later line (item c) wins
        let (_dir, corpus) = corpus_from("u\ta\t5.0\t7\nu\tc\t3.0\t7\nu\tb\t4.0\t1\n");
        let split = make_split(&corpus, DatasetId(0), 0);
        assert_eq!(corpus.item_raw_id(DatasetId(0), split.cases[0].item), "c");
        // no timestamps at all → last line
        let (_dir2, corpus2) = corpus_from("u\ta\t5.0\nu\tb\t4.0\nu\tc\t3.0\n");
        let split2 = make_split(&corpus2, DatasetId(0), 0);
        assert_eq!(corpus2.item_raw_id(DatasetId(0), split2.cases[0].item), "c");
    }

    #[test]
    fn single_interaction_users_are_excluded() {
        let (_dir, corpus) = corpus_from("u\ta\t5.0\nu\tb\t3.0\nv\ta\t2.0\n");
        let split = make_split(&corpus, DatasetId(0), 0);
        assert_eq!(split.cases.len(), 1);
        assert_eq!(corpus.user_raw_id(DatasetId(0), split.cases[0].user), "u");
    }

    fn wide_corpus() -> (TempDir, Corpus) {
        // one test user with 20 rated items, plus 100 extra items owned by
        // a filler user → 100 unseen items for the test user
        let mut lines = String::new();
        for i in 0..20 {
            lines.push_str(&format!("u\ti{i:03}\t4.0\t{i}\n"));
        }
        for i in 20..120 {
            lines.push_str(&format!("filler\ti{i:03}\t3.0\t{i}\n"));
        }
        corpus_from(&lines)
    }

    #[test]
    fn candidates_are_99_unobserved_distinct_and_deterministic() {
        let (_dir, corpus) = wide_corpus();
        let split = make_split(&corpus, DatasetId(0), 11);
        let case = split
            .cases
            .iter()
            .find(|c| corpus.user_raw_id(DatasetId(0), c.user) == "u")
            .unwrap();
        assert_eq!(case.candidates.len(), CANDIDATES);
        let distinct: HashSet<usize> = case.candidates.iter().copied().collect();
        assert_eq!(distinct.len(), CANDIDATES, "sampled without replacement");
        let observed: HashSet<usize> = corpus
            .interactions(DatasetId(0))
            .iter()
            .filter(|it| it.user.index == case.user)
            .map(|it| it.item.index)
            .collect();
        assert!(case.candidates.iter().all(|j| !observed.contains(j)));

        let again = make_split(&corpus, DatasetId(0), 11);
        assert_eq!(split, again, "same seed, same split");
        let other = make_split(&corpus, DatasetId(0), 12);
        assert_ne!(
            case.candidates,
            other.cases.iter().find(|c| c.user == case.user).unwrap().candidates
        );
    }

    #[test]
    fn scarce_items_fall_back_to_all_unseen() {
        let (_dir, corpus) =
            corpus_from("u\ta\t5.0\nu\tb\t4.0\nv\ta\t1.0\nv\tc\t2.0\nv\td\t2.0\n");
        let split = make_split(&corpus, DatasetId(0), 0);
        let case = split
            .cases
            .iter()
            .find(|c| corpus.user_raw_id(DatasetId(0), c.user) == "u")
            .unwrap();
        // u has seen {a, b} of {a, b, c, d} → both unseen items are kept
        assert_eq!(case.candidates.len(), 2);
    }

    #[test]
    fn holdout_keys_carve_the_train_view() {
        let (_dir, corpus) = corpus_from("u\ta\t5.0\t1\nu\tb\t4.0\t2\nv\ta\t2.0\t1\nv\tc\t1.0\t9\n");
        let split = make_split(&corpus, DatasetId(0), 0);
        assert_eq!(split.cases.len(), 2);
        let drop: HashSet<(usize, u64)> = split.holdout_keys().collect();
        let train = corpus.without_interactions(&drop);
        assert_eq!(train.interactions(DatasetId(0)).len(), 2);
        for it in train.interactions(DatasetId(0)) {
            assert!(!drop.contains(&(0, it.seq)));
        }
        // entity universes are unchanged by the carve
        assert_eq!(train.dataset(DatasetId(0)).m, corpus.dataset(DatasetId(0)).m);
        assert_eq!(train.dataset(DatasetId(0)).n, corpus.dataset(DatasetId(0)).n);
    }

    #[test]
    fn rank_oracles() {
        assert_eq!(rank_against(0.9, &[0.1, 0.2, 0.3]), 1);
        assert_eq!(rank_against(0.5, &[0.5; 99]), 100, "pessimistic ties");
        assert_eq!(rank_against(0.4, &[0.9, 0.1, 0.4, 0.2, 0.6]), 4);
    }

    #[test]
    fn rank_matches_sort_oracle() {
        let mut rng = seeds::stream(3, "rank-oracle", &[]);
        for _ in 0..200 {
            let test: f64 = rng.random_range(0.0..1.0_f64);
            let quantize = |v: f64| (v * 8.0).round() / 8.0; // force ties
            let test = quantize(test);
            let candidates: Vec<f64> =
                (0..19).map(|_| quantize(rng.random_range(0.0..1.0))).collect();
            // brute force: sort descending with the test item after ties
            let mut all: Vec<(f64, bool)> =
                candidates.iter().map(|&c| (c, false)).chain([(test, true)]).collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let brute = 1 + all.iter().position(|&(_, is_test)| is_test).unwrap();
            assert_eq!(rank_against(test, &candidates), brute);
        }
    }

    #[test]
    fn metric_oracles() {
        assert_eq!(ndcg_at(&[1], 10), 1.0);
        assert!((ndcg_at(&[3], 10) - 0.5).abs() < 1e-12, "1/log2(4)");
        assert_eq!(hr_at(&[11], 10), 0.0);
        assert_eq!(ndcg_at(&[11], 10), 0.0);
        let ranks = [1, 11];
        assert_eq!(hr_at(&ranks, 10), 0.5);
        assert_eq!(ndcg_at(&ranks, 10), 0.5);
    }

    proptest! {
        #[test]
        fn metrics_are_monotone_bounded_and_ordered(
            ranks in proptest::collection::vec(1usize..=100, 1..40),
        ) {
            let mut prev_hr = 0.0;
            let mut prev_ndcg = 0.0;
            for n in 1..=10 {
                let hr = hr_at(&ranks, n);
                let ndcg = ndcg_at(&ranks, n);
                prop_assert!((0.0..=1.0).contains(&hr));
                prop_assert!((0.0..=1.0).contains(&ndcg));
                prop_assert!(hr >= prev_hr && ndcg >= prev_ndcg);
                prop_assert!(ndcg <= hr + 1e-12);
                prev_hr = hr;
                prev_ndcg = ndcg;
            }
        }
    }

    #[test]
    fn evaluate_matches_brute_force() {
        let (_dir, corpus) = wide_corpus();
        let split = make_split(&corpus, DatasetId(0), 4);
        let score = |u: usize, i: usize| -> f64 {
            let mut rng = seeds::stream(9, "fake-score", &[u as u64, i as u64]);
            (rng.random_range(0.0..16.0_f64)).round() / 16.0
        };
        let report = evaluate_with(&split, score);
        assert!(!report.empty);

        for (case, &rank) in split.cases.iter().zip(&report.ranks) {
            let mut all: Vec<(f64, bool)> = case
                .candidates
                .iter()
                .map(|&j| (score(case.user, j), false))
                .chain([(score(case.user, case.item), true)])
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            assert_eq!(rank, 1 + all.iter().position(|&(_, t)| t).unwrap());
        }
        for n in 1..=10 {
            assert_eq!(report.hr[n - 1], hr_at(&report.ranks, n));
            assert_eq!(report.ndcg[n - 1], ndcg_at(&report.ranks, n));
        }
    }

    #[test]
    fn perfect_model_scores_one_everywhere() {
        let (_dir, corpus) = corpus_from("u\ta\t5.0\t1\nu\tb\t4.0\t2\nv\ta\t2.0\t1\nv\tb\t1.0\t9\n");
        let split = make_split(&corpus, DatasetId(0), 0);
        // score the held-out item above everything else
        let holdout: HashSet<(usize, usize)> =
            split.cases.iter().map(|c| (c.user, c.item)).collect();
        let report =
            evaluate_with(&split, |u, i| if holdout.contains(&(u, i)) { 1.0 } else { 0.1 });
        for n in 0..10 {
            assert_eq!(report.hr[n], 1.0);
            assert_eq!(report.ndcg[n], 1.0);
        }
    }

    #[test]
    fn empty_test_set_is_flagged() {
        let (_dir, corpus) = corpus_from("u\ta\t5.0\nv\tb\t2.0\n");
        let split = make_split(&corpus, DatasetId(0), 0);
        assert!(split.cases.is_empty());
        let report = evaluate_with(&split, |_, _| 0.5);
        assert!(report.empty);
        assert!(report.hr.iter().chain(&report.ndcg).all(|&v| v == 0.0));
    }

    #[test]
    fn report_csv_is_well_formed() {
        let (dir, corpus) = corpus_from("u\ta\t5.0\t1\nu\tb\t4.0\t2\n");
        let split = make_split(&corpus, DatasetId(0), 0);
        let report = evaluate_with(&split, |_, i| i as f64);
        let path = dir.path().join("eval.csv");
        write_report(&path, &[report]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "dataset,N,hr,ndcg");
        assert_eq!(lines.len(), 11);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0], "0");
        assert_eq!(fields[1], "1");
        fields[2].parse::<f64>().unwrap();
        fields[3].parse::<f64>().unwrap();
    }
}
