//! Per-dataset MLP towers and cosine interaction prediction.
//!
//! Each dataset owns two towers of bias-free linear layers with a ReLU
//! after every layer (the last included): one mapping user input rows to
//! output embeddings, one doing the same for items. Because outputs are
//! componentwise nonnegative, the cosine of two outputs lies in [0, 1];
//! predictions clamp it to [ε, 1−ε] so downstream log-losses stay finite.
//!
//! Layer widths come from a structure string of multipliers of the
//! embedding dimension k — the default `1,2,4,8,4,2,1` expands to
//! k→2k→4k→8k→4k→2k→k.

use crate::corpus::EntityKind;
use crate::numerics::{ParamStore, Tensor};
use crate::seeds;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Prediction clamp: ŷ ∈ [EPS, 1 − EPS].
pub const EPS: f64 = 1e-7;

/// Default weight-init standard deviation (variance 0.01).
pub const DEFAULT_INIT_SIGMA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("bad tower structure: {0}")]
    BadStructure(String),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

// ============================================================
// Structure spec
// ============================================================

/// Tower layer widths as multipliers of k, e.g. `1,2,4,8,4,2,1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureSpec {
    multipliers: Vec<usize>,
}

impl Default for StructureSpec {
    fn default() -> Self {
        StructureSpec { multipliers: vec![1, 2, 4, 8, 4, 2, 1] }
    }
}

impl FromStr for StructureSpec {
    type Err = ScorerError;

    fn from_str(s: &str) -> Result<Self, ScorerError> {
        let multipliers: Vec<usize> = s
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<usize>()
                    .map_err(|_| ScorerError::BadStructure(format!("bad multiplier {part:?}")))
            })
            .collect::<Result<_, _>>()?;
        if multipliers.len() < 2 {
            return Err(ScorerError::BadStructure("need at least two widths".into()));
        }
        if multipliers.contains(&0) {
            return Err(ScorerError::BadStructure("zero width".into()));
        }
        if multipliers[0] != 1 || *multipliers.last().unwrap() != 1 {
            return Err(ScorerError::BadStructure(
                "structure must start and end at 1 x k".into(),
            ));
        }
        Ok(StructureSpec { multipliers })
    }
}

impl fmt::Display for StructureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.multipliers.iter().map(usize::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl StructureSpec {
    pub fn widths(&self, k: usize) -> Vec<usize> {
        self.multipliers.iter().map(|m| m * k).collect()
    }

    /// Number of weight matrices per tower.
    pub fn n_layers(&self) -> usize {
        self.multipliers.len() - 1
    }
}

// ============================================================
// Tower parameters
// ============================================================

/// Store key of one tower weight matrix.
pub fn tower_param_name(dataset: usize, kind: EntityKind, layer: usize) -> String {
    format!("tower.{dataset}.{kind}.{layer}")
}

/// All tower weights: `user[d][l]` / `item[d][l]` is layer l of dataset d's
/// tower, shaped widths[l] x widths[l+1].
#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    pub k: usize,
    pub structure: StructureSpec,
    pub user: Vec<Vec<Tensor>>,
    pub item: Vec<Vec<Tensor>>,
}

/// Gaussian-initialized towers for every dataset, one RNG stream per
/// (dataset, side, layer) so layouts don't shift entries between layers.
pub fn init_towers(
    n_datasets: usize,
    k: usize,
    structure: &StructureSpec,
    sigma: f64,
    seed: u64,
) -> TowerParams {
    let widths = structure.widths(k);
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and positive");
    let side = |tag: &str| -> Vec<Vec<Tensor>> {
        (0..n_datasets)
            .map(|d| {
                (0..structure.n_layers())
                    .map(|l| {
                        let mut rng = seeds::stream(seed, tag, &[d as u64, l as u64]);
                        let (rows, cols) = (widths[l], widths[l + 1]);
                        let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
                        Tensor::from_vec(rows, cols, data)
                    })
                    .collect()
            })
            .collect()
    };
    let user = side("tower-user");
    let item = side("tower-item");
    TowerParams { k, structure: structure.clone(), user, item }
}

impl TowerParams {
    pub fn n_datasets(&self) -> usize {
        self.user.len()
    }

    fn side(&self, kind: EntityKind) -> &[Vec<Tensor>] {
        match kind {
            EntityKind::User => &self.user,
            EntityKind::Item => &self.item,
        }
    }

    /// Copy every weight into the store under [`tower_param_name`] keys.
    pub fn insert_into(&self, store: &mut ParamStore) {
        for kind in [EntityKind::User, EntityKind::Item] {
            for (d, layers) in self.side(kind).iter().enumerate() {
                for (l, w) in layers.iter().enumerate() {
                    store.insert(&tower_param_name(d, kind, l), w.clone());
                }
            }
        }
    }

    /// Rebuild tower weights from a store populated by [`insert_into`].
    pub fn read_from(
        store: &ParamStore,
        n_datasets: usize,
        k: usize,
        structure: &StructureSpec,
    ) -> Result<TowerParams, ScorerError> {
        let side = |kind: EntityKind| -> Result<Vec<Vec<Tensor>>, ScorerError> {
            (0..n_datasets)
                .map(|d| {
                    (0..structure.n_layers())
                        .map(|l| {
                            let name = tower_param_name(d, kind, l);
                            store.get(&name).map(Tensor::clone).map_err(|_| {
                                ScorerError::BadStructure(format!("store missing {name}"))
                            })
                        })
                        .collect()
                })
                .collect()
        };
        let user = side(EntityKind::User)?;
        let item = side(EntityKind::Item)?;
        Ok(TowerParams { k, structure: structure.clone(), user, item })
    }
}

// ============================================================
// Forward passes
// ============================================================

fn forward_matrix(layers: &[Tensor], input: &Tensor, context: &str) -> Result<Tensor, ScorerError> {
    let mut value = input.clone();
    for w in layers {
        assert_eq!(value.cols(), w.rows(), "layer width chain");
        let mut next = value.matmul(w);
        for v in next.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        value = next;
    }
    if !value.all_finite() {
        return Err(ScorerError::NonFinite { context: context.to_string() });
    }
    Ok(value)
}

/// Map a batch of user input rows through dataset `d`'s user tower.
pub fn forward_users(params: &TowerParams, d: usize, p_in: &Tensor) -> Result<Tensor, ScorerError> {
    forward_matrix(&params.user[d], p_in, "user tower output")
}

/// Map a batch of item input rows through dataset `d`'s item tower.
pub fn forward_items(params: &TowerParams, d: usize, q_in: &Tensor) -> Result<Tensor, ScorerError> {
    forward_matrix(&params.item[d], q_in, "item tower output")
}

/// Single-row convenience over [`forward_users`].
pub fn forward_user(params: &TowerParams, d: usize, row: &[f64]) -> Result<Vec<f64>, ScorerError> {
    let out = forward_users(params, d, &Tensor::row_vector(row.to_vec()))?;
    Ok(out.data().to_vec())
}

/// Single-row convenience over [`forward_items`].
pub fn forward_item(params: &TowerParams, d: usize, row: &[f64]) -> Result<Vec<f64>, ScorerError> {
    let out = forward_items(params, d, &Tensor::row_vector(row.to_vec()))?;
    Ok(out.data().to_vec())
}

/// Clamped cosine of two output embeddings. A zero-norm side yields the
/// lower clamp EPS rather than NaN.
pub fn predict(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "embedding dims must match");
    let (mut dot, mut np, mut nq) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        dot += a * b;
        np += a * a;
        nq += b * b;
    }
    if np == 0.0 || nq == 0.0 {
        return EPS;
    }
    (dot / (np.sqrt() * nq.sqrt())).clamp(EPS, 1.0 - EPS)
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(k: usize) -> Tensor {
        let mut t = Tensor::zeros(k, k);
        for i in 0..k {
            t.set(i, i, 1.0);
        }
        t
    }

    #[test]
    fn structure_parses_and_round_trips() {
        let s: StructureSpec = "1,2,4,8,4,2,1".parse().unwrap();
        assert_eq!(s, StructureSpec::default());
        assert_eq!(s.to_string(), "1,2,4,8,4,2,1");
        assert_eq!(s.widths(8), vec![8, 16, 32, 64, 32, 16, 8]);
        assert_eq!(s.n_layers(), 6);
        assert!("".parse::<StructureSpec>().is_err());
        assert!("1".parse::<StructureSpec>().is_err());
        assert!("1,0,1".parse::<StructureSpec>().is_err());
        assert!("2,4,2".parse::<StructureSpec>().is_err(), "must start and end at k");
        assert!("1,x,1".parse::<StructureSpec>().is_err());
    }

    #[test]
    fn default_towers_have_documented_shapes() {
        let params = init_towers(2, 8, &StructureSpec::default(), DEFAULT_INIT_SIGMA, 7);
        let expect = [(8, 16), (16, 32), (32, 64), (64, 32), (32, 16), (16, 8)];
        for d in 0..2 {
            for (l, &shape) in expect.iter().enumerate() {
                assert_eq!(params.user[d][l].shape(), shape);
                assert_eq!(params.item[d][l].shape(), shape);
            }
        }
    }

    #[test]
    fn init_matches_gaussian_moments() {
        // enough entries that the sample mean of N(0, 0.01) draws sits
        // within 0.01 of zero with overwhelming probability
        let params = init_towers(1, 32, &StructureSpec::default(), DEFAULT_INIT_SIGMA, 3);
        let mut values = Vec::new();
        for layers in [&params.user[0], &params.item[0]] {
            for w in layers {
                values.extend_from_slice(w.data());
            }
        }
        assert!(values.len() >= 100_000, "got {}", values.len());
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.01, "sample mean {mean}");
        let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1) as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.005, "sample sigma {}", var.sqrt());
    }

    #[test]
    fn same_seed_reproduces_towers() {
        let s = StructureSpec::default();
        let a = init_towers(2, 8, &s, DEFAULT_INIT_SIGMA, 11);
        let b = init_towers(2, 8, &s, DEFAULT_INIT_SIGMA, 11);
        assert_eq!(a, b);
        let c = init_towers(2, 8, &s, DEFAULT_INIT_SIGMA, 12);
        assert_ne!(a.user[0][0], c.user[0][0]);
    }

    #[test]
    fn zero_input_maps_to_zero_output() {
        let params = init_towers(1, 8, &StructureSpec::default(), DEFAULT_INIT_SIGMA, 5);
        let out = forward_user(&params, 0, &[0.0; 8]).unwrap();
        assert_eq!(out, vec![0.0; 8]);
    }

    #[test]
    fn identity_layer_is_relu() {
        let structure: StructureSpec = "1,1".parse().unwrap();
        let params = TowerParams {
            k: 4,
            structure,
            user: vec![vec![identity(4)]],
            item: vec![vec![identity(4)]],
        };
        let out = forward_user(&params, 0, &[1.0, -2.0, 0.0, 3.5]).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0, 3.5]);
    }

    #[test]
    fn forward_is_positively_homogeneous() {
        let params = init_towers(1, 8, &StructureSpec::default(), DEFAULT_INIT_SIGMA, 9);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 - 3.0) * 0.25).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * 3.75).collect();
        let base = forward_user(&params, 0, &x).unwrap();
        let out = forward_user(&params, 0, &scaled).unwrap();
        for (b, o) in base.iter().zip(&out) {
            assert!((o - b * 3.75).abs() <= 1e-9 * b.abs().max(1.0), "{o} vs {}", b * 3.75);
        }
    }

    #[test]
    fn outputs_are_componentwise_nonnegative() {
        let params = init_towers(1, 8, &StructureSpec::default(), DEFAULT_INIT_SIGMA, 13);
        let mut rng = seeds::stream(13, "scorer-test-input", &[]);
        for _ in 0..20 {
            let row: Vec<f64> = (0..8).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
            let out = forward_item(&params, 0, &row).unwrap();
            assert!(out.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn default_structure_is_square_for_standard_dims() {
        for k in [8usize, 16, 32, 64, 128] {
            let widths = StructureSpec::default().widths(k);
            assert_eq!(widths.first(), Some(&k));
            assert_eq!(widths.last(), Some(&k));
        }
    }

    #[test]
    fn prediction_oracles() {
        let p = vec![0.3, 0.4, 0.1];
        assert!((predict(&p, &p) - (1.0 - EPS)).abs() < 1e-15);
        assert_eq!(predict(&[1.0, 0.0], &[0.0, 2.0]), EPS);
        let v = predict(&[1.0, 0.0], &[1.0, 1.0]);
        assert!((v - 1.0 / 2.0f64.sqrt()).abs() < 1e-12, "{v}");
        assert_eq!(predict(&[0.0, 0.0], &[1.0, 1.0]), EPS);
    }

    #[test]
    fn store_round_trip_preserves_weights() {
        let params = init_towers(2, 8, &StructureSpec::default(), DEFAULT_INIT_SIGMA, 21);
        let mut store = ParamStore::new();
        params.insert_into(&mut store);
        assert_eq!(store.len(), 2 * 2 * 6);
        let back = TowerParams::read_from(&store, 2, 8, &StructureSpec::default()).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn batch_forward_matches_row_forward() {
        let params = init_towers(1, 8, &StructureSpec::default(), DEFAULT_INIT_SIGMA, 17);
        let batch = Tensor::from_rows(&[
            (0..8).map(|i| i as f64 * 0.1).collect::<Vec<_>>(),
            (0..8).map(|i| 1.0 - i as f64 * 0.2).collect::<Vec<_>>(),
        ]);
        let out = forward_users(&params, 0, &batch).unwrap();
        for r in 0..2 {
            let single = forward_user(&params, 0, batch.row(r)).unwrap();
            assert_eq!(out.row(r), &single[..]);
        }
    }
}
