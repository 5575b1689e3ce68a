//! Central finite-difference gradient checking.
//!
//! The checker takes a closure that rebuilds the loss tape from a parameter
//! store, perturbs sampled coordinates by ±h, and compares the resulting
//! central-difference slopes against the analytic gradients from one backward
//! pass at the unperturbed point.

use super::adam::ParamStore;
use super::tape::{NodeId, Tape};
use super::NumericsError;
use crate::seeds;
use rand::Rng;
use std::collections::BTreeMap;
use std::fmt;

/// Relative-error report, per tensor and overall.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub per_tensor: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub samples_checked: usize,
}

impl FdReport {
    pub fn pass(&self, threshold: f64) -> bool {
        self.max_rel_error < threshold
    }
}

impl fmt::Display for FdReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "finite-difference check over {} coordinates, max rel error {:.3e}",
            self.samples_checked, self.max_rel_error
        )?;
        for (name, err) in &self.per_tensor {
            writeln!(f, "  {name}: {err:.3e}")?;
        }
        Ok(())
    }
}

/// Compare analytic gradients of `loss_fn` against central differences
/// (f(θ+h) − f(θ−h)) / 2h on `samples` coordinates chosen deterministically
/// from `seed`. Relative error uses max(|analytic|, |numeric|, 1e-2) as the
/// denominator so near-zero slopes are compared absolutely.
pub fn finite_diff_check(
    loss_fn: &mut dyn FnMut(&ParamStore) -> (Tape, NodeId),
    store: &ParamStore,
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<FdReport, NumericsError> {
    assert!(h > 0.0, "step size must be positive");
    let (tape, loss) = loss_fn(store);
    let analytic = tape.backward(loss)?.leaf_grads(&tape);

    // Flatten every parameter coordinate into one addressable space.
    let mut coords: Vec<(String, usize)> = Vec::new();
    for (name, tensor) in store.iter() {
        for idx in 0..tensor.len() {
            coords.push((name.to_string(), idx));
        }
    }
    let chosen: Vec<(String, usize)> = if samples >= coords.len() {
        coords
    } else {
        let mut rng = seeds::stream(seed, "fdcheck", &[]);
        let mut picked = Vec::with_capacity(samples);
        let mut remaining = coords;
        for _ in 0..samples {
            let at = rng.random_range(0..remaining.len());
            picked.push(remaining.swap_remove(at));
        }
        picked
    };

    let mut per_tensor: BTreeMap<String, f64> = BTreeMap::new();
    let samples_checked = chosen.len();
    for (name, idx) in chosen {
        let mut plus = store.clone();
        plus.get_mut(&name)?.data_mut()[idx] += h;
        let (tp, lp) = loss_fn(&plus);
        let fp = tp.value(lp).item();

        let mut minus = store.clone();
        minus.get_mut(&name)?.data_mut()[idx] -= h;
        let (tm, lm) = loss_fn(&minus);
        let fm = tm.value(lm).item();

        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic
            .get(&name)
            .map(|t| t.data()[idx])
            .unwrap_or(0.0);
        let denom = a.abs().max(numeric.abs()).max(1e-2);
        let rel = (a - numeric).abs() / denom;
        let slot = per_tensor.entry(name).or_insert(0.0);
        if rel > *slot {
            *slot = rel;
        }
    }
    let max_rel_error = per_tensor.values().cloned().fold(0.0, f64::max);
    Ok(FdReport { per_tensor, max_rel_error, samples_checked })
}
