//! Finite-difference verification of the analytic gradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Mode, Model, Window};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Number of parameters probed; at least one per tensor when possible.
    pub samples: usize,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Relative step: `h = step · max(1, |θ|)`.
    pub step: f64,
    /// Denominator floor for the relative error, so near-zero gradients compare absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples: 64,
            tolerance: 1e-3,
            step: 1e-4,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub index: usize,
    pub tensor: String,
    pub offset_in_tensor: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    /// Entry with the largest error.
    pub worst: Option<usize>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn worst_entry(&self) -> Option<&GradCheckEntry> {
        self.worst.map(|i| &self.entries[i])
    }
}

/// Summed NLL of the batch with its analytic gradient (dropout off).
pub fn analytic_gradient(model: &Model, batch: &[Window]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    for w in batch {
        loss += model.loss_and_grad(w, Mode::Eval, &mut grad)?;
    }
    Ok((loss, grad))
}

pub fn gradient_check(model: &Model, batch: &[Window], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (_, grad) = analytic_gradient(model, batch)?;
    compare_gradients(model, batch, &grad, opts)
}

/// Compares a supplied gradient against central finite differences of the batch NLL.
pub fn compare_gradients(model: &Model, batch: &[Window], analytic: &[f64], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if analytic.len() != model.params.len() {
        return Err(Error::invalid("gradient length does not match the model"));
    }
    if batch.is_empty() {
        return Err(Error::invalid("gradient check needs a non-empty batch"));
    }
    let indices = sample_indices(model, opts.samples, opts.seed);
    let mut probe = model.clone();
    let mut entries = Vec::with_capacity(indices.len());
    for idx in indices {
        let theta = model.params[idx];
        let h = opts.step * theta.abs().max(1.0);
        probe.params[idx] = theta + h;
        let plus = probe.batch_nll(batch)?;
        probe.params[idx] = theta - h;
        let minus = probe.batch_nll(batch)?;
        probe.params[idx] = theta;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[idx];
        let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        let (spec, offset_in_tensor) = model.layout().locate(idx).expect("index inside layout");
        entries.push(GradCheckEntry {
            index: idx,
            tensor: spec.name.clone(),
            offset_in_tensor,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    let worst = entries
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.rel_error.total_cmp(&b.1.rel_error))
        .map(|(i, _)| i);
    Ok(GradCheckReport {
        max_rel_error: worst.map_or(0.0, |i| entries[i].rel_error),
        worst,
        entries,
        tolerance: opts.tolerance,
    })
}

/// Round-robin over tensors so every tensor is probed before any is probed twice.
fn sample_indices(model: &Model, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<usize>> = model
        .layout()
        .tensors
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| {
            let mut ids: Vec<usize> = t.range().collect();
            ids.shuffle(&mut rng);
            ids
        })
        .collect();
    let total: usize = pools.iter().map(Vec::len).sum();
    let n = n.min(total);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        for pool in pools.iter_mut() {
            if out.len() == n {
                break;
            }
            if let Some(i) = pool.pop() {
                out.push(i);
            }
        }
    }
    out
}
