//! Mini-batch NLL training with Adam.
//!
//! Each batch is cut into fixed chunks whose gradients are summed in chunk
//! order, so serial and rayon-parallel runs produce bit-identical parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::data::Dataset;
use super::model::{Mode, Model};
use crate::error::{Error, Result};

const CHUNK: usize = 16;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-example NLL of each epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, trainable: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn trainable_mask(model: &Model, frozen: &[String]) -> Result<Vec<bool>> {
    let mut mask = vec![true; model.params.len()];
    for name in frozen {
        let t = model
            .layout()
            .get(name)
            .ok_or_else(|| Error::config(format!("cannot freeze unknown tensor '{name}'")))?;
        mask[t.range()].fill(false);
    }
    Ok(mask)
}

/// Summed loss and gradient over `examples`, reduced chunk by chunk in a fixed order.
fn batch_gradient(
    model: &Model,
    data: &Dataset,
    examples: &[usize],
    dropout: f64,
    seed: u64,
    epoch: usize,
    parallel: bool,
) -> Result<(f64, Vec<f64>)> {
    let n = model.params.len();
    let chunk = |ids: &[usize]| -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; n];
        let mut loss = 0.0;
        for &ex in ids {
            let w = data.window(ex);
            let mode = Mode::Train {
                dropout,
                seed: mix_seed(&[seed, epoch as u64, ex as u64]),
            };
            loss += model.loss_and_grad(&w, mode, &mut grad)?;
        }
        Ok((loss, grad))
    };
    let parts: Vec<Result<(f64, Vec<f64>)>> = if parallel {
        examples.par_chunks(CHUNK).map(chunk).collect()
    } else {
        examples.chunks(CHUNK).map(chunk).collect()
    };
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for part in parts {
        let (l, g) = part?;
        total += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((total, grad))
}

pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    data.assert_no_leakage()?;
    if data.is_empty() {
        return Err(Error::invalid("training dataset has no complete windows"));
    }
    if data.lookback != model.embed_config().lookback {
        return Err(Error::config("dataset and model look-back windows differ"));
    }
    let trainable = trainable_mask(model, &cfg.frozen)?;
    let mut adam = Adam::new(model.params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let per_epoch = cfg.max_windows_per_epoch.unwrap_or(data.len()).min(data.len());
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        steps: 0,
        warnings: cfg.range_warnings(),
    };
    let mut batch_index = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64, 0x5EED]));
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order[..per_epoch].chunks(cfg.batch_size) {
            let (loss, mut grad) = batch_gradient(model, data, batch, cfg.dropout, cfg.seed, epoch, cfg.parallel)
                .map_err(|e| match e {
                    Error::Divergence(msg) => Error::Divergence(format!("batch {batch_index} (epoch {epoch}): {msg}")),
                    other => other,
                })?;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "batch {batch_index} (epoch {epoch}): non-finite loss or gradient"
                )));
            }
            if let Some(max_norm) = cfg.grad_clip {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max_norm {
                    let s = max_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            adam.step(&mut model.params, &grad, cfg.learning_rate, &trainable);
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence(format!("batch {batch_index} (epoch {epoch}): parameters became non-finite")));
            }
            epoch_total += loss;
            report.steps += 1;
            batch_index += 1;
        }
        report.epoch_loss.push(epoch_total / per_epoch as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::features::{ChannelBlock, ChannelSpec, Timing};
    use crate::transformer::data::StationSequence;
    use crate::transformer::model::tests::small_config;
    use crate::transformer::{EmbedConfig, StationRef};

    fn constant_dataset(embed: &EmbedConfig, values: &[f64], len: usize) -> Dataset {
        let global = Arc::new(ChannelBlock {
            channels: (0..embed.global_in)
                .map(|c| ChannelSpec {
                    name: format!("g{c}"),
                    real: true,
                    timing: Timing::Known,
                })
                .collect(),
            len,
            data: (0..len * embed.global_in).map(|i| ((i % 7) as f64 - 3.0) / 3.0).collect(),
        });
        let local = ChannelBlock {
            channels: (0..embed.local_dim)
                .map(|c| ChannelSpec {
                    name: format!("l{c}"),
                    real: true,
                    timing: Timing::Observed,
                })
                .collect(),
            len,
            data: vec![0.0; len * embed.local_dim],
        };
        let seqs = values
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                StationSequence::new(StationRef::Row(i), vec![0.5], Arc::clone(&global), local.clone(), vec![c; len]).unwrap()
            })
            .collect();
        Dataset::new(seqs, embed.lookback, len).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        let (_, t) = small_config();
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-2,
            ..t
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (embed, _) = small_config();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..quick_cfg()
        };
        let data = constant_dataset(&embed, &[3.0], 40);
        let mut m = Model::new(embed, &cfg, vec!["A".into()], 1).unwrap();
        let before = m.params.clone();
        let report = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(m.params, before);
        assert_eq!(report.epoch_loss.len(), 3);
    }

    #[test]
    fn deterministic_and_parallel_agnostic() {
        let (embed, _) = small_config();
        let data = constant_dataset(&embed, &[2.0, 5.0], 60);
        let run = |parallel: bool| {
            let cfg = TrainConfig { parallel, ..quick_cfg() };
            let mut m = Model::new(embed.clone(), &cfg, vec!["A".into(), "B".into()], 1).unwrap();
            let r = train(&mut m, &data, &cfg).unwrap();
            (m.params, r.final_loss().unwrap())
        };
        let a = run(false);
        let b = run(false);
        let c = run(true);
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert_eq!(a, c);
    }

    #[test]
    fn constant_target_mean_is_learned() {
        // NB MLE of mu is the sample mean; with r frozen the head converges to c
        let (mut embed, _) = small_config();
        embed.mean_scaling = false;
        let c = 4.0;
        let data = constant_dataset(&embed, &[c], 80);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 16,
            learning_rate: 1e-2,
            dropout: 0.0,
            frozen: vec!["head_r_w".into(), "head_r_b".into()],
            ..quick_cfg()
        };
        let mut m = Model::new(embed, &cfg, vec!["A".into()], 3).unwrap();
        m.tensor_mut("head_r_w").unwrap().fill(0.0);
        m.tensor_mut("head_r_b").unwrap()[0] = 1.0;
        let r_before = m.forward(&data.window(0)).unwrap().r();
        let report = train(&mut m, &data, &cfg).unwrap();
        let nb = m.forward(&data.window(5)).unwrap();
        assert!((nb.mu() - c).abs() / c < 0.05, "mu = {}", nb.mu());
        assert_eq!(nb.r(), r_before);
        let first = report.epoch_loss[0];
        let last = *report.epoch_loss.last().unwrap();
        assert!(last < first);
    }

    #[test]
    fn frozen_unknown_tensor_is_rejected() {
        let (embed, _) = small_config();
        let cfg = TrainConfig {
            frozen: vec!["nope".into()],
            ..quick_cfg()
        };
        let data = constant_dataset(&embed, &[1.0], 20);
        let mut m = Model::new(embed, &cfg, vec!["A".into()], 1).unwrap();
        assert!(matches!(train(&mut m, &data, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_reports_batch() {
        let (embed, _) = small_config();
        let cfg = quick_cfg();
        let data = constant_dataset(&embed, &[1.0], 30);
        let mut m = Model::new(embed, &cfg, vec!["A".into()], 1).unwrap();
        m.tensor_mut("proj_b").unwrap()[0] = f64::NAN;
        match train(&mut m, &data, &cfg) {
            Err(Error::Divergence(msg)) => assert!(msg.starts_with("batch 0"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn seeds_are_mixed() {
        assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
        assert_eq!(mix_seed(&[7, 0, 3]), mix_seed(&[7, 0, 3]));
    }
}
