use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input widths and sequence geometry of one predictor.
///
/// Each look-back step is the concatenation `[station, global, local, y]` of width
/// `d = station_embed_dim + global_embed_dim + local_dim + 1`, projected to `model_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    /// Width of the learned station representation.
    pub station_embed_dim: usize,
    /// Number of static real channels (capacity) folded into the station representation.
    pub static_dim: usize,
    /// Number of raw global channels fed to the dense temporal embedding.
    pub global_in: usize,
    pub global_embed_dim: usize,
    pub local_dim: usize,
    pub model_dim: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub heads: usize,
    /// Divide inputs and multiply the predicted mean by `1 + mean(y in window)`.
    pub mean_scaling: bool,
}

impl EmbedConfig {
    pub fn new(global_in: usize, local_dim: usize, lookback: usize) -> Self {
        EmbedConfig {
            station_embed_dim: 8,
            static_dim: 1,
            global_in,
            global_embed_dim: 8,
            local_dim,
            model_dim: 16,
            lookback,
            horizon: 1,
            heads: 4,
            mean_scaling: true,
        }
    }

    pub fn concat_dim(&self) -> usize {
        self.station_embed_dim + self.global_embed_dim + self.local_dim + 1
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.lookback == 0 {
            return Err(Error::config("model_dim and lookback must be positive"));
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "model_dim {} must be divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.horizon != 1 {
            return Err(Error::config("only one-step-ahead forecasting (horizon = 1) is supported"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Number of encoder blocks.
    pub layers: usize,
    /// Width of the position-wise feed-forward layer.
    pub hidden: usize,
    pub seed: u64,
    /// Random subset of training windows visited per epoch (all when `None`).
    pub max_windows_per_epoch: Option<usize>,
    /// Clip the global gradient norm of each batch.
    pub grad_clip: Option<f64>,
    /// Shard batches across the rayon pool. Results are bit-identical either way.
    pub parallel: bool,
    /// Parameter tensors excluded from updates.
    pub frozen: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-3,
            dropout: 0.1,
            layers: 1,
            hidden: 32,
            seed: 42,
            max_windows_per_epoch: None,
            grad_clip: Some(10.0),
            parallel: true,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    /// Hard errors for unusable values.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden must be positive"));
        }
        Ok(())
    }

    /// Values outside the tuned hyperparameter ranges. Advisory only.
    pub fn range_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !(1..=3).contains(&self.layers) {
            w.push(format!("layers = {} outside {{1, 2, 3}}", self.layers));
        }
        if ![16, 32, 64].contains(&self.hidden) {
            w.push(format!("hidden = {} outside {{16, 32, 64}}", self.hidden));
        }
        if ![0.1, 0.2, 0.3].contains(&self.dropout) {
            w.push(format!("dropout = {} outside {{0.1, 0.2, 0.3}}", self.dropout));
        }
        if !(5e-5..=1e-2).contains(&self.learning_rate) {
            w.push(format!("learning_rate = {} outside [5e-5, 1e-2]", self.learning_rate));
        }
        w
    }
}
