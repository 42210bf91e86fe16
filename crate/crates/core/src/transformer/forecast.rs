//! Sample-based forecast summaries.

use serde::{Deserialize, Serialize};

use super::model::{Model, Window};
use crate::error::{Error, Result};
use crate::nbdist::NegBinParams;

pub const DEFAULT_SAMPLES: usize = 100;

/// Nearest-rank percentile of sorted values: element `ceil(p/100 · n)` (1-based).
pub fn nearest_rank(sorted: &[u64], p: f64) -> u64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub params: NegBinParams,
    /// Draws in generation order.
    pub samples: Vec<u64>,
    /// Median of the samples.
    pub point: u64,
    /// 5th and 95th sample percentiles.
    pub interval: (u64, u64),
}

impl ForecastDistribution {
    pub fn from_samples(params: NegBinParams, samples: Vec<u64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("a forecast needs at least one sample"));
        }
        let mut sorted = samples.clone();
        sorted.sort_unstable();
        Ok(ForecastDistribution {
            params,
            point: nearest_rank(&sorted, 50.0),
            interval: (nearest_rank(&sorted, 5.0), nearest_rank(&sorted, 95.0)),
            samples,
        })
    }

    pub fn sample(params: NegBinParams, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        Self::from_samples(params, params.sample(n, seed))
    }

    pub fn sample_mean(&self) -> f64 {
        self.samples.iter().sum::<u64>() as f64 / self.samples.len() as f64
    }

    /// Sample standard deviation (divisor `n − 1`; 0 for a single draw).
    pub fn sample_std(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.sample_mean();
        let ss: f64 = self.samples.iter().map(|&s| (s as f64 - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }
}

pub fn predict(model: &Model, window: &Window, n: usize, seed: u64) -> Result<ForecastDistribution> {
    ForecastDistribution::sample(model.forward(window)?, n, seed)
}
