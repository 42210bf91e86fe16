//! Sliding look-back windows over per-station channel sequences.
//!
//! A window predicting step `t + 1` covers the origin steps `s = t−V+1 ..= t`.
//! Token `s` holds the global row and the `Known` local channels of step `s + 1`
//! (calendar, weather and Stage-1 estimates are available ahead of time), the
//! `Observed` local channels of step `s`, and the count `y_s`. Nothing observed
//! after the forecast origin `t` enters the window.

use std::sync::Arc;

use super::model::{StationRef, Window};
use crate::error::{Error, Result};
use crate::features::{ChannelBlock, FeatureFrame, Timing};

/// Aligned inputs and counts for one station. `NaN` in `y` marks an unknown count.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSequence {
    pub station: StationRef,
    pub statics: Vec<f64>,
    pub global: Arc<ChannelBlock>,
    pub local: ChannelBlock,
    pub y: Vec<f64>,
}

impl StationSequence {
    pub fn new(station: StationRef, statics: Vec<f64>, global: Arc<ChannelBlock>, local: ChannelBlock, y: Vec<f64>) -> Result<Self> {
        if global.len != y.len() || local.len != y.len() {
            return Err(Error::invalid("sequence channels and counts have different lengths"));
        }
        Ok(StationSequence {
            station,
            statics,
            global,
            local,
            y,
        })
    }

    /// Sequence from a normalized frame and the station's counts on the same grid.
    pub fn from_frame(frame: &FeatureFrame, station: StationRef, counts: &[u32]) -> Result<Self> {
        if !frame.is_normalized() {
            return Err(Error::invalid(format!("frame for {} is not normalized", frame.station)));
        }
        Self::new(
            station,
            frame.statics.as_vec(),
            Arc::clone(&frame.global),
            frame.local.clone(),
            counts.iter().map(|&c| c as f64).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Window forecasting step `target` from the `lookback` steps before it.
    ///
    /// `None` when the look-back does not fit or any input it needs is missing.
    /// The target count is `None` when `y[target]` is unknown or past the end.
    pub fn window(&self, target: usize, lookback: usize) -> Option<Window> {
        if target < lookback || target > self.len() || lookback == 0 {
            return None;
        }
        let gw = self.global.width();
        let lw = self.local.width();
        let mut global = Vec::with_capacity(lookback * gw);
        let mut local = Vec::with_capacity(lookback * lw);
        let mut y = Vec::with_capacity(lookback);
        for s in target - lookback..target {
            let next = s + 1;
            if next >= self.len() {
                // forecasting beyond the grid: known-ahead inputs are unavailable
                return None;
            }
            global.extend_from_slice(self.global.row(next));
            for (c, spec) in self.local.channels.iter().enumerate() {
                let row = if spec.timing == Timing::Known { next } else { s };
                local.push(self.local.row(row)[c]);
            }
            y.push(self.y[s]);
        }
        if global.iter().chain(&local).chain(&y).any(|v| !v.is_finite()) {
            return None;
        }
        let target_count = self
            .y
            .get(target)
            .filter(|v| v.is_finite() && **v >= 0.0)
            .map(|&v| v as u32);
        Some(Window {
            station: self.station.clone(),
            statics: self.statics.clone(),
            global,
            local,
            y,
            target: target_count,
        })
    }
}

/// Index of one training example: sequence and target step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub sequence: usize,
    pub target: usize,
}

/// Training examples drawn from the steps before `train_end`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<StationSequence>,
    pub lookback: usize,
    pub train_end: usize,
    pub examples: Vec<WindowRef>,
}

impl Dataset {
    /// Every complete window whose target lies in `[lookback, train_end)`.
    pub fn new(sequences: Vec<StationSequence>, lookback: usize, train_end: usize) -> Result<Self> {
        let mut examples = Vec::new();
        for (si, seq) in sequences.iter().enumerate() {
            if train_end > seq.len() {
                return Err(Error::invalid(format!(
                    "train_end {train_end} exceeds sequence length {}",
                    seq.len()
                )));
            }
            for target in lookback..train_end {
                if let Some(w) = seq.window(target, lookback) {
                    if w.target.is_some() {
                        examples.push(WindowRef { sequence: si, target });
                    }
                }
            }
        }
        let ds = Dataset {
            sequences,
            lookback,
            train_end,
            examples,
        };
        ds.assert_no_leakage()?;
        Ok(ds)
    }

    /// Dataset with explicit examples; rejected if any reaches past `train_end`.
    pub fn with_examples(sequences: Vec<StationSequence>, lookback: usize, train_end: usize, examples: Vec<WindowRef>) -> Result<Self> {
        let ds = Dataset {
            sequences,
            lookback,
            train_end,
            examples,
        };
        ds.assert_no_leakage()?;
        Ok(ds)
    }

    /// The largest index any example reads (its target) must be below `train_end`.
    pub fn assert_no_leakage(&self) -> Result<()> {
        match self.examples.iter().map(|e| e.target).max() {
            Some(max) if max >= self.train_end => Err(Error::Leakage {
                index: max,
                train_end: self.train_end,
            }),
            _ => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn window(&self, example: usize) -> Window {
        let e = self.examples[example];
        self.sequences[e.sequence]
            .window(e.target, self.lookback)
            .expect("examples are validated on construction")
    }

    pub fn global_width(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.global.width())
    }

    pub fn local_width(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.local.width())
    }
}
