//! Stage-1 forecast archive and the quarter-hour variation signals derived from it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::HourEstimate;
use crate::timegrid::{hour_of, DemandKind, StationId, QUARTERS_PER_HOUR};

/// Summary of one Stage-1 forecast distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub mu: f64,
    /// Standard deviation of the forecast samples.
    pub sigma: f64,
    /// Standard deviation of the NB distribution itself.
    pub sigma_analytic: f64,
}

impl ArchiveEntry {
    pub fn estimate(&self) -> HourEstimate {
        HourEstimate {
            mu: self.mu,
            sigma: self.sigma,
        }
    }
}

/// Rolling Stage-1 forecasts keyed by (station, forecast hour).
///
/// Entries are appended in forecast-time order; hours never forecast stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Archive {
    pub kind: DemandKind,
    pub hours: usize,
    entries: BTreeMap<StationId, Vec<Option<ArchiveEntry>>>,
    last: BTreeMap<StationId, usize>,
}

impl Stage1Archive {
    pub fn new(kind: DemandKind, hours: usize) -> Self {
        Stage1Archive {
            kind,
            hours,
            entries: BTreeMap::new(),
            last: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, station: &StationId, hour: usize, entry: ArchiveEntry) -> Result<()> {
        if hour >= self.hours {
            return Err(Error::invalid(format!("hour {hour} outside archive of {} hours", self.hours)));
        }
        if !(entry.mu > 0.0 && entry.mu.is_finite()) || !(entry.sigma >= 0.0) || !(entry.sigma_analytic >= 0.0) {
            return Err(Error::invalid(format!("invalid archive entry for {station} at hour {hour}: {entry:?}")));
        }
        if let Some(&prev) = self.last.get(station) {
            if hour <= prev {
                return Err(Error::invalid(format!(
                    "archive for {station} is append-only: hour {hour} after {prev}"
                )));
            }
        }
        self.entries
            .entry(station.clone())
            .or_insert_with(|| vec![None; self.hours])[hour] = Some(entry);
        self.last.insert(station.clone(), hour);
        Ok(())
    }

    /// Appends every station of `other`, whose hours must all follow this archive's.
    pub fn extend(&mut self, other: &Stage1Archive) -> Result<()> {
        if other.kind != self.kind || other.hours != self.hours {
            return Err(Error::invalid("archives of different kinds or lengths"));
        }
        for (id, row) in &other.entries {
            for (h, e) in row.iter().enumerate() {
                if let Some(e) = e {
                    self.push(id, h, *e)?;
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, station: &StationId, hour: usize) -> Option<ArchiveEntry> {
        self.entries.get(station).and_then(|r| r.get(hour).copied().flatten())
    }

    pub fn stations(&self) -> impl Iterator<Item = &StationId> {
        self.entries.keys()
    }

    /// Entries of one station (all `None` for an unknown station).
    pub fn row(&self, station: &StationId) -> Vec<Option<ArchiveEntry>> {
        self.entries.get(station).cloned().unwrap_or_else(|| vec![None; self.hours])
    }

    pub fn estimates(&self, station: &StationId) -> Vec<Option<HourEstimate>> {
        self.row(station).iter().map(|e| e.map(|e| e.estimate())).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(|r| r.iter().flatten().count()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `station_id,hour_index,mu,sigma`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "station_id,hour_index,mu,sigma")?;
        for (id, row) in &self.entries {
            for (h, e) in row.iter().enumerate() {
                if let Some(e) = e {
                    writeln!(w, "{id},{h},{},{}", e.mu, e.sigma)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

/// Deviation of a quarter from its share of the Stage-1 hourly mean.
pub fn variation_delta(y: u32, mu_parent: f64) -> f64 {
    y as f64 - mu_parent / QUARTERS_PER_HOUR as f64
}

/// Per-quarter deviations `y_q − μ̂_parent/4`; `None` where the parent hour has no forecast.
pub fn variation_deltas(quarters: &[u32], archive: &[Option<ArchiveEntry>]) -> Result<Vec<Option<f64>>> {
    if archive.len() * QUARTERS_PER_HOUR != quarters.len() {
        return Err(Error::invalid("archive hours do not match the quarter series"));
    }
    Ok(quarters
        .iter()
        .enumerate()
        .map(|(q, &y)| archive[hour_of(q)].map(|e| variation_delta(y, e.mu)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationSignal {
    pub quarter: usize,
    pub delta_pickup: f64,
    pub delta_dropoff: f64,
}

/// Pickup and drop-off deviations for one station, paired; a gap in either is a gap.
pub fn variation_signals(
    pickups: &[u32],
    dropoffs: &[u32],
    pickup_archive: &[Option<ArchiveEntry>],
    dropoff_archive: &[Option<ArchiveEntry>],
) -> Result<Vec<Option<VariationSignal>>> {
    let p = variation_deltas(pickups, pickup_archive)?;
    let d = variation_deltas(dropoffs, dropoff_archive)?;
    if p.len() != d.len() {
        return Err(Error::invalid("pickup and drop-off series differ in length"));
    }
    Ok(p.into_iter()
        .zip(d)
        .enumerate()
        .map(|(quarter, pair)| match pair {
            (Some(delta_pickup), Some(delta_dropoff)) => Some(VariationSignal {
                quarter,
                delta_pickup,
                delta_dropoff,
            }),
            _ => None,
        })
        .collect())
}

/// `station_id,quarter_index,delta_pickup,delta_dropoff`; gaps leave both deltas empty.
pub fn write_signals_csv(signals: &BTreeMap<StationId, Vec<Option<VariationSignal>>>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "station_id,quarter_index,delta_pickup,delta_dropoff")?;
    for (id, row) in signals {
        for (q, s) in row.iter().enumerate() {
            match s {
                Some(s) => writeln!(w, "{id},{q},{},{}", s.delta_pickup, s.delta_dropoff)?,
                None => writeln!(w, "{id},{q},,")?,
            }
        }
    }
    w.flush()?;
    Ok(())
}
