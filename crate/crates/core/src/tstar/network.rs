//! Aggregated network inputs on a shared 15-minute grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{align_weather, MetroFlowGrid};
use crate::ingest::{link_metro_stations, MetroFlowRecord, MetroStation, ProximityLink, StationMeta, TripRecord, WeatherRecord};
use crate::synth::SynthData;
use crate::timegrid::{aggregate_network, DemandKind, StationId, TimeGrid, QUARTERS_PER_HOUR};

const QUARTERS_PER_DAY: usize = 24 * QUARTERS_PER_HOUR;

/// Everything the pipeline reads, aligned to one quarter-hour grid that spans whole days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkData {
    pub grid: TimeGrid,
    pub stations: Vec<StationMeta>,
    pub pickups: BTreeMap<StationId, Vec<u32>>,
    pub dropoffs: BTreeMap<StationId, Vec<u32>>,
    /// One record per hour of the grid.
    pub weather: Vec<WeatherRecord>,
    pub holidays: BTreeSet<NaiveDate>,
    pub metro: MetroFlowGrid,
    pub links: BTreeMap<StationId, ProximityLink>,
}

impl NetworkData {
    pub fn validate(&self) -> Result<()> {
        if !self.grid.is_quarter_hourly() || !self.grid.len().is_multiple_of(QUARTERS_PER_DAY) {
            return Err(Error::invalid("network data needs a 15-minute grid of whole days"));
        }
        if self.weather.len() * QUARTERS_PER_HOUR != self.grid.len() {
            return Err(Error::invalid("weather does not cover every hour of the grid"));
        }
        if self.metro.grid != self.grid {
            return Err(Error::invalid("metro flows use a different grid"));
        }
        let mut seen = BTreeSet::new();
        for s in &self.stations {
            if !seen.insert(&s.id) {
                return Err(Error::invalid(format!("duplicate station {}", s.id)));
            }
            for kind in [DemandKind::Pickup, DemandKind::Dropoff] {
                match self.counts(kind).get(&s.id) {
                    Some(v) if v.len() == self.grid.len() => {}
                    _ => return Err(Error::invalid(format!("{kind} counts for {} do not cover the grid", s.id))),
                }
            }
        }
        Ok(())
    }

    /// Aggregates raw records. Trips outside the grid are ignored.
    #[allow(clippy::too_many_arguments)]
    pub fn from_records(
        grid: TimeGrid,
        stations: Vec<StationMeta>,
        trips: &[TripRecord],
        metro_stations: &[MetroStation],
        metro: &[MetroFlowRecord],
        weather: &[WeatherRecord],
        holidays: BTreeSet<NaiveDate>,
        proximity_m: f64,
        weather_gap_hours: i64,
    ) -> Result<Self> {
        let ids: Vec<StationId> = stations.iter().map(|s| s.id.clone()).collect();
        let series = |kind| {
            aggregate_network(trips, &grid, &ids, kind)
                .0
                .into_iter()
                .map(|(id, s)| (id, s.values))
                .collect()
        };
        let data = NetworkData {
            pickups: series(DemandKind::Pickup),
            dropoffs: series(DemandKind::Dropoff),
            weather: align_weather(weather, &grid.hourly()?, weather_gap_hours)?,
            metro: MetroFlowGrid::from_records(metro, &grid),
            links: link_metro_stations(&stations, metro_stations, proximity_m)
                .into_iter()
                .map(|l| (l.bike_station.clone(), l))
                .collect(),
            grid,
            stations,
            holidays,
        };
        data.validate()?;
        Ok(data)
    }

    /// Uses the generator's counts directly; equivalent to writing and re-ingesting the files.
    pub fn from_synth(data: &SynthData, proximity_m: f64) -> Result<Self> {
        let out = NetworkData {
            grid: data.grid,
            stations: data.stations.clone(),
            pickups: data.pickups.clone(),
            dropoffs: data.dropoffs.clone(),
            weather: data.weather.clone(),
            holidays: data.holidays.clone(),
            metro: MetroFlowGrid::from_records(&data.metro, &data.grid),
            links: link_metro_stations(&data.stations, &data.metro_stations, proximity_m)
                .into_iter()
                .map(|l| (l.bike_station.clone(), l))
                .collect(),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn hourly_grid(&self) -> TimeGrid {
        self.grid.hourly().expect("validated grid spans whole hours")
    }

    pub fn days(&self) -> usize {
        self.grid.len() / QUARTERS_PER_DAY
    }

    pub fn station_ids(&self) -> Vec<StationId> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    pub fn station(&self, id: &StationId) -> Option<&StationMeta> {
        self.stations.iter().find(|s| &s.id == id)
    }

    pub fn counts(&self, kind: DemandKind) -> &BTreeMap<StationId, Vec<u32>> {
        match kind {
            DemandKind::Pickup => &self.pickups,
            DemandKind::Dropoff => &self.dropoffs,
        }
    }

    pub fn counts_mut(&mut self, kind: DemandKind) -> &mut BTreeMap<StationId, Vec<u32>> {
        match kind {
            DemandKind::Pickup => &mut self.pickups,
            DemandKind::Dropoff => &mut self.dropoffs,
        }
    }

    pub fn series(&self, kind: DemandKind, id: &StationId) -> Result<&[u32]> {
        self.counts(kind)
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownStation(id.to_string()))
    }

    pub fn hourly_series(&self, kind: DemandKind, id: &StationId) -> Result<Vec<u32>> {
        Ok(self
            .series(kind, id)?
            .chunks(QUARTERS_PER_HOUR)
            .map(|c| c.iter().sum())
            .collect())
    }

    pub fn link(&self, id: &StationId) -> ProximityLink {
        self.links.get(id).cloned().unwrap_or_else(|| ProximityLink {
            bike_station: id.clone(),
            metro_stations: BTreeSet::new(),
            threshold_m: 0.0,
        })
    }

    /// The days `range` of the data.
    pub fn slice_days(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.days() {
            return Err(Error::invalid(format!("day range {range:?} outside {} days", self.days())));
        }
        let q = range.start * QUARTERS_PER_DAY..range.end * QUARTERS_PER_DAY;
        let h = range.start * 24..range.end * 24;
        let cut = |m: &BTreeMap<StationId, Vec<u32>>| m.iter().map(|(k, v)| (k.clone(), v[q.clone()].to_vec())).collect();
        Ok(NetworkData {
            grid: self.grid.slice(q.clone())?,
            stations: self.stations.clone(),
            pickups: cut(&self.pickups),
            dropoffs: cut(&self.dropoffs),
            weather: self.weather[h].to_vec(),
            holidays: self.holidays.clone(),
            metro: self.metro.slice(q)?,
            links: self.links.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let data: NetworkData = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        data.validate()?;
        Ok(data)
    }
}
