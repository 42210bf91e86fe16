//! Time discretization shared by every other module.
//!
//! Intervals are half-open: interval `t` covers `[start + t·η, start + (t+1)·η)`,
//! so a timestamp that falls exactly on a boundary belongs to the later
//! interval. All timestamps are naive local times in a single service
//! timezone with a fixed UTC offset; daylight-saving transitions are not
//! modelled.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TripRecord;

/// Identifier of a bike-share station as it appears in the source data.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub String);

impl StationId {
    pub fn new(id: impl Into<String>) -> Self {
        StationId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StationId {
    fn from(s: &str) -> Self {
        StationId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandKind {
    Pickup,
    Dropoff,
}

impl DemandKind {
    pub const ALL: [DemandKind; 2] = [DemandKind::Pickup, DemandKind::Dropoff];

    pub fn as_str(self) -> &'static str {
        match self {
            DemandKind::Pickup => "pickup",
            DemandKind::Dropoff => "dropoff",
        }
    }
}

impl fmt::Display for DemandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DemandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pickup" => Ok(DemandKind::Pickup),
            "dropoff" | "drop-off" => Ok(DemandKind::Dropoff),
            other => Err(Error::config(format!("unknown demand kind `{other}`"))),
        }
    }
}

/// A fixed discretization of time into `length` intervals of `resolution` minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: NaiveDateTime,
    resolution: u32,
    length: usize,
}

pub const QUARTERS_PER_HOUR: usize = 4;

impl TimeGrid {
    /// Builds a grid; only 15- and 60-minute resolutions are supported.
    pub fn new(start: NaiveDateTime, resolution: u32, length: usize) -> Result<Self> {
        if resolution != 15 && resolution != 60 {
            return Err(Error::invalid(format!(
                "unsupported resolution {resolution} min (expected 15 or 60)"
            )));
        }
        if length == 0 {
            return Err(Error::invalid("time grid must contain at least one interval"));
        }
        Ok(TimeGrid {
            start,
            resolution,
            length,
        })
    }

    /// Grid covering `days` whole days from local midnight of `date`.
    pub fn daily(date: NaiveDate, resolution: u32, days: usize) -> Result<Self> {
        let per_day = (24 * 60 / resolution.max(1)) as usize;
        Self::new(date.and_hms_opt(0, 0, 0).expect("midnight"), resolution, days * per_day)
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn is_quarter_hourly(&self) -> bool {
        self.resolution == 15
    }

    pub fn end(&self) -> NaiveDateTime {
        self.interval_start(self.length)
    }

    /// Start timestamp of interval `t` (also valid for `t == len()`, the grid end).
    pub fn interval_start(&self, t: usize) -> NaiveDateTime {
        self.start + Duration::minutes(self.resolution as i64 * t as i64)
    }

    /// Index of the interval containing `ts`, or `None` if outside the grid.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        if ts < self.start {
            return None;
        }
        let secs = (ts - self.start).num_seconds();
        let idx = (secs / (self.resolution as i64 * 60)) as usize;
        (idx < self.length).then_some(idx)
    }

    pub fn intervals_per_day(&self) -> usize {
        (24 * 60 / self.resolution) as usize
    }

    /// Calendar attributes of interval `t`.
    pub fn calendar(&self, t: usize) -> CalendarSlot {
        let ts = self.interval_start(t);
        CalendarSlot {
            date: ts.date(),
            day_of_week: ts.weekday().num_days_from_monday() as u8,
            hour: ts.hour() as u8,
            quarter: if self.is_quarter_hourly() {
                Some((ts.minute() / 15) as u8)
            } else {
                None
            },
        }
    }

    /// The hourly grid with the same start, for a 15-minute grid whose length is a whole number of hours.
    pub fn hourly(&self) -> Result<TimeGrid> {
        if !self.is_quarter_hourly() {
            return Err(Error::invalid("hourly() requires a 15-minute grid"));
        }
        if !self.length.is_multiple_of(QUARTERS_PER_HOUR) {
            return Err(Error::invalid(format!(
                "grid length {} is not a whole number of hours",
                self.length
            )));
        }
        TimeGrid::new(self.start, 60, self.length / QUARTERS_PER_HOUR)
    }

    /// Sub-grid covering `range` of this grid.
    pub fn slice(&self, range: Range<usize>) -> Result<TimeGrid> {
        if range.end > self.length || range.start >= range.end {
            return Err(Error::invalid(format!(
                "slice {range:?} outside grid of length {}",
                self.length
            )));
        }
        TimeGrid::new(self.interval_start(range.start), self.resolution, range.len())
    }
}

/// Parent hour of quarter `q` on a 15-minute grid sharing its start with the hourly grid.
pub fn hour_of(quarter: usize) -> usize {
    quarter / QUARTERS_PER_HOUR
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarSlot {
    pub date: NaiveDate,
    /// Monday = 0 … Sunday = 6.
    pub day_of_week: u8,
    pub hour: u8,
    pub quarter: Option<u8>,
}

/// Per-station counts on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    pub station: StationId,
    pub grid: TimeGrid,
    pub kind: DemandKind,
    pub values: Vec<u32>,
}

impl DemandSeries {
    pub fn new(station: StationId, grid: TimeGrid, kind: DemandKind, values: Vec<u32>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "series length {} does not match grid length {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(DemandSeries {
            station,
            grid,
            kind,
            values,
        })
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&v| v as u64).sum()
    }
}

/// Output of trip aggregation: the series plus the number of matching trips outside the grid.
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub series: DemandSeries,
    pub discarded: usize,
}

fn endpoint(trip: &TripRecord, kind: DemandKind) -> (&StationId, NaiveDateTime) {
    match kind {
        DemandKind::Pickup => (&trip.origin, trip.start_time),
        DemandKind::Dropoff => (&trip.destination, trip.end_time),
    }
}

/// Counts trips of `station` per interval, using the origin/start for pickups and
/// the destination/end for drop-offs.
pub fn aggregate_trips(
    trips: &[TripRecord],
    grid: &TimeGrid,
    station: &StationId,
    kind: DemandKind,
) -> Aggregation {
    let mut values = vec![0u32; grid.len()];
    let mut discarded = 0;
    for trip in trips {
        let (at, ts) = endpoint(trip, kind);
        if at != station {
            continue;
        }
        match grid.index_of(ts) {
            Some(t) => values[t] += 1,
            None => discarded += 1,
        }
    }
    Aggregation {
        series: DemandSeries {
            station: station.clone(),
            grid: *grid,
            kind,
            values,
        },
        discarded,
    }
}

/// Aggregates every listed station in a single pass over the trips.
///
/// Trips whose endpoint is not in `stations` are ignored for that endpoint;
/// the returned tally counts in-network endpoints that fall outside the grid.
pub fn aggregate_network(
    trips: &[TripRecord],
    grid: &TimeGrid,
    stations: &[StationId],
    kind: DemandKind,
) -> (BTreeMap<StationId, DemandSeries>, usize) {
    let slot: BTreeMap<&StationId, usize> = stations.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut values = vec![vec![0u32; grid.len()]; stations.len()];
    let mut discarded = 0;
    for trip in trips {
        let (at, ts) = endpoint(trip, kind);
        let Some(&i) = slot.get(at) else { continue };
        match grid.index_of(ts) {
            Some(t) => values[i][t] += 1,
            None => discarded += 1,
        }
    }
    let out = stations
        .iter()
        .zip(values)
        .map(|(s, v)| {
            (
                s.clone(),
                DemandSeries {
                    station: s.clone(),
                    grid: *grid,
                    kind,
                    values: v,
                },
            )
        })
        .collect();
    (out, discarded)
}

/// Sums each group of four quarters into its hour.
pub fn downsample_to_hourly(series: &DemandSeries) -> Result<DemandSeries> {
    let grid = series.grid.hourly()?;
    let values = series
        .values
        .chunks_exact(QUARTERS_PER_HOUR)
        .map(|c| c.iter().sum())
        .collect();
    Ok(DemandSeries {
        station: series.station.clone(),
        grid,
        kind: series.kind,
        values,
    })
}

/// Train/test boundary: training is `[0, train_end)`, testing `[train_end, test_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: usize,
    pub test_end: usize,
}

impl SplitSpec {
    pub fn new(train_end: usize, test_end: usize) -> Self {
        SplitSpec { train_end, test_end }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.train_end == 0 {
            return Err(Error::invalid("training split is empty"));
        }
        if self.train_end >= self.test_end {
            return Err(Error::invalid(format!(
                "train_end {} must precede test_end {}",
                self.train_end, self.test_end
            )));
        }
        if self.test_end > len {
            return Err(Error::invalid(format!(
                "test_end {} beyond series length {len}",
                self.test_end
            )));
        }
        Ok(())
    }

    pub fn train(&self) -> Range<usize> {
        0..self.train_end
    }

    pub fn test(&self) -> Range<usize> {
        self.train_end..self.test_end
    }

    /// The same boundaries expressed on the hourly grid; both ends must be hour-aligned.
    pub fn to_hourly(&self) -> Result<SplitSpec> {
        if !self.train_end.is_multiple_of(QUARTERS_PER_HOUR) || !self.test_end.is_multiple_of(QUARTERS_PER_HOUR) {
            return Err(Error::invalid("split boundaries must fall on whole hours"));
        }
        Ok(SplitSpec {
            train_end: self.train_end / QUARTERS_PER_HOUR,
            test_end: self.test_end / QUARTERS_PER_HOUR,
        })
    }
}

/// Splits `series` into disjoint contiguous train and test views.
pub fn split<'a>(series: &'a DemandSeries, spec: &SplitSpec) -> Result<(&'a [u32], &'a [u32])> {
    spec.validate(series.values.len())?;
    Ok((&series.values[spec.train()], &series.values[spec.test()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").unwrap()
    }

    fn trip(start: &str, origin: &str, dest: &str) -> TripRecord {
        TripRecord {
            start_time: ts(start),
            end_time: ts(start) + Duration::minutes(10),
            origin: origin.into(),
            destination: dest.into(),
        }
    }

    #[test]
    fn one_day_grids() {
        let g = TimeGrid::new(ts("2022-10-02T00:00:00"), 15, 96).unwrap();
        assert_eq!(g.end(), ts("2022-10-03T00:00:00"));
        let h = TimeGrid::new(ts("2022-10-02T00:00:00"), 60, 24).unwrap();
        assert_eq!(h.end(), g.end());
        assert!(TimeGrid::new(ts("2022-10-02T00:00:00"), 20, 10).is_err());
        assert!(TimeGrid::new(ts("2022-10-02T00:00:00"), 15, 0).is_err());
    }

    #[test]
    fn calendar_of_sunday_midnight() {
        let g = TimeGrid::new(ts("2022-10-02T00:00:00"), 15, 96).unwrap();
        let c = g.calendar(0);
        assert_eq!(c.day_of_week, 6);
        assert_eq!(c.hour, 0);
        assert_eq!(c.quarter, Some(0));
        let c = g.calendar(4 * 13 + 3);
        assert_eq!((c.hour, c.quarter), (13, Some(3)));
    }

    #[test]
    fn aggregation_examples() {
        let g = TimeGrid::new(ts("2022-10-02T08:00:00"), 15, 8).unwrap();
        let s = StationId::from("A");
        let none = aggregate_trips(&[], &g, &s, DemandKind::Pickup);
        assert!(none.series.values.iter().all(|&v| v == 0));

        let trips = vec![
            trip("2022-10-02T08:01:00", "A", "B"),
            trip("2022-10-02T08:07:00", "A", "B"),
            trip("2022-10-02T08:14:00", "A", "B"),
        ];
        let agg = aggregate_trips(&trips, &g, &s, DemandKind::Pickup);
        assert_eq!(agg.series.values[0], 3);

        let boundary = vec![trip("2022-10-02T08:15:00", "A", "B")];
        let agg = aggregate_trips(&boundary, &g, &s, DemandKind::Pickup);
        assert_eq!(agg.series.values[0], 0);
        assert_eq!(agg.series.values[1], 1);
    }

    #[test]
    fn aggregation_discards_outside_grid() {
        let g = TimeGrid::new(ts("2022-10-02T08:00:00"), 15, 4).unwrap();
        let trips = vec![
            trip("2022-10-02T07:59:59", "A", "B"),
            trip("2022-10-02T09:00:00", "A", "B"),
            trip("2022-10-02T08:30:00", "A", "B"),
        ];
        let agg = aggregate_trips(&trips, &g, &"A".into(), DemandKind::Pickup);
        assert_eq!(agg.series.total(), 1);
        assert_eq!(agg.discarded, 2);
        // drop-offs are keyed by destination and end time
        let agg = aggregate_trips(&trips, &g, &"B".into(), DemandKind::Dropoff);
        assert_eq!(agg.series.values[2], 1);
    }

    #[test]
    fn downsample_examples() {
        let g = TimeGrid::new(ts("2022-10-02T00:00:00"), 15, 8).unwrap();
        let mk = |v: Vec<u32>| DemandSeries::new("A".into(), g.slice(0..v.len()).unwrap(), DemandKind::Pickup, v).unwrap();
        assert_eq!(downsample_to_hourly(&mk(vec![0, 1, 0, 2])).unwrap().values, vec![3]);
        assert_eq!(downsample_to_hourly(&mk(vec![0; 8])).unwrap().values, vec![0, 0]);
        assert_eq!(
            downsample_to_hourly(&mk(vec![1, 1, 1, 1, 2, 0, 0, 0])).unwrap().values,
            vec![4, 2]
        );
        assert!(downsample_to_hourly(&mk(vec![1, 2, 3])).is_err());
        let hourly = downsample_to_hourly(&mk(vec![0, 1, 0, 2])).unwrap();
        assert!(downsample_to_hourly(&hourly).is_err());
    }

    #[test]
    fn split_examples() {
        let g = TimeGrid::new(ts("2022-10-02T00:00:00"), 15, 10).unwrap();
        let s = DemandSeries::new("A".into(), g, DemandKind::Pickup, (0..10).collect()).unwrap();
        let (train, test) = split(&s, &SplitSpec::new(7, 10)).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert!(split(&s, &SplitSpec::new(0, 10)).is_err());
        assert!(split(&s, &SplitSpec::new(7, 11)).is_err());
        assert!(split(&s, &SplitSpec::new(7, 7)).is_err());
    }

    proptest! {
        #[test]
        fn conservation_and_commuting(offsets in proptest::collection::vec(0i64..(6 * 3600), 0..200)) {
            let start = ts("2022-10-02T00:00:00");
            let trips: Vec<TripRecord> = offsets
                .iter()
                .map(|&o| TripRecord {
                    start_time: start + Duration::seconds(o),
                    end_time: start + Duration::seconds(o + 60),
                    origin: "A".into(),
                    destination: "B".into(),
                })
                .collect();
            // 4-hour grid: some trips fall outside
            let q = TimeGrid::new(start, 15, 16).unwrap();
            let h = TimeGrid::new(start, 60, 4).unwrap();
            let aq = aggregate_trips(&trips, &q, &"A".into(), DemandKind::Pickup);
            let ah = aggregate_trips(&trips, &h, &"A".into(), DemandKind::Pickup);
            prop_assert_eq!(aq.series.total() as usize + aq.discarded, trips.len());
            prop_assert_eq!(downsample_to_hourly(&aq.series).unwrap().values, ah.series.values);
            let (net, disc) = aggregate_network(&trips, &q, &["A".into(), "C".into()], DemandKind::Pickup);
            prop_assert_eq!(&net[&StationId::from("A")].values, &aq.series.values);
            prop_assert_eq!(disc, aq.discarded);
        }

        #[test]
        fn split_is_disjoint_and_complete(len in 2usize..200, a in 0usize..200, b in 0usize..200) {
            let g = TimeGrid::new(ts("2022-10-02T00:00:00"), 15, len).unwrap();
            let s = DemandSeries::new("A".into(), g, DemandKind::Pickup, (0..len as u32).collect()).unwrap();
            let spec = SplitSpec::new(a, b);
            if let Ok((train, test)) = split(&s, &spec) {
                prop_assert_eq!(train.len() + test.len(), b);
                prop_assert!(train.iter().all(|x| !test.contains(x)));
                prop_assert_eq!(train.last().map(|&v| v + 1), test.first().copied());
            } else {
                prop_assert!(a == 0 || a >= b || b > len);
            }
        }
    }
}
