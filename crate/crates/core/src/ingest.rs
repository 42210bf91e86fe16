//! CSV ingestion for trips, metro passenger flows, weather, holidays and
//! station metadata, plus the bike-to-metro proximity linkage.
//!
//! Schemas are fixed (no inference):
//!
//! | file                 | header                                                 |
//! |----------------------|--------------------------------------------------------|
//! | `trips.csv`          | `start_time,end_time,start_station_id,end_station_id`  |
//! | `metro.csv`          | `interval_start,metro_station_id,check_ins,check_outs` |
//! | `weather.csv`        | `hour_start,temperature_c,precip_mm,wind_mps`          |
//! | `stations.csv`       | `station_id,lat,lon,capacity`                          |
//! | `metro_stations.csv` | `metro_station_id,lat,lon`                             |
//! | `holidays.txt`       | one ISO date per line                                  |
//!
//! Timestamps are ISO-8601 local times (`2022-10-02T08:15:00`; a space
//! separator and missing seconds are accepted).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timegrid::StationId;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const DEFAULT_PROXIMITY_M: f64 = 300.0;
pub const DEFAULT_WEATHER_GAP_HOURS: i64 = 3;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetroId(pub String);

impl fmt::Display for MetroId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MetroId {
    fn from(s: &str) -> Self {
        MetroId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub start_time: NaiveDateTime,
    pub end_time: NaiveDateTime,
    pub origin: StationId,
    pub destination: StationId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(format!("coordinates ({lat}, {lon}) out of range")));
        }
        Ok(GeoPoint { lat, lon })
    }

    /// Great-circle distance in meters on a sphere of radius 6 371 km.
    pub fn haversine_m(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lon - self.lon).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub id: StationId,
    pub location: GeoPoint,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetroStation {
    pub id: MetroId,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetroFlowRecord {
    pub metro_station: MetroId,
    pub interval_start: NaiveDateTime,
    pub check_ins: u32,
    pub check_outs: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub hour_start: NaiveDateTime,
    pub temperature: f64,
    pub precipitation: f64,
    pub wind_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityLink {
    pub bike_station: StationId,
    pub metro_stations: BTreeSet<MetroId>,
    pub threshold_m: f64,
}

impl ProximityLink {
    pub fn is_connected(&self) -> bool {
        !self.metro_stations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectClass {
    /// Wrong number of fields.
    MalformedRow,
    BadTimestamp,
    /// Empty station identifier.
    MissingStation,
    NegativeDuration,
    /// Count or measurement that does not parse or is out of range.
    BadValue,
}

impl RejectClass {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectClass::MalformedRow => "malformed_row",
            RejectClass::BadTimestamp => "bad_timestamp",
            RejectClass::MissingStation => "missing_station",
            RejectClass::NegativeDuration => "negative_duration",
            RejectClass::BadValue => "bad_value",
        }
    }
}

/// Per-class tally of skipped rows. `rows == accepted + Σ rejected`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub rows: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<RejectClass, usize>,
}

impl RejectionReport {
    fn accept(&mut self) {
        self.rows += 1;
        self.accepted += 1;
    }

    fn reject(&mut self, class: RejectClass) {
        self.rows += 1;
        *self.rejected.entry(class).or_default() += 1;
    }

    pub fn count(&self, class: RejectClass) -> usize {
        self.rejected.get(&class).copied().unwrap_or(0)
    }

    pub fn total_rejected(&self) -> usize {
        self.rejected.values().sum()
    }
}

impl fmt::Display for RejectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rows={} accepted={}", self.rows, self.accepted)?;
        for (class, n) in &self.rejected {
            write!(f, " {}={}", class.as_str(), n)?;
        }
        Ok(())
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

/// Opens `path` and resolves the positions of `columns` in its header.
fn open_csv<const N: usize>(path: &Path, columns: [&str; N]) -> Result<(csv::Reader<File>, [usize; N])> {
    let file = File::open(path).map_err(|e| Error::data(path, format!("cannot open: {e}")))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; N];
    for (slot, col) in idx.iter_mut().zip(columns) {
        *slot = headers.iter().position(|h| h == col).ok_or_else(|| Error::MissingColumn {
            path: path.to_owned(),
            column: col.to_owned(),
        })?;
    }
    Ok((reader, idx))
}

fn field(row: &csv::StringRecord, i: usize) -> Option<&str> {
    row.get(i)
}

/// Reads trip records; malformed rows are tallied per class and skipped.
pub fn parse_trips(path: impl AsRef<Path>) -> Result<(Vec<TripRecord>, RejectionReport)> {
    let path = path.as_ref();
    let (mut reader, [c_start, c_end, c_origin, c_dest]) =
        open_csv(path, ["start_time", "end_time", "start_station_id", "end_station_id"])?;
    let width = reader.headers()?.len();
    let mut out = Vec::new();
    let mut report = RejectionReport::default();
    for row in reader.records() {
        let row = row?;
        if row.len() != width {
            report.reject(RejectClass::MalformedRow);
            continue;
        }
        let (Some(start), Some(end)) = (
            field(&row, c_start).and_then(parse_timestamp),
            field(&row, c_end).and_then(parse_timestamp),
        ) else {
            report.reject(RejectClass::BadTimestamp);
            continue;
        };
        let origin = field(&row, c_origin).unwrap_or_default();
        let dest = field(&row, c_dest).unwrap_or_default();
        if origin.is_empty() || dest.is_empty() {
            report.reject(RejectClass::MissingStation);
            continue;
        }
        if end < start {
            report.reject(RejectClass::NegativeDuration);
            continue;
        }
        report.accept();
        out.push(TripRecord {
            start_time: start,
            end_time: end,
            origin: StationId::new(origin),
            destination: StationId::new(dest),
        });
    }
    Ok((out, report))
}

/// Reads per-interval metro check-ins and check-outs.
pub fn parse_metro(path: impl AsRef<Path>) -> Result<(Vec<MetroFlowRecord>, RejectionReport)> {
    let path = path.as_ref();
    let (mut reader, [c_ts, c_id, c_in, c_out]) =
        open_csv(path, ["interval_start", "metro_station_id", "check_ins", "check_outs"])?;
    let width = reader.headers()?.len();
    let mut out = Vec::new();
    let mut report = RejectionReport::default();
    for row in reader.records() {
        let row = row?;
        if row.len() != width {
            report.reject(RejectClass::MalformedRow);
            continue;
        }
        let Some(ts) = field(&row, c_ts).and_then(parse_timestamp) else {
            report.reject(RejectClass::BadTimestamp);
            continue;
        };
        let id = field(&row, c_id).unwrap_or_default();
        if id.is_empty() {
            report.reject(RejectClass::MissingStation);
            continue;
        }
        let (Some(ins), Some(outs)) = (
            field(&row, c_in).and_then(|s| s.parse::<u32>().ok()),
            field(&row, c_out).and_then(|s| s.parse::<u32>().ok()),
        ) else {
            report.reject(RejectClass::BadValue);
            continue;
        };
        report.accept();
        out.push(MetroFlowRecord {
            metro_station: MetroId(id.to_owned()),
            interval_start: ts,
            check_ins: ins,
            check_outs: outs,
        });
    }
    Ok((out, report))
}

/// Reads hourly weather, sorts it, and forward-fills missing hours.
///
/// A run of more than `gap_limit` consecutive missing hours is an error.
/// Duplicate hours keep the first occurrence.
pub fn parse_weather(
    path: impl AsRef<Path>,
    gap_limit: i64,
) -> Result<(Vec<WeatherRecord>, RejectionReport)> {
    let path = path.as_ref();
    let (mut reader, [c_ts, c_t, c_p, c_w]) =
        open_csv(path, ["hour_start", "temperature_c", "precip_mm", "wind_mps"])?;
    let width = reader.headers()?.len();
    let mut rows = BTreeMap::new();
    let mut report = RejectionReport::default();
    for row in reader.records() {
        let row = row?;
        if row.len() != width {
            report.reject(RejectClass::MalformedRow);
            continue;
        }
        let Some(ts) = field(&row, c_ts).and_then(parse_timestamp) else {
            report.reject(RejectClass::BadTimestamp);
            continue;
        };
        let num = |i| field(&row, i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        let (Some(t), Some(p), Some(w)) = (num(c_t), num(c_p), num(c_w)) else {
            report.reject(RejectClass::BadValue);
            continue;
        };
        if p < 0.0 || w < 0.0 {
            report.reject(RejectClass::BadValue);
            continue;
        }
        report.accept();
        rows.entry(ts).or_insert(WeatherRecord {
            hour_start: ts,
            temperature: t,
            precipitation: p,
            wind_speed: w,
        });
    }
    let filled = forward_fill_hours(rows.into_values().collect(), gap_limit)?;
    Ok((filled, report))
}

/// Forward-fills a sorted hourly weather sequence.
pub fn forward_fill_hours(records: Vec<WeatherRecord>, gap_limit: i64) -> Result<Vec<WeatherRecord>> {
    let mut out: Vec<WeatherRecord> = Vec::with_capacity(records.len());
    for rec in records {
        if let Some(prev) = out.last().copied() {
            let missing = (rec.hour_start - prev.hour_start).num_hours() - 1;
            if missing > gap_limit {
                return Err(Error::WeatherGap {
                    at: rec.hour_start.to_string(),
                    hours: missing,
                    limit: gap_limit,
                });
            }
            for k in 1..=missing {
                out.push(WeatherRecord {
                    hour_start: prev.hour_start + Duration::hours(k),
                    ..prev
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// One ISO date per line; blank lines and `#` comments are ignored.
pub fn load_holidays(path: impl AsRef<Path>) -> Result<BTreeSet<NaiveDate>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::data(path, format!("cannot open: {e}")))?;
    let mut out = BTreeSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let date = NaiveDate::parse_from_str(line, "%Y-%m-%d")
            .map_err(|_| Error::data(path, format!("line {}: bad date `{line}`", n + 1)))?;
        out.insert(date);
    }
    Ok(out)
}

fn parse_point(path: &Path, line: usize, lat: Option<&str>, lon: Option<&str>) -> Result<GeoPoint> {
    let lat = lat.and_then(|s| s.parse::<f64>().ok());
    let lon = lon.and_then(|s| s.parse::<f64>().ok());
    match (lat, lon) {
        (Some(lat), Some(lon)) => {
            GeoPoint::new(lat, lon).map_err(|e| Error::data(path, format!("line {line}: {e}")))
        }
        _ => Err(Error::data(path, format!("line {line}: bad coordinates"))),
    }
}

/// Station metadata. Any invalid row is an error since every later stage depends on it.
pub fn parse_stations(path: impl AsRef<Path>) -> Result<Vec<StationMeta>> {
    let path = path.as_ref();
    let (mut reader, [c_id, c_lat, c_lon, c_cap]) = open_csv(path, ["station_id", "lat", "lon", "capacity"])?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let line = n + 2;
        let id = field(&row, c_id).unwrap_or_default();
        if id.is_empty() {
            return Err(Error::data(path, format!("line {line}: empty station_id")));
        }
        if !seen.insert(id.to_owned()) {
            return Err(Error::data(path, format!("line {line}: duplicate station `{id}`")));
        }
        let location = parse_point(path, line, field(&row, c_lat), field(&row, c_lon))?;
        let capacity = field(&row, c_cap)
            .and_then(|s| s.parse::<u32>().ok())
            .filter(|&c| c >= 1)
            .ok_or_else(|| Error::data(path, format!("line {line}: capacity must be a positive integer")))?;
        out.push(StationMeta {
            id: StationId::new(id),
            location,
            capacity,
        });
    }
    Ok(out)
}

pub fn parse_metro_stations(path: impl AsRef<Path>) -> Result<Vec<MetroStation>> {
    let path = path.as_ref();
    let (mut reader, [c_id, c_lat, c_lon]) = open_csv(path, ["metro_station_id", "lat", "lon"])?;
    let mut out = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let line = n + 2;
        let id = field(&row, c_id).unwrap_or_default();
        if id.is_empty() {
            return Err(Error::data(path, format!("line {line}: empty metro_station_id")));
        }
        let location = parse_point(path, line, field(&row, c_lat), field(&row, c_lon))?;
        out.push(MetroStation {
            id: MetroId(id.to_owned()),
            location,
        });
    }
    Ok(out)
}

/// Links each bike station to every metro station within `threshold_m` meters.
pub fn link_metro_stations(
    bikes: &[StationMeta],
    metros: &[MetroStation],
    threshold_m: f64,
) -> Vec<ProximityLink> {
    bikes
        .iter()
        .map(|b| ProximityLink {
            bike_station: b.id.clone(),
            metro_stations: metros
                .iter()
                .filter(|m| b.location.haversine_m(&m.location) <= threshold_m)
                .map(|m| m.id.clone())
                .collect(),
            threshold_m,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const TRIP_HEADER: &str = "start_time,end_time,start_station_id,end_station_id\n";

    #[test]
    fn trips_empty_and_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.csv", TRIP_HEADER);
        let (trips, report) = parse_trips(&p).unwrap();
        assert!(trips.is_empty());
        assert_eq!(report.total_rejected(), 0);

        let body = format!(
            "{TRIP_HEADER}2022-10-02T08:01:00,2022-10-02T08:20:00,A,B\n2022-10-02 09:00,2022-10-02 09:30,B,A\n"
        );
        let p = write(&dir, "t2.csv", &body);
        let (trips, report) = parse_trips(&p).unwrap();
        assert_eq!(trips.len(), 2);
        assert_eq!(trips[0].origin, StationId::from("A"));
        assert_eq!(trips[1].origin, StationId::from("B"));
        assert_eq!(report.accepted, 2);
    }

    #[test]
    fn trips_rejection_classes() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{TRIP_HEADER}\
             2022-10-02T08:30:00,2022-10-02T08:20:00,A,B\n\
             yesterday,2022-10-02T08:20:00,A,B\n\
             2022-10-02T08:00:00,2022-10-02T08:20:00,,B\n\
             2022-10-02T08:00:00,2022-10-02T08:20:00,A\n\
             2022-10-02T08:00:00,2022-10-02T08:00:00,A,A\n"
        );
        let p = write(&dir, "t.csv", &body);
        let (trips, report) = parse_trips(&p).unwrap();
        assert_eq!(trips.len(), 1);
        assert_eq!(report.count(RejectClass::NegativeDuration), 1);
        assert_eq!(report.count(RejectClass::BadTimestamp), 1);
        assert_eq!(report.count(RejectClass::MissingStation), 1);
        assert_eq!(report.count(RejectClass::MalformedRow), 1);
        assert_eq!(report.rows, report.accepted + report.total_rejected());
    }

    #[test]
    fn missing_file_and_column() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(parse_trips(dir.path().join("nope.csv")), Err(Error::Data { .. })));
        let p = write(&dir, "t.csv", "start_time,end_time,start_station_id\n");
        match parse_trips(&p) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "end_station_id"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weather_forward_fill() {
        let dir = tempfile::tempdir().unwrap();
        let body = "hour_start,temperature_c,precip_mm,wind_mps\n\
                    2022-10-02T00:00,10,0,1\n\
                    2022-10-02T03:00,13,0.5,2\n\
                    2022-10-02T04:00,14,-1,2\n";
        let p = write(&dir, "w.csv", body);
        let (w, report) = parse_weather(&p, 3).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[1].temperature, 10.0);
        assert_eq!(w[2].hour_start, parse_timestamp("2022-10-02T02:00").unwrap());
        assert_eq!(report.count(RejectClass::BadValue), 1);
        assert!(matches!(parse_weather(&p, 1), Err(Error::WeatherGap { hours: 2, .. })));
    }

    #[test]
    fn metro_and_holidays() {
        let dir = tempfile::tempdir().unwrap();
        let body = "interval_start,metro_station_id,check_ins,check_outs\n\
                    2022-10-02T08:00,M1,10,7\n\
                    2022-10-02T08:15,M1,x,7\n";
        let p = write(&dir, "m.csv", body);
        let (m, report) = parse_metro(&p).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].check_outs, 7);
        assert_eq!(report.count(RejectClass::BadValue), 1);

        let p = write(&dir, "h.txt", "# federal\n2022-12-25\n\n2022-11-24\n");
        let h = load_holidays(&p).unwrap();
        assert!(h.contains(&NaiveDate::from_ymd_opt(2022, 12, 25).unwrap()));
        assert_eq!(h.len(), 2);
        let p = write(&dir, "bad.txt", "2022-13-40\n");
        assert!(load_holidays(&p).is_err());
    }

    #[test]
    fn stations_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.csv", "station_id,lat,lon,capacity\nA,38.9,-77.0,15\n");
        assert_eq!(parse_stations(&p).unwrap()[0].capacity, 15);
        let p = write(&dir, "s.csv", "station_id,lat,lon,capacity\nA,38.9,-77.0,0\n");
        assert!(parse_stations(&p).is_err());
        let p = write(&dir, "s.csv", "station_id,lat,lon,capacity\nA,98.9,-77.0,3\n");
        assert!(parse_stations(&p).is_err());
    }

    fn bike(id: &str, lat: f64, lon: f64) -> StationMeta {
        StationMeta {
            id: id.into(),
            location: GeoPoint::new(lat, lon).unwrap(),
            capacity: 10,
        }
    }

    fn metro(id: &str, lat: f64, lon: f64) -> MetroStation {
        MetroStation {
            id: id.into(),
            location: GeoPoint::new(lat, lon).unwrap(),
        }
    }

    #[test]
    fn haversine_reference_distance() {
        // 0.009 degrees of latitude on a 6371 km sphere: 6371000 * 0.009 * pi / 180
        let a = GeoPoint::new(38.9000, -77.0300).unwrap();
        let b = GeoPoint::new(38.9090, -77.0300).unwrap();
        assert!((a.haversine_m(&b) - 1000.7543).abs() < 1e-3);
        // 1 degree of longitude at the equator is 111194.93 m on this sphere
        let c = GeoPoint::new(0.0, 0.0).unwrap();
        let d = GeoPoint::new(0.0, 1.0).unwrap();
        assert!((c.haversine_m(&d) - 111_194.926_6).abs() < 1e-3);
    }

    #[test]
    fn link_examples() {
        let bikes = [bike("A", 38.9, -77.03)];
        let same = link_metro_stations(&bikes, &[metro("M", 38.9, -77.03)], 300.0);
        assert!(same[0].metro_stations.contains(&MetroId::from("M")));
        let far = link_metro_stations(&bikes, &[metro("M", 38.909, -77.03)], 300.0);
        assert!(!far[0].is_connected());
        let two = link_metro_stations(
            &bikes,
            &[metro("M1", 38.9005, -77.03), metro("M2", 38.9, -77.0305)],
            300.0,
        );
        assert_eq!(two[0].metro_stations.len(), 2);
    }

    proptest! {
        #[test]
        fn links_are_monotone_and_order_free(
            pts in proptest::collection::vec((38.89f64..38.91, -77.04f64..-77.02), 1..12),
            t1 in 50.0f64..800.0, dt in 0.0f64..800.0,
        ) {
            let bikes = [bike("A", 38.9, -77.03)];
            let metros: Vec<MetroStation> = pts.iter().enumerate().map(|(i, &(la, lo))| metro(&format!("M{i}"), la, lo)).collect();
            let mut rev = metros.clone();
            rev.reverse();
            let small = link_metro_stations(&bikes, &metros, t1);
            let large = link_metro_stations(&bikes, &metros, t1 + dt);
            prop_assert!(small[0].metro_stations.is_subset(&large[0].metro_stations));
            prop_assert_eq!(&small[0].metro_stations, &link_metro_stations(&bikes, &rev, t1)[0].metro_stations);
        }
    }
}
