//! Contextual inputs for both forecasting stages.
//!
//! A [`FeatureFrame`] holds, for one station on one grid, static channels
//! (capacity), global channels shared by every station (calendar, holiday,
//! weather) and local per-station channels (Stage-1 estimates, variation
//! signals, metro deviations). Every statistic used here is fit on the
//! training split only.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{MetroFlowRecord, MetroId, ProximityLink, StationMeta, WeatherRecord};
use crate::timegrid::{hour_of, DemandKind, SplitSpec, StationId, TimeGrid, QUARTERS_PER_HOUR};

// ---------------------------------------------------------------------------
// Seasonal profiles

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub mean: f64,
    pub samples: usize,
}

impl ProfileEntry {
    fn from_sum(sum: f64, samples: usize) -> Self {
        ProfileEntry {
            mean: if samples > 0 { sum / samples as f64 } else { 0.0 },
            samples,
        }
    }
}

/// Which level of the fallback hierarchy answered a lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileLevel {
    /// (day-of-week, hour, quarter) key observed in training.
    Key,
    /// Key unseen; answered by the (hour, quarter) mean.
    HourOfDay,
    /// Nothing at the hour level either; answered by the global mean.
    Global,
}

/// Training-split means keyed by (day-of-week, hour-of-day, quarter-of-hour).
///
/// Hourly profiles carry no quarter component. Keys with no training samples
/// are kept with `samples == 0` and resolved through the fallback chain
/// (dow, hour, quarter) → (hour, quarter) → global.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalProfile {
    slots_per_hour: usize,
    by_key: Vec<ProfileEntry>,
    by_hour: Vec<ProfileEntry>,
    global: ProfileEntry,
}

impl SeasonalProfile {
    /// Fits means over `values[..split.train_end]` on `grid`.
    pub fn fit(values: &[f64], grid: &TimeGrid, split: &SplitSpec) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("profile values do not match grid length"));
        }
        split.validate(grid.len())?;
        let slots_per_hour = if grid.is_quarter_hourly() { QUARTERS_PER_HOUR } else { 1 };
        let mut key_sum = vec![(0.0, 0usize); 7 * 24 * slots_per_hour];
        let mut hour_sum = vec![(0.0, 0usize); 24 * slots_per_hour];
        let mut total = (0.0, 0usize);
        for (t, &v) in values[..split.train_end].iter().enumerate() {
            let c = grid.calendar(t);
            let q = c.quarter.unwrap_or(0) as usize;
            let hk = c.hour as usize * slots_per_hour + q;
            let k = c.day_of_week as usize * 24 * slots_per_hour + hk;
            key_sum[k].0 += v;
            key_sum[k].1 += 1;
            hour_sum[hk].0 += v;
            hour_sum[hk].1 += 1;
            total.0 += v;
            total.1 += 1;
        }
        let entries = |s: Vec<(f64, usize)>| s.into_iter().map(|(a, n)| ProfileEntry::from_sum(a, n)).collect();
        Ok(SeasonalProfile {
            slots_per_hour,
            by_key: entries(key_sum),
            by_hour: entries(hour_sum),
            global: ProfileEntry::from_sum(total.0, total.1),
        })
    }

    pub fn fit_counts(values: &[u32], grid: &TimeGrid, split: &SplitSpec) -> Result<Self> {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        Self::fit(&v, grid, split)
    }

    fn slot(&self, hour: u8, quarter: Option<u8>) -> usize {
        let q = if self.slots_per_hour == 1 { 0 } else { quarter.unwrap_or(0) as usize };
        hour as usize * self.slots_per_hour + q
    }

    pub fn entry(&self, dow: u8, hour: u8, quarter: Option<u8>) -> ProfileEntry {
        self.by_key[dow as usize * 24 * self.slots_per_hour + self.slot(hour, quarter)]
    }

    /// Mean for the key, falling back to coarser levels for unseen keys.
    pub fn lookup(&self, dow: u8, hour: u8, quarter: Option<u8>) -> (f64, ProfileLevel) {
        let e = self.entry(dow, hour, quarter);
        if e.samples > 0 {
            return (e.mean, ProfileLevel::Key);
        }
        let h = self.by_hour[self.slot(hour, quarter)];
        if h.samples > 0 {
            return (h.mean, ProfileLevel::HourOfDay);
        }
        (self.global.mean, ProfileLevel::Global)
    }

    pub fn value_at(&self, grid: &TimeGrid, t: usize) -> f64 {
        let c = grid.calendar(t);
        self.lookup(c.day_of_week, c.hour, c.quarter).0
    }

    /// Keys without training samples as (dow, hour, quarter).
    pub fn missing_keys(&self) -> Vec<(u8, u8, Option<u8>)> {
        let sph = self.slots_per_hour;
        self.by_key
            .iter()
            .enumerate()
            .filter(|(_, e)| e.samples == 0)
            .map(|(i, _)| {
                let dow = (i / (24 * sph)) as u8;
                let rem = i % (24 * sph);
                let q = (sph > 1).then_some((rem % sph) as u8);
                (dow, (rem / sph) as u8, q)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Metro passenger flows

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetroSeries {
    pub check_ins: Vec<f64>,
    pub check_outs: Vec<f64>,
}

/// Metro check-ins/outs binned onto a 15-minute grid; absent records count as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetroFlowGrid {
    pub grid: TimeGrid,
    pub stations: BTreeMap<MetroId, MetroSeries>,
}

impl MetroFlowGrid {
    pub fn from_records(records: &[MetroFlowRecord], grid: &TimeGrid) -> Self {
        let mut stations: BTreeMap<MetroId, MetroSeries> = BTreeMap::new();
        for r in records {
            let Some(t) = grid.index_of(r.interval_start) else { continue };
            let s = stations.entry(r.metro_station.clone()).or_insert_with(|| MetroSeries {
                check_ins: vec![0.0; grid.len()],
                check_outs: vec![0.0; grid.len()],
            });
            s.check_ins[t] += r.check_ins as f64;
            s.check_outs[t] += r.check_outs as f64;
        }
        MetroFlowGrid { grid: *grid, stations }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Ok(MetroFlowGrid {
            grid: self.grid.slice(range.clone())?,
            stations: self
                .stations
                .iter()
                .map(|(id, s)| {
                    (
                        id.clone(),
                        MetroSeries {
                            check_ins: s.check_ins[range.clone()].to_vec(),
                            check_outs: s.check_outs[range.clone()].to_vec(),
                        },
                    )
                })
                .collect(),
        })
    }
}

/// Training-split (dow, hour, quarter) profiles of check-ins and check-outs per metro station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetroProfiles {
    pub check_ins: BTreeMap<MetroId, SeasonalProfile>,
    pub check_outs: BTreeMap<MetroId, SeasonalProfile>,
}

impl MetroProfiles {
    pub fn fit(flows: &MetroFlowGrid, split: &SplitSpec) -> Result<Self> {
        let mut check_ins = BTreeMap::new();
        let mut check_outs = BTreeMap::new();
        for (id, s) in &flows.stations {
            check_ins.insert(id.clone(), SeasonalProfile::fit(&s.check_ins, &flows.grid, split)?);
            check_outs.insert(id.clone(), SeasonalProfile::fit(&s.check_outs, &flows.grid, split)?);
        }
        Ok(MetroProfiles { check_ins, check_outs })
    }
}

/// Observed-minus-profile metro flow deviations, summed over linked metro stations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetroDeviation {
    pub interval: usize,
    pub delta_in: f64,
    pub delta_out: f64,
}

pub fn metro_deviation(
    flows: &MetroFlowGrid,
    link: &ProximityLink,
    profiles: &MetroProfiles,
    interval: usize,
) -> MetroDeviation {
    let c = flows.grid.calendar(interval);
    let mut dev = MetroDeviation {
        interval,
        delta_in: 0.0,
        delta_out: 0.0,
    };
    for m in &link.metro_stations {
        let (Some(series), Some(p_in), Some(p_out)) = (
            flows.stations.get(m),
            profiles.check_ins.get(m),
            profiles.check_outs.get(m),
        ) else {
            continue;
        };
        dev.delta_in += series.check_ins[interval] - p_in.lookup(c.day_of_week, c.hour, c.quarter).0;
        dev.delta_out += series.check_outs[interval] - p_out.lookup(c.day_of_week, c.hour, c.quarter).0;
    }
    dev
}

/// Deviation series for one bike station: check-outs for pickups, check-ins for drop-offs.
pub fn metro_deviation_series(
    flows: &MetroFlowGrid,
    link: &ProximityLink,
    profiles: &MetroProfiles,
    kind: DemandKind,
) -> Vec<f64> {
    (0..flows.grid.len())
        .map(|t| {
            let d = metro_deviation(flows, link, profiles, t);
            match kind {
                DemandKind::Pickup => d.delta_out,
                DemandKind::Dropoff => d.delta_in,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Channel blocks and frames

/// Whether a channel value at row `t` describes step `t` itself (observed up to
/// the forecast origin) or is known in advance for the step being forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Timing {
    Observed,
    Known,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    /// Real-valued channels are z-scored; indicator channels are left untouched.
    pub real: bool,
    pub timing: Timing,
}

impl ChannelSpec {
    fn indicator(name: impl Into<String>) -> Self {
        ChannelSpec {
            name: name.into(),
            real: false,
            timing: Timing::Known,
        }
    }

    fn real(name: impl Into<String>, timing: Timing) -> Self {
        ChannelSpec {
            name: name.into(),
            real: true,
            timing,
        }
    }
}

/// Row-major `len × width` matrix of channel values. `NaN` marks a gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBlock {
    pub channels: Vec<ChannelSpec>,
    pub len: usize,
    pub data: Vec<f64>,
}

impl ChannelBlock {
    pub fn empty(len: usize) -> Self {
        ChannelBlock {
            channels: Vec::new(),
            len,
            data: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.channels.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let w = self.width();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.channels.iter().position(|s| s.name == name)?;
        Some((0..self.len).map(|t| self.row(t)[c]).collect())
    }

    pub fn is_row_complete(&self, t: usize) -> bool {
        self.row(t).iter().all(|v| !v.is_nan())
    }
}

/// Per-station static channels: capacity scaled by the network-wide maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub capacity: u32,
    pub capacity_norm: f64,
}

impl StaticFeatures {
    pub fn new(capacity: u32, max_capacity: u32) -> Self {
        StaticFeatures {
            capacity,
            capacity_norm: capacity as f64 / max_capacity.max(1) as f64,
        }
    }

    pub fn as_vec(&self) -> Vec<f64> {
        vec![self.capacity_norm]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub station: StationId,
    pub grid: TimeGrid,
    pub statics: StaticFeatures,
    pub global: Arc<ChannelBlock>,
    pub local: ChannelBlock,
    normalized: bool,
}

impl FeatureFrame {
    pub fn new(
        station: StationId,
        grid: TimeGrid,
        statics: StaticFeatures,
        global: Arc<ChannelBlock>,
        local: ChannelBlock,
    ) -> Result<Self> {
        if global.len != grid.len() || local.len != grid.len() {
            return Err(Error::invalid("feature channels are not aligned to the grid"));
        }
        Ok(FeatureFrame {
            station,
            grid,
            statics,
            global,
            local,
            normalized: false,
        })
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

fn one_hot(index: usize, width: usize) -> impl Iterator<Item = f64> {
    (0..width).map(move |i| if i == index { 1.0 } else { 0.0 })
}

fn calendar_channels(include_quarter: bool, include_holiday: bool) -> Vec<ChannelSpec> {
    let mut ch: Vec<ChannelSpec> = (0..24).map(|h| ChannelSpec::indicator(format!("hour_{h}"))).collect();
    if include_quarter {
        ch.extend((0..4).map(|q| ChannelSpec::indicator(format!("quarter_{q}"))));
    }
    ch.extend((0..7).map(|d| ChannelSpec::indicator(format!("dow_{d}"))));
    if include_holiday {
        ch.push(ChannelSpec::indicator("holiday"));
    }
    ch
}

fn calendar_row(
    grid: &TimeGrid,
    t: usize,
    include_quarter: bool,
    holidays: Option<&BTreeSet<NaiveDate>>,
    out: &mut Vec<f64>,
) {
    let c = grid.calendar(t);
    out.extend(one_hot(c.hour as usize, 24));
    if include_quarter {
        out.extend(one_hot(c.quarter.unwrap_or(0) as usize, 4));
    }
    out.extend(one_hot(c.day_of_week as usize, 7));
    if let Some(h) = holidays {
        out.push(if h.contains(&c.date) { 1.0 } else { 0.0 });
    }
}

/// Weather for every hour of `grid`, forward-filling at most `gap_limit` trailing hours.
pub fn align_weather(records: &[WeatherRecord], grid: &TimeGrid, gap_limit: i64) -> Result<Vec<WeatherRecord>> {
    let by_hour: BTreeMap<_, _> = records.iter().map(|r| (r.hour_start, *r)).collect();
    let mut out: Vec<WeatherRecord> = Vec::with_capacity(grid.len());
    let mut run = 0i64;
    for t in 0..grid.len() {
        let ts = grid.interval_start(t);
        let hour_ts = ts - chrono::Duration::minutes(chrono::Timelike::minute(&ts) as i64);
        match by_hour.get(&hour_ts) {
            Some(r) => {
                run = 0;
                out.push(*r);
            }
            None => {
                run += 1;
                let prev = out.last().copied();
                match prev {
                    Some(p) if run <= gap_limit * (60 / grid.resolution() as i64) => out.push(p),
                    _ => {
                        return Err(Error::WeatherGap {
                            at: ts.to_string(),
                            hours: run,
                            limit: gap_limit,
                        })
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Global Stage-1 channels: hour (24), day-of-week (7), holiday (1), temperature, precipitation, wind.
pub fn stage1_global_block(
    grid: &TimeGrid,
    weather: &[WeatherRecord],
    holidays: &BTreeSet<NaiveDate>,
) -> Result<ChannelBlock> {
    if weather.len() != grid.len() {
        return Err(Error::invalid("weather is not aligned to the hourly grid"));
    }
    let mut channels = calendar_channels(false, true);
    channels.push(ChannelSpec::real("temperature", Timing::Known));
    channels.push(ChannelSpec::real("precipitation", Timing::Known));
    channels.push(ChannelSpec::real("wind_speed", Timing::Known));
    let mut data = Vec::with_capacity(grid.len() * channels.len());
    for (t, w) in weather.iter().enumerate() {
        calendar_row(grid, t, false, Some(holidays), &mut data);
        data.extend([w.temperature, w.precipitation, w.wind_speed]);
    }
    Ok(ChannelBlock {
        channels,
        len: grid.len(),
        data,
    })
}

/// Stage-1 frame for one station on an hourly grid.
pub fn assemble_stage1_features(
    station: &StationMeta,
    max_capacity: u32,
    grid: &TimeGrid,
    weather: &[WeatherRecord],
    holidays: &BTreeSet<NaiveDate>,
) -> Result<FeatureFrame> {
    let global = Arc::new(stage1_global_block(grid, weather, holidays)?);
    FeatureFrame::new(
        station.id.clone(),
        *grid,
        StaticFeatures::new(station.capacity, max_capacity),
        global,
        ChannelBlock::empty(grid.len()),
    )
}

/// Global Stage-2 channels: hour (24), quarter-of-hour (4), day-of-week (7), optional holiday.
pub fn stage2_global_block(
    grid: &TimeGrid,
    holidays: &BTreeSet<NaiveDate>,
    include_holiday: bool,
) -> Result<ChannelBlock> {
    if !grid.is_quarter_hourly() {
        return Err(Error::invalid("stage-2 features need a 15-minute grid"));
    }
    let channels = calendar_channels(true, include_holiday);
    let mut data = Vec::with_capacity(grid.len() * channels.len());
    for t in 0..grid.len() {
        calendar_row(grid, t, true, include_holiday.then_some(holidays), &mut data);
    }
    Ok(ChannelBlock {
        channels,
        len: grid.len(),
        data,
    })
}

/// Stage-1 summary for one hour: forecast mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourEstimate {
    pub mu: f64,
    pub sigma: f64,
}

/// Local Stage-2 channels for one station on a 15-minute grid.
///
/// * `stage1[h]`: Stage-1 estimate for hour `h` (`None` where not forecast).
/// * `signals[q]`: pickup and drop-off variation signals (`None` = gap).
/// * `metro[q]`: metro deviation for the target kind.
///
/// Gaps become `NaN`; windows touching them are excluded downstream.
pub fn stage2_local_block(
    grid: &TimeGrid,
    stage1: &[Option<HourEstimate>],
    signals: &[Option<(f64, f64)>],
    metro: &[f64],
) -> Result<ChannelBlock> {
    let n = grid.len();
    if stage1.len() * QUARTERS_PER_HOUR != n || signals.len() != n || metro.len() != n {
        return Err(Error::invalid("stage-2 inputs are not aligned to the quarter grid"));
    }
    let channels = vec![
        ChannelSpec::real("stage1_mu_quarter", Timing::Known),
        ChannelSpec::real("stage1_sigma", Timing::Known),
        ChannelSpec::real("delta_pickup", Timing::Observed),
        ChannelSpec::real("delta_dropoff", Timing::Observed),
        ChannelSpec::real("metro_delta", Timing::Observed),
    ];
    let mut data = Vec::with_capacity(n * channels.len());
    for q in 0..n {
        let est = stage1[hour_of(q)];
        data.push(est.map_or(f64::NAN, |e| e.mu / QUARTERS_PER_HOUR as f64));
        data.push(est.map_or(f64::NAN, |e| e.sigma));
        let (dp, dd) = signals[q].unwrap_or((f64::NAN, f64::NAN));
        data.push(dp);
        data.push(dd);
        data.push(metro[q]);
    }
    Ok(ChannelBlock {
        channels,
        len: n,
        data,
    })
}

/// Stage-2 frame for one station.
#[allow(clippy::too_many_arguments)]
pub fn assemble_stage2_features(
    station: &StationMeta,
    max_capacity: u32,
    grid: &TimeGrid,
    stage1: &[Option<HourEstimate>],
    signals: &[Option<(f64, f64)>],
    metro: &[f64],
    holidays: &BTreeSet<NaiveDate>,
    include_holiday: bool,
) -> Result<FeatureFrame> {
    let global = Arc::new(stage2_global_block(grid, holidays, include_holiday)?);
    let local = stage2_local_block(grid, stage1, signals, metro)?;
    FeatureFrame::new(
        station.id.clone(),
        *grid,
        StaticFeatures::new(station.capacity, max_capacity),
        global,
        local,
    )
}

// ---------------------------------------------------------------------------
// Normalization

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStat {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// Zero (or undefined) training variance; `std` was replaced by 1.
    pub degenerate: bool,
}

impl ChannelStat {
    fn identity(name: &str) -> Self {
        ChannelStat {
            name: name.to_owned(),
            mean: 0.0,
            std: 1.0,
            degenerate: false,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Per-channel z-score statistics computed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub global: Vec<ChannelStat>,
    pub local: Vec<ChannelStat>,
}

fn fit_block<'a>(blocks: impl Iterator<Item = &'a ChannelBlock> + Clone, train_end: usize) -> Vec<ChannelStat> {
    let Some(first) = blocks.clone().next() else { return Vec::new() };
    first
        .channels
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            if !spec.real {
                return ChannelStat::identity(&spec.name);
            }
            let mut n = 0usize;
            let mut sum = 0.0;
            for b in blocks.clone() {
                for t in 0..train_end.min(b.len) {
                    let v = b.row(t)[c];
                    if !v.is_nan() {
                        n += 1;
                        sum += v;
                    }
                }
            }
            let mean = if n > 0 { sum / n as f64 } else { 0.0 };
            let mut ss = 0.0;
            for b in blocks.clone() {
                for t in 0..train_end.min(b.len) {
                    let v = b.row(t)[c];
                    if !v.is_nan() {
                        ss += (v - mean) * (v - mean);
                    }
                }
            }
            let std = if n > 0 { (ss / n as f64).sqrt() } else { 0.0 };
            let degenerate = !(std > 1e-12);
            ChannelStat {
                name: spec.name.clone(),
                mean,
                std: if degenerate { 1.0 } else { std },
                degenerate,
            }
        })
        .collect()
}

/// Fits statistics on rows `< split.train_end`, pooled over all `frames`.
pub fn fit_norm_stats(frames: &[FeatureFrame], split: &SplitSpec) -> Result<NormStats> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames to fit normalization on"));
    }
    if frames.iter().any(|f| f.normalized) {
        return Err(Error::invalid("normalization statistics must be fit on raw features"));
    }
    for f in frames {
        split.validate(f.grid.len())?;
    }
    Ok(NormStats {
        global: fit_block(frames.iter().map(|f| f.global.as_ref()), split.train_end),
        local: fit_block(frames.iter().map(|f| &f.local), split.train_end),
    })
}

fn apply_block(block: &ChannelBlock, stats: &[ChannelStat]) -> Result<ChannelBlock> {
    if block.width() != stats.len() {
        return Err(Error::invalid("normalization statistics do not match channel layout"));
    }
    let w = block.width();
    let mut out = block.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v = stats[i % w].apply(*v);
    }
    Ok(out)
}

/// Z-scores a frame's real channels with `stats`. Normalizing twice is rejected.
pub fn apply_norm(frame: &FeatureFrame, stats: &NormStats) -> Result<FeatureFrame> {
    let mut out = apply_norm_all(std::slice::from_ref(frame), stats)?;
    Ok(out.pop().expect("one frame"))
}

/// Normalizes many frames, sharing one normalized copy of each shared global block.
pub fn apply_norm_all(frames: &[FeatureFrame], stats: &NormStats) -> Result<Vec<FeatureFrame>> {
    let mut cache: Vec<(*const ChannelBlock, Arc<ChannelBlock>)> = Vec::new();
    frames
        .iter()
        .map(|f| {
            if f.normalized {
                return Err(Error::invalid(format!("features for {} are already normalized", f.station)));
            }
            let ptr = Arc::as_ptr(&f.global);
            let global = match cache.iter().find(|(p, _)| *p == ptr) {
                Some((_, g)) => g.clone(),
                None => {
                    let g = Arc::new(apply_block(&f.global, &stats.global)?);
                    cache.push((ptr, g.clone()));
                    g
                }
            };
            Ok(FeatureFrame {
                station: f.station.clone(),
                grid: f.grid,
                statics: f.statics,
                global,
                local: apply_block(&f.local, &stats.local)?,
                normalized: true,
            })
        })
        .collect()
}

/// Dumps frames as `station_id,interval,<channel names…>` for offline inspection.
pub fn write_features_csv(frames: &[FeatureFrame], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let Some(first) = frames.first() else { return Ok(()) };
    write!(out, "station_id,interval,capacity_norm")?;
    for c in first.global.channels.iter().chain(&first.local.channels) {
        write!(out, ",{}", c.name)?;
    }
    writeln!(out)?;
    for f in frames {
        for t in 0..f.grid.len() {
            write!(out, "{},{},{}", f.station, t, f.statics.capacity_norm)?;
            for v in f.global.row(t).iter().chain(f.local.row(t)) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GeoPoint;
    use chrono::NaiveDateTime;

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M").unwrap()
    }

    fn meta(id: &str, cap: u32) -> StationMeta {
        StationMeta {
            id: id.into(),
            location: GeoPoint::new(38.9, -77.0).unwrap(),
            capacity: cap,
        }
    }

    fn weather(grid: &TimeGrid, temp: impl Fn(usize) -> f64) -> Vec<WeatherRecord> {
        (0..grid.len())
            .map(|t| WeatherRecord {
                hour_start: grid.interval_start(t),
                temperature: temp(t),
                precipitation: 0.0,
                wind_speed: 2.0,
            })
            .collect()
    }

    #[test]
    fn profile_examples() {
        // two Sundays at 00:00 with demand 2 and 4
        let grid = TimeGrid::new(ts("2022-10-02T00:00"), 60, 24 * 14).unwrap();
        let mut v = vec![0.0; grid.len()];
        v[0] = 2.0;
        v[24 * 7] = 4.0;
        let p = SeasonalProfile::fit(&v, &grid, &SplitSpec::new(grid.len() - 1, grid.len())).unwrap();
        assert_eq!(p.lookup(6, 0, None), (3.0, ProfileLevel::Key));

        let zeros = SeasonalProfile::fit(&vec![0.0; grid.len()], &grid, &SplitSpec::new(100, 200)).unwrap();
        assert_eq!(zeros.lookup(6, 1, None).0, 0.0);
    }

    #[test]
    fn profile_fallback_chain() {
        // one day only (Sunday): other weekdays fall back to the hour-of-day mean
        let grid = TimeGrid::new(ts("2022-10-02T00:00"), 15, 96 * 2).unwrap();
        let v: Vec<f64> = (0..grid.len()).map(|t| (t % 96) as f64).collect();
        let p = SeasonalProfile::fit(&v, &grid, &SplitSpec::new(96, 192)).unwrap();
        assert_eq!(p.lookup(6, 1, Some(2)), (6.0, ProfileLevel::Key));
        assert_eq!(p.lookup(0, 1, Some(2)), (6.0, ProfileLevel::HourOfDay));
        assert!(p.missing_keys().contains(&(0, 1, Some(2))));
        assert_eq!(p.missing_keys().len(), 6 * 96);
        // train split covering only the first hour: later hours fall back to the global mean
        let p = SeasonalProfile::fit(&v, &grid, &SplitSpec::new(4, 192)).unwrap();
        assert_eq!(p.lookup(6, 5, Some(0)), (1.5, ProfileLevel::Global));
    }

    fn metro_fixture() -> (MetroFlowGrid, MetroProfiles, TimeGrid) {
        let grid = TimeGrid::new(ts("2022-10-02T00:00"), 15, 96 * 14).unwrap();
        let mut records = Vec::new();
        for t in 0..grid.len() {
            for (id, base) in [("M1", 7u32), ("M2", 5u32)] {
                records.push(MetroFlowRecord {
                    metro_station: id.into(),
                    interval_start: grid.interval_start(t),
                    check_ins: base + (t % 3) as u32,
                    check_outs: base,
                });
            }
        }
        let flows = MetroFlowGrid::from_records(&records, &grid);
        let profiles = MetroProfiles::fit(&flows, &SplitSpec::new(96 * 7, grid.len())).unwrap();
        (flows, profiles, grid)
    }

    fn link(ids: &[&str]) -> ProximityLink {
        ProximityLink {
            bike_station: "A".into(),
            metro_stations: ids.iter().map(|&s| MetroId::from(s)).collect(),
            threshold_m: 300.0,
        }
    }

    #[test]
    fn metro_deviation_examples() {
        let (mut flows, profiles, _) = metro_fixture();
        let t = 96 * 10;
        flows.stations.get_mut(&MetroId::from("M1")).unwrap().check_outs[t] = 10.0;
        let d = metro_deviation(&flows, &link(&["M1"]), &profiles, t);
        assert_eq!(d.delta_out, 3.0);
        let d = metro_deviation(&flows, &link(&[]), &profiles, t);
        assert_eq!((d.delta_in, d.delta_out), (0.0, 0.0));
        flows.stations.get_mut(&MetroId::from("M1")).unwrap().check_outs[t] = 9.0;
        flows.stations.get_mut(&MetroId::from("M2")).unwrap().check_outs[t] = 4.0;
        let d = metro_deviation(&flows, &link(&["M1", "M2"]), &profiles, t);
        assert_eq!(d.delta_out, 1.0);
    }

    #[test]
    fn metro_deviation_is_centered_on_training_keys() {
        let (flows, profiles, grid) = metro_fixture();
        let s = metro_deviation_series(&flows, &link(&["M1", "M2"]), &profiles, DemandKind::Dropoff);
        let mut per_key: BTreeMap<(u8, u8, Option<u8>), (f64, usize)> = BTreeMap::new();
        for (t, v) in s.iter().enumerate().take(96 * 7) {
            let c = grid.calendar(t);
            let e = per_key.entry((c.day_of_week, c.hour, c.quarter)).or_default();
            e.0 += v;
            e.1 += 1;
        }
        for (_, (sum, n)) in per_key {
            assert!((sum / n as f64).abs() < 1e-9 * 10.0);
        }
    }

    #[test]
    fn stage1_frame_encoding() {
        let grid = TimeGrid::daily(NaiveDate::from_ymd_opt(2022, 12, 25).unwrap(), 60, 2).unwrap();
        let holidays: BTreeSet<_> = [NaiveDate::from_ymd_opt(2022, 12, 25).unwrap()].into();
        let w = weather(&grid, |t| 10.0 + (t % 2) as f64 * 4.0);
        let f = assemble_stage1_features(&meta("A", 10), 20, &grid, &w, &holidays).unwrap();
        assert_eq!(f.global.width(), 24 + 7 + 1 + 3);
        assert_eq!(f.statics.capacity_norm, 0.5);
        let row = f.global.row(0);
        // 2022-12-25 is a Sunday
        assert_eq!(row[0], 1.0);
        assert_eq!(row[24 + 6], 1.0);
        assert_eq!(row[31], 1.0);
        assert_eq!(f.global.row(24)[31], 0.0);
        let stats = fit_norm_stats(std::slice::from_ref(&f), &SplitSpec::new(24, 48)).unwrap();
        let n = apply_norm(&f, &stats).unwrap();
        // train mean of temperature is 12: both 10 and 14 map to ∓1
        assert_eq!(stats.global[32].mean, 12.0);
        assert_eq!(n.global.row(0)[32], -1.0);
        // wind is constant: degenerate channel maps to 0 with std 1
        assert!(stats.global[34].degenerate);
        assert_eq!(n.global.row(5)[34], 0.0);
        // indicators untouched
        assert_eq!(n.global.row(0)[0], 1.0);
        assert!(apply_norm(&n, &stats).is_err());
        assert!(fit_norm_stats(std::slice::from_ref(&n), &SplitSpec::new(24, 48)).is_err());
    }

    #[test]
    fn norm_uses_training_statistics_only() {
        let grid = TimeGrid::daily(NaiveDate::from_ymd_opt(2022, 10, 3).unwrap(), 60, 2).unwrap();
        let w = weather(&grid, |t| if t < 24 { if t % 2 == 0 { 8.0 } else { 12.0 } } else { 100.0 });
        let f = assemble_stage1_features(&meta("A", 10), 10, &grid, &w, &BTreeSet::new()).unwrap();
        let stats = fit_norm_stats(std::slice::from_ref(&f), &SplitSpec::new(24, 48)).unwrap();
        assert_eq!((stats.global[32].mean, stats.global[32].std), (10.0, 2.0));
        let n = apply_norm(&f, &stats).unwrap();
        assert_eq!(n.global.row(30)[32], 45.0);
        // 14 under mean 10 / std 2 → 2.0
        assert_eq!(stats.global[32].apply(14.0), 2.0);
    }

    #[test]
    fn weather_alignment_gaps() {
        let grid = TimeGrid::new(ts("2022-10-02T00:00"), 60, 6).unwrap();
        let mut w = weather(&grid, |t| t as f64);
        w.truncate(4);
        let a = align_weather(&w, &grid, 3).unwrap();
        assert_eq!(a[5].temperature, 3.0);
        assert!(align_weather(&w, &grid, 1).is_err());
        assert!(align_weather(&w[1..], &grid, 3).is_err());
    }

    #[test]
    fn stage2_frame_channels() {
        let grid = TimeGrid::new(ts("2022-10-02T00:00"), 15, 8).unwrap();
        let stage1 = vec![None, Some(HourEstimate { mu: 4.0, sigma: 1.5 })];
        let mut signals = vec![None; 8];
        signals[5] = Some((2.0, -1.0));
        let f = assemble_stage2_features(
            &meta("A", 12),
            24,
            &grid,
            &stage1,
            &signals,
            &[0.0; 8],
            &BTreeSet::new(),
            false,
        )
        .unwrap();
        assert_eq!(f.global.width(), 24 + 4 + 7);
        assert_eq!(f.local.row(4)[0], 1.0);
        assert_eq!(f.local.row(4)[1], 1.5);
        assert!(f.local.row(0)[0].is_nan());
        assert_eq!(&f.local.row(5)[2..], &[2.0, -1.0, 0.0]);
        assert!(!f.local.is_row_complete(4));
        assert!(f.local.is_row_complete(5));
        // interval 6 starts at 01:30, quarter 2
        assert_eq!(f.global.row(6)[24 + 2], 1.0);
        assert!(assemble_stage2_features(&meta("A", 12), 24, &grid, &stage1[..1], &signals, &[0.0; 8], &BTreeSet::new(), false).is_err());
    }

    #[test]
    fn features_csv_dump() {
        let grid = TimeGrid::new(ts("2022-10-02T00:00"), 60, 3).unwrap();
        let f = assemble_stage1_features(&meta("A", 10), 10, &grid, &weather(&grid, |_| 1.0), &BTreeSet::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("features.csv");
        write_features_csv(&[f], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("station_id,interval,capacity_norm,hour_0"));
        assert_eq!(text.lines().count(), 4);
    }
}
