//! Synthetic dock-network generator with a known demand process.
//!
//! For station `i`, kind `k` and quarter `q` in hour `h`, the mean of the
//! Negative Binomial component is
//!
//! ```text
//! λ = base_ik(dow, h) / 4 · w[q mod 4] · weather(h) · metro_ik(q) · holiday(day)
//! ```
//!
//! and the observed count is zero with probability `π₀`, otherwise a draw from
//! NB(λ, r_true). Metro latent deviations follow an AR(1) process per metro
//! station and direction, so recent observed deviations carry information
//! about the next quarter.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{GeoPoint, MetroFlowRecord, MetroId, MetroStation, StationMeta, TripRecord, WeatherRecord};
use crate::nbdist::NegBinParams;
use crate::timegrid::{DemandKind, StationId, TimeGrid, QUARTERS_PER_HOUR};
use crate::eval::ScoreRow;
use crate::transformer::{mix_seed, nearest_rank};
use crate::tstar::station_hash;

const HOURS_PER_WEEK: usize = 168;
const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Hourly rates for one station, indexed `dow * 24 + hour` (Monday = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRates {
    pub pickup: Vec<f64>,
    pub dropoff: Vec<f64>,
}

impl StationRates {
    pub fn get(&self, kind: DemandKind) -> &[f64] {
        match kind {
            DemandKind::Pickup => &self.pickup,
            DemandKind::Dropoff => &self.dropoff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub start: NaiveDate,
    pub days: usize,
    pub seed: u64,
    pub rates: Vec<StationRates>,
    pub capacities: Vec<u32>,
    /// Multiplicative weights of the four quarters of each hour; they sum to 4.
    pub quarter_weights: [f64; 4],
    /// Log-rate change per °C away from 15 °C.
    pub temperature_coef: f64,
    /// Log-rate change per mm of hourly precipitation (negative).
    pub precipitation_coef: f64,
    pub metro_stations: usize,
    /// Fraction of bike stations placed within walking distance of a metro station.
    pub linked_fraction: f64,
    /// Coupling of bike rates to the summed latent metro deviation.
    pub metro_coupling: f64,
    pub metro_persistence: f64,
    pub metro_noise: f64,
    /// Mean metro check-ins (and check-outs) per quarter at the busiest hour.
    pub metro_volume: f64,
    pub r_true: f64,
    pub zero_inflation: f64,
    pub holidays: Vec<NaiveDate>,
    pub holiday_factor: f64,
}

fn bump(x: f64, centre: f64, width: f64) -> f64 {
    (-0.5 * ((x - centre) / width).powi(2)).exp()
}

/// Commuter-shaped weekday profile and a midday weekend profile.
fn base_shape(dow: usize, hour: usize, morning: f64, evening: f64) -> f64 {
    let h = hour as f64 + 0.5;
    if dow < 5 {
        0.08 + morning * bump(h, 8.0, 1.3) + evening * bump(h, 17.5, 1.6) + 0.5 * bump(h, 13.0, 2.5)
    } else {
        0.08 + 1.2 * bump(h, 14.0, 3.0)
    }
}

impl SynthSpec {
    /// A network of `stations` with randomly scaled residential or office profiles.
    pub fn network(stations: usize, days: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0xA7E5]));
        let scale_dist = Normal::new(0.0, 0.45).expect("valid std");
        let mut rates = Vec::with_capacity(stations);
        let mut capacities = Vec::with_capacity(stations);
        for _ in 0..stations {
            let z: f64 = scale_dist.sample(&mut rng);
            let scale = 0.9 * z.exp();
            let residential = rng.random_bool(0.5);
            let (am, pm) = if residential { (2.2, 0.9) } else { (0.9, 2.2) };
            let pickup = (0..HOURS_PER_WEEK).map(|i| scale * base_shape(i / 24, i % 24, am, pm)).collect();
            let dropoff = (0..HOURS_PER_WEEK).map(|i| scale * base_shape(i / 24, i % 24, pm, am)).collect();
            rates.push(StationRates { pickup, dropoff });
            capacities.push((8.0 + 10.0 * scale).round() as u32 + rng.random_range(0..4));
        }
        let start = NaiveDate::from_ymd_opt(2023, 3, 6).expect("valid date");
        let holidays = [28usize, 84]
            .iter()
            .filter(|&&d| d < days)
            .map(|&d| start + Duration::days(d as i64))
            .collect();
        SynthSpec {
            start,
            days,
            seed,
            rates,
            capacities,
            quarter_weights: [2.0, 0.8, 0.8, 0.4],
            temperature_coef: 0.02,
            precipitation_coef: -0.25,
            metro_stations: 4,
            linked_fraction: 0.6,
            metro_coupling: 0.6,
            metro_persistence: 0.9,
            metro_noise: 0.15,
            metro_volume: 60.0,
            r_true: 3.0,
            zero_inflation: 0.2,
            holidays,
            holiday_factor: 1.0,
        }
    }

    pub fn stations(&self) -> usize {
        self.rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic spec: {m}")));
        if self.rates.is_empty() || self.days == 0 {
            return bad("needs at least one station and one day");
        }
        if self.capacities.len() != self.rates.len() {
            return bad("one capacity per station required");
        }
        for r in &self.rates {
            if r.pickup.len() != HOURS_PER_WEEK || r.dropoff.len() != HOURS_PER_WEEK {
                return bad("rate profiles need 168 (dow, hour) entries");
            }
            if r.pickup.iter().chain(&r.dropoff).any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("rates must be finite and non-negative");
            }
        }
        if self.quarter_weights.iter().any(|w| *w < 0.0) || (self.quarter_weights.iter().sum::<f64>() - 4.0).abs() > 1e-9 {
            return bad("quarter weights must be non-negative and sum to 4");
        }
        if !(0.0..1.0).contains(&self.zero_inflation) {
            return bad("zero inflation must lie in [0, 1)");
        }
        if !(self.r_true > 0.0) {
            return bad("r_true must be positive");
        }
        if !(0.0..1.0).contains(&self.metro_persistence) || self.metro_noise < 0.0 || self.metro_volume < 0.0 {
            return bad("metro process parameters out of range");
        }
        if !(0.0..=1.0).contains(&self.linked_fraction) || self.holiday_factor < 0.0 {
            return bad("linked fraction or holiday factor out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub grid: TimeGrid,
    pub stations: Vec<StationMeta>,
    pub metro_stations: Vec<MetroStation>,
    pub pickups: BTreeMap<StationId, Vec<u32>>,
    pub dropoffs: BTreeMap<StationId, Vec<u32>>,
    /// Mean of the NB component per quarter.
    pub truth_pickup: BTreeMap<StationId, Vec<f64>>,
    pub truth_dropoff: BTreeMap<StationId, Vec<f64>>,
    pub weather: Vec<WeatherRecord>,
    pub metro: Vec<MetroFlowRecord>,
    pub holidays: BTreeSet<NaiveDate>,
    pub r_true: f64,
    pub zero_inflation: f64,
}

impl SynthData {
    pub fn counts(&self, kind: DemandKind) -> &BTreeMap<StationId, Vec<u32>> {
        match kind {
            DemandKind::Pickup => &self.pickups,
            DemandKind::Dropoff => &self.dropoffs,
        }
    }

    pub fn truth(&self, kind: DemandKind) -> &BTreeMap<StationId, Vec<f64>> {
        match kind {
            DemandKind::Pickup => &self.truth_pickup,
            DemandKind::Dropoff => &self.truth_dropoff,
        }
    }

    /// `n` draws from the true count distribution with NB mean `lambda`.
    pub fn sample_truth(&self, lambda: f64, n: usize, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| draw_count(lambda, self.r_true, self.zero_inflation, &mut rng)).collect()
    }

    /// Scores `n` draws of the true distribution at each (station, quarter) key,
    /// summarized the same way as model forecasts.
    pub fn oracle_rows(
        &self,
        kind: DemandKind,
        keys: &[(StationId, usize)],
        n: usize,
        seed: u64,
        alpha: f64,
    ) -> Result<Vec<ScoreRow>> {
        keys.iter()
            .map(|(id, q)| {
                let lambda = self.truth(kind).get(id).ok_or_else(|| Error::UnknownStation(id.to_string()))?[*q];
                let y = self.counts(kind)[id][*q] as f64;
                let mut draws = self.sample_truth(lambda, n, mix_seed(&[seed, station_hash(id), *q as u64]));
                let samples: Vec<f64> = draws.iter().map(|&d| d as f64).collect();
                draws.sort_unstable();
                ScoreRow::from_samples(
                    id.clone(),
                    *q,
                    y,
                    nearest_rank(&draws, 50.0) as f64,
                    nearest_rank(&draws, 5.0) as f64,
                    nearest_rank(&draws, 95.0) as f64,
                    &samples,
                    alpha,
                )
            })
            .collect()
    }
}

fn draw_count(lambda: f64, r: f64, pi0: f64, rng: &mut ChaCha8Rng) -> u64 {
    // both draws are always consumed so streams stay aligned across parameter changes
    let zero = rng.random::<f64>() < pi0;
    let k = if lambda > 0.0 {
        NegBinParams::new(lambda, r).expect("positive parameters").sample_one(rng)
    } else {
        0
    };
    if zero {
        0
    } else {
        k
    }
}

const CENTRE: (f64, f64) = (38.9, -77.03);

fn offset_point(rng: &mut ChaCha8Rng, origin: (f64, f64), min_m: f64, max_m: f64) -> GeoPoint {
    let dist = rng.random_range(min_m..max_m);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let dlat = dist * angle.cos() / 111_195.0;
    let dlon = dist * angle.sin() / (111_195.0 * origin.0.to_radians().cos());
    GeoPoint::new(origin.0 + dlat, origin.1 + dlon).expect("coordinates in range")
}

fn place_stations(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Vec<MetroStation>, Vec<StationMeta>) {
    let metros: Vec<MetroStation> = (0..spec.metro_stations)
        .map(|m| {
            // metro stations on a ring with 2 km spacing
            let angle = m as f64 / spec.metro_stations.max(1) as f64 * std::f64::consts::TAU;
            let d = 2000.0;
            let lat = CENTRE.0 + d * angle.cos() / 111_195.0;
            let lon = CENTRE.1 + d * angle.sin() / (111_195.0 * CENTRE.0.to_radians().cos());
            MetroStation {
                id: MetroId(format!("M{:02}", m + 1)),
                location: GeoPoint::new(lat, lon).expect("coordinates in range"),
            }
        })
        .collect();
    let n = spec.stations();
    let linked = ((n as f64) * spec.linked_fraction).round() as usize;
    let stations = (0..n)
        .map(|i| {
            let location = if i < linked && !metros.is_empty() {
                let m = &metros[i % metros.len()].location;
                offset_point(rng, (m.lat, m.lon), 30.0, 200.0)
            } else {
                loop {
                    let p = offset_point(rng, CENTRE, 0.0, 5000.0);
                    if metros.iter().all(|m| m.location.haversine_m(&p) > 700.0) {
                        break p;
                    }
                }
            };
            StationMeta {
                id: StationId(format!("S{:03}", i + 1)),
                location,
                capacity: spec.capacities[i],
            }
        })
        .collect();
    (metros, stations)
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn generate_weather(spec: &SynthSpec, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> Vec<WeatherRecord> {
    let hours = spec.days * 24;
    let noise = Normal::new(0.0, 1.0).expect("valid std");
    let mut temp_anom = 0.0;
    let mut rain_left = 0usize;
    let mut rain_rate = 0.0;
    (0..hours)
        .map(|h| {
            let day = h as f64 / 24.0;
            temp_anom = 0.95 * temp_anom + 0.6 * noise.sample(rng);
            let diurnal = -5.0 * ((h % 24) as f64 / 24.0 * std::f64::consts::TAU).cos();
            let seasonal = 8.0 + 12.0 * (day / spec.days.max(1) as f64);
            if rain_left == 0 && rng.random::<f64>() < 0.015 {
                rain_left = rng.random_range(2..10);
                rain_rate = rng.random_range(0.5..5.0);
            }
            let precip = if rain_left > 0 {
                rain_left -= 1;
                rain_rate * rng.random_range(0.5..1.5)
            } else {
                0.0
            };
            WeatherRecord {
                hour_start: grid.start() + Duration::hours(h as i64),
                temperature: round1(seasonal + diurnal + temp_anom),
                precipitation: round1(precip),
                wind_speed: round1((3.0 + 1.5 * noise.sample(rng)).abs()),
            }
        })
        .collect()
}

fn metro_profile(dow: usize, hour: usize, inbound: bool) -> f64 {
    let h = hour as f64 + 0.5;
    if dow < 5 {
        let (a, b) = if inbound { (1.0, 0.5) } else { (0.5, 1.0) };
        0.05 + a * bump(h, 8.0, 1.5) + b * bump(h, 17.5, 1.8) + 0.3 * bump(h, 13.0, 3.0)
    } else {
        0.05 + 0.5 * bump(h, 14.0, 3.5)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let grid = TimeGrid::daily(spec.start, 15, spec.days)?;
    let nq = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 1]));
    let (metro_stations, stations) = place_stations(spec, &mut rng);
    let mut wrng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 2]));
    let weather = generate_weather(spec, &grid, &mut wrng);
    let holidays: BTreeSet<NaiveDate> = spec.holidays.iter().copied().collect();

    // latent metro deviations and observed flows
    let mut latent_out: BTreeMap<MetroId, Vec<f64>> = BTreeMap::new();
    let mut latent_in: BTreeMap<MetroId, Vec<f64>> = BTreeMap::new();
    let mut metro = Vec::with_capacity(nq * metro_stations.len());
    let stationary = spec.metro_noise / (1.0 - spec.metro_persistence.powi(2)).sqrt();
    for (mi, m) in metro_stations.iter().enumerate() {
        let mut mrng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 3, mi as u64]));
        let eps = Normal::new(0.0, spec.metro_noise.max(1e-300)).expect("valid std");
        let mut a_out = vec![0.0; nq];
        let mut a_in = vec![0.0; nq];
        let init = Normal::new(0.0, stationary.max(1e-300)).expect("valid std");
        let (mut xo, mut xi) = (init.sample(&mut mrng), init.sample(&mut mrng));
        for q in 0..nq {
            xo = spec.metro_persistence * xo + eps.sample(&mut mrng);
            xi = spec.metro_persistence * xi + eps.sample(&mut mrng);
            a_out[q] = xo;
            a_in[q] = xi;
            let c = grid.calendar(q);
            let (dow, hour) = (c.day_of_week as usize, c.hour as usize);
            let lam_out = spec.metro_volume * metro_profile(dow, hour, false) * xo.exp();
            let lam_in = spec.metro_volume * metro_profile(dow, hour, true) * xi.exp();
            let draw = |lam: f64, r: &mut ChaCha8Rng| if lam > 0.0 { Poisson::new(lam).expect("positive").sample(r) as u32 } else { 0 };
            let check_outs = draw(lam_out, &mut mrng);
            let check_ins = draw(lam_in, &mut mrng);
            metro.push(MetroFlowRecord {
                metro_station: m.id.clone(),
                interval_start: grid.interval_start(q),
                check_ins,
                check_outs,
            });
        }
        latent_out.insert(m.id.clone(), a_out);
        latent_in.insert(m.id.clone(), a_in);
    }
    metro.sort_by(|a, b| (a.interval_start, &a.metro_station).cmp(&(b.interval_start, &b.metro_station)));

    let links = crate::ingest::link_metro_stations(&stations, &metro_stations, crate::ingest::DEFAULT_PROXIMITY_M);
    let weather_factor: Vec<f64> = weather
        .iter()
        .map(|w| (spec.temperature_coef * (w.temperature - 15.0) + spec.precipitation_coef * w.precipitation).exp())
        .collect();

    let mut out = SynthData {
        grid,
        stations: stations.clone(),
        metro_stations: metro_stations.clone(),
        pickups: BTreeMap::new(),
        dropoffs: BTreeMap::new(),
        truth_pickup: BTreeMap::new(),
        truth_dropoff: BTreeMap::new(),
        weather,
        metro,
        holidays,
        r_true: spec.r_true,
        zero_inflation: spec.zero_inflation,
    };
    for (si, st) in stations.iter().enumerate() {
        for (ki, kind) in DemandKind::ALL.into_iter().enumerate() {
            let latent = match kind {
                DemandKind::Pickup => &latent_out,
                DemandKind::Dropoff => &latent_in,
            };
            let mut crng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 4, si as u64, ki as u64]));
            let base = spec.rates[si].get(kind);
            let mut truth = Vec::with_capacity(nq);
            let mut counts = Vec::with_capacity(nq);
            #[allow(clippy::needless_range_loop)]
            for q in 0..nq {
                let c = out.grid.calendar(q);
                let h = q / QUARTERS_PER_HOUR;
                let metro_sum: f64 = links[si].metro_stations.iter().map(|m| latent[m][q]).sum();
                let holiday = if out.holidays.contains(&c.date) { spec.holiday_factor } else { 1.0 };
                let lambda = base[c.day_of_week as usize * 24 + c.hour as usize] / QUARTERS_PER_HOUR as f64
                    * spec.quarter_weights[q % QUARTERS_PER_HOUR]
                    * weather_factor[h]
                    * (spec.metro_coupling * metro_sum).exp()
                    * holiday;
                truth.push(lambda);
                counts.push(draw_count(lambda, spec.r_true, spec.zero_inflation, &mut crng) as u32);
            }
            match kind {
                DemandKind::Pickup => {
                    out.truth_pickup.insert(st.id.clone(), truth);
                    out.pickups.insert(st.id.clone(), counts);
                }
                DemandKind::Dropoff => {
                    out.truth_dropoff.insert(st.id.clone(), truth);
                    out.dropoffs.insert(st.id.clone(), counts);
                }
            }
        }
    }
    Ok(out)
}

/// Trips reproducing the pickup and drop-off counts exactly.
///
/// Events get uniform times inside their quarter. Each drop-off is paired with
/// the earliest unmatched pickup that precedes it. Unpaired drop-offs start
/// before the grid and unpaired pickups end after it, so those endpoints fall
/// outside the grid and are discarded by aggregation.
pub fn synthesize_trips(data: &SynthData, seed: u64) -> Vec<TripRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 5]));
    let mut events = |counts: &BTreeMap<StationId, Vec<u32>>| {
        let mut ev: Vec<(NaiveDateTime, StationId)> = Vec::new();
        for (id, series) in counts {
            for (q, &n) in series.iter().enumerate() {
                for _ in 0..n {
                    let s = rng.random_range(0..15 * 60);
                    ev.push((data.grid.interval_start(q) + Duration::seconds(s), id.clone()));
                }
            }
        }
        ev.sort();
        ev
    };
    let pickups = events(&data.pickups);
    let dropoffs = events(&data.dropoffs);
    let before = data.grid.start() - Duration::hours(1);
    let after = data.grid.end() + Duration::hours(1);
    let mut trips = Vec::with_capacity(pickups.len().max(dropoffs.len()));
    let mut queue = std::collections::VecDeque::new();
    let mut next_pickup = 0;
    for (t_end, dest) in dropoffs {
        while next_pickup < pickups.len() && pickups[next_pickup].0 <= t_end {
            queue.push_back(next_pickup);
            next_pickup += 1;
        }
        match queue.pop_front() {
            Some(p) => trips.push(TripRecord {
                start_time: pickups[p].0,
                end_time: t_end,
                origin: pickups[p].1.clone(),
                destination: dest,
            }),
            None => trips.push(TripRecord {
                start_time: before,
                end_time: t_end,
                origin: dest.clone(),
                destination: dest,
            }),
        }
    }
    for p in queue.into_iter().chain(next_pickup..pickups.len()) {
        trips.push(TripRecord {
            start_time: pickups[p].0,
            end_time: after,
            origin: pickups[p].1.clone(),
            destination: pickups[p].1.clone(),
        });
    }
    trips.sort_by(|a, b| (a.start_time, a.end_time, &a.origin, &a.destination).cmp(&(b.start_time, b.end_time, &b.origin, &b.destination)));
    trips
}

/// Writes the ingest schemas plus `truth.csv` (`station_id,kind,quarter_index,lambda`).
pub fn write_dataset(data: &SynthData, dir: impl AsRef<Path>, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };

    let mut w = open("trips.csv")?;
    writeln!(w, "start_time,end_time,start_station_id,end_station_id")?;
    for t in synthesize_trips(data, seed) {
        writeln!(w, "{},{},{},{}", t.start_time.format(TS_FORMAT), t.end_time.format(TS_FORMAT), t.origin, t.destination)?;
    }
    w.flush()?;

    let mut w = open("metro.csv")?;
    writeln!(w, "interval_start,metro_station_id,check_ins,check_outs")?;
    for r in &data.metro {
        writeln!(w, "{},{},{},{}", r.interval_start.format(TS_FORMAT), r.metro_station, r.check_ins, r.check_outs)?;
    }
    w.flush()?;

    let mut w = open("weather.csv")?;
    writeln!(w, "hour_start,temperature_c,precip_mm,wind_mps")?;
    for r in &data.weather {
        writeln!(w, "{},{},{},{}", r.hour_start.format(TS_FORMAT), r.temperature, r.precipitation, r.wind_speed)?;
    }
    w.flush()?;

    let mut w = open("stations.csv")?;
    writeln!(w, "station_id,lat,lon,capacity")?;
    for s in &data.stations {
        writeln!(w, "{},{},{},{}", s.id, s.location.lat, s.location.lon, s.capacity)?;
    }
    w.flush()?;

    let mut w = open("metro_stations.csv")?;
    writeln!(w, "metro_station_id,lat,lon")?;
    for m in &data.metro_stations {
        writeln!(w, "{},{},{}", m.id, m.location.lat, m.location.lon)?;
    }
    w.flush()?;

    let mut w = open("holidays.txt")?;
    for d in &data.holidays {
        writeln!(w, "{d}")?;
    }
    w.flush()?;

    let mut w = open("truth.csv")?;
    writeln!(w, "station_id,kind,quarter_index,lambda")?;
    for kind in DemandKind::ALL {
        for (id, series) in data.truth(kind) {
            for (q, l) in series.iter().enumerate() {
                writeln!(w, "{id},{kind},{q},{l}")?;
            }
        }
    }
    w.flush()?;

    let mut w = open("synth_meta.json")?;
    serde_json::to_writer_pretty(
        &mut w,
        &serde_json::json!({
            "start": data.grid.start().date().to_string(),
            "days": data.grid.len() / 96,
            "r_true": data.r_true,
            "zero_inflation": data.zero_inflation,
        }),
    )?;
    w.flush()?;
    Ok(())
}
