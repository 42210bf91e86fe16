//! Subcommands of the `tstar` binary, usable as library calls.

pub mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use tstar::eval::{
    build_report, rolling_origin_folds, run_folds, sliding_window_folds, write_folds_csv, write_report_csv,
    write_summary_csv, write_temporal_csv, AbnormalMask, Fold, FoldReport, ScoreReport, ScoreRow,
};
use tstar::ingest::{
    load_holidays, parse_metro, parse_metro_stations, parse_stations, parse_trips, parse_weather, StationMeta,
};
use tstar::nbdist::NegBinParams;
use tstar::synth::{generate, write_dataset, SynthSpec};
use tstar::timegrid::{DemandKind, SplitSpec, StationId};
use tstar::transformer::{mix_seed, Checkpoint};
use tstar::tstar::{
    score_baselines, score_forecasts, station_hash, write_signals_csv, ArchivePair, FittedPipeline, NetworkData,
    QuarterForecast, Stage1Archive, StageModel,
};

pub use config::RunConfig;

/// Failure with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<tstar::Error> for CliError {
    fn from(e: tstar::Error) -> Self {
        use tstar::Error as E;
        let code = match &e {
            E::Config(_) | E::Leakage { .. } => EXIT_USAGE,
            E::Divergence(_) => EXIT_DIVERGENCE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Caps the global worker pool; 0 keeps one thread per core. Only the first call takes effect.
pub fn configure_jobs(jobs: usize) {
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMode {
    None,
    Rolling,
    Sliding,
}

pub const BUNDLE: &str = "bundle.json";
pub const FORECAST_HEADER: &str = "station_id,quarter_index,mu,r,median,p05,p95";
pub const SAMPLES_HEADER: &str = "station_id,quarter_index,samples";

fn checkpoint_name(stage: u8, kind: DemandKind) -> String {
    format!("stage{stage}_{kind}.json")
}

fn archive_name(kind: DemandKind) -> String {
    format!("stage1_archive_{kind}.json")
}

fn ensure_output(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn load_bundle(cfg: &RunConfig) -> CliResult<NetworkData> {
    let path = cfg.output(BUNDLE);
    if !path.is_file() {
        return Err(CliError::data(format!(
            "{}: dataset bundle not found (run `tstar ingest` first)",
            path.display()
        )));
    }
    Ok(NetworkData::load(&path)?)
}

fn load_checkpoint(cfg: &RunConfig, name: &str, hint: &str) -> CliResult<StageModel> {
    let path = cfg.output(name);
    if !path.is_file() {
        return Err(CliError::data(format!("{}: checkpoint not found ({hint})", path.display())));
    }
    Ok(StageModel::from_checkpoint(&Checkpoint::load(&path)?)?)
}

fn train_stations(cfg: &RunConfig, data: &NetworkData) -> CliResult<Vec<StationId>> {
    let holdout = cfg.holdout();
    for h in &holdout {
        if data.station(h).is_none() {
            return Err(CliError::data(format!("holdout station {h} is not in the station list")));
        }
    }
    let ids: Vec<StationId> = data.station_ids().into_iter().filter(|id| !holdout.contains(id)).collect();
    if ids.is_empty() {
        return Err(CliError::config("every station is held out"));
    }
    Ok(ids)
}

/// Summary of one ingest run.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub bundle: PathBuf,
    pub report: String,
}

/// Parses the input files into `bundle.json` plus `ingest_report.txt`.
pub fn cmd_ingest(cfg: &RunConfig) -> CliResult<IngestOutcome> {
    cfg.validate()?;
    cfg.validate_inputs()?;
    let (grid, _) = cfg.grid_and_split()?;
    let stations = parse_stations(cfg.path("stations"))?;
    let (trips, trip_report) = parse_trips(cfg.path("trips"))?;
    let (metro, metro_report) = parse_metro(cfg.path("metro"))?;
    let (weather, weather_report) = parse_weather(cfg.path("weather"), cfg.weather_gap_hours()?)?;
    let metro_stations = parse_metro_stations(cfg.path("metro_stations"))?;
    let holidays = load_holidays(cfg.path("holidays"))?;
    let known: std::collections::BTreeSet<&StationId> = stations.iter().map(|s| &s.id).collect();
    let unknown = trips
        .iter()
        .filter(|t| !known.contains(&t.origin) || !known.contains(&t.destination))
        .count();
    let data = NetworkData::from_records(
        grid,
        stations,
        &trips,
        &metro_stations,
        &metro,
        &weather,
        holidays,
        cfg.proximity_m()?,
        cfg.weather_gap_hours()?,
    )?;
    let dir = ensure_output(cfg)?;
    let bundle = dir.join(BUNDLE);
    data.save(&bundle)?;
    let linked = data.links.values().filter(|l| l.is_connected()).count();
    let report = format!(
        "trips: {trip_report}\ntrips with an unknown station endpoint: {unknown}\nmetro: {metro_report}\nweather: {weather_report}\n\
         stations: {} ({linked} linked to metro)\ndays: {}\n",
        data.stations.len(),
        data.days()
    );
    std::fs::write(dir.join("ingest_report.txt"), &report)?;
    Ok(IngestOutcome { bundle, report })
}

/// Files written by a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOutcome {
    pub written: Vec<PathBuf>,
    pub final_losses: BTreeMap<String, f64>,
}

/// Stage 1 fits the pickup and drop-off hourly models and writes both rolling
/// archives plus the signal dump; stage 2 fits the quarter-hour model for the target.
pub fn cmd_train(cfg: &RunConfig, stage: Stage) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let pcfg = cfg.pipeline()?;
    let (_, split) = cfg.grid_and_split()?;
    let data = load_bundle(cfg)?;
    split.validate(data.grid.len())?;
    let stations = train_stations(cfg, &data)?;
    let dir = ensure_output(cfg)?;
    let mut out = TrainOutcome::default();
    let record = |out: &mut TrainOutcome, name: String, m: &StageModel| -> CliResult<()> {
        let path = dir.join(&name);
        m.checkpoint().save(&path)?;
        if let Some(loss) = m.report.as_ref().and_then(|r| r.final_loss()) {
            out.final_losses.insert(name, loss);
        }
        out.written.push(path);
        Ok(())
    };
    if matches!(stage, Stage::One | Stage::Both) {
        let mut archives = Vec::new();
        for kind in [DemandKind::Pickup, DemandKind::Dropoff] {
            let m = tstar::tstar::stage1_fit(&data, &split, kind, &pcfg, &stations)?;
            record(&mut out, checkpoint_name(1, kind), &m)?;
            let n = data.hourly_grid().len();
            let archive = tstar::tstar::stage1_forecast_rolling(&m, &data, kind, &stations, 0..n, pcfg.samples, pcfg.seed, false)?;
            let path = dir.join(archive_name(kind));
            archive.save(&path)?;
            out.written.push(path);
            archives.push(archive);
        }
        let pair = ArchivePair {
            dropoff: archives.pop().expect("two archives"),
            pickup: archives.pop().expect("two archives"),
        };
        let csv = dir.join("stage1_archive.csv");
        pair.get(pcfg.target).write_csv(&csv)?;
        let signals = dir.join("signals.csv");
        write_signals_csv(&pair.all_signals(&data, &stations)?, &signals)?;
        out.written.extend([csv, signals]);
    }
    if matches!(stage, Stage::Two | Stage::Both) {
        let load = |kind| -> CliResult<Stage1Archive> {
            let path = dir.join(archive_name(kind));
            if !path.is_file() {
                return Err(CliError::data(format!(
                    "stage 2 needs the stage-1 archive {} (run `tstar train --stage 1` first)",
                    path.display()
                )));
            }
            Ok(Stage1Archive::load(&path)?)
        };
        let pair = match pcfg.signal_source {
            tstar::tstar::SignalSource::InSample => ArchivePair {
                pickup: load(DemandKind::Pickup)?,
                dropoff: load(DemandKind::Dropoff)?,
            },
            tstar::tstar::SignalSource::Blocked => tstar::tstar::blocked_archives(&data, &split, &pcfg, &stations)?,
        };
        let m = tstar::tstar::stage2_fit(&data, &split, &pair, &pcfg, &stations)?;
        record(&mut out, checkpoint_name(2, pcfg.target), &m)?;
    }
    Ok(out)
}

fn load_pipeline(cfg: &RunConfig) -> CliResult<FittedPipeline> {
    let pcfg = cfg.pipeline()?;
    let (_, split) = cfg.grid_and_split()?;
    let stage1 = "run `tstar train --stage 1` first";
    Ok(FittedPipeline {
        stage1_pickup: load_checkpoint(cfg, &checkpoint_name(1, DemandKind::Pickup), stage1)?,
        stage1_dropoff: load_checkpoint(cfg, &checkpoint_name(1, DemandKind::Dropoff), stage1)?,
        stage2: load_checkpoint(cfg, &checkpoint_name(2, pcfg.target), "run `tstar train --stage 2` first")?,
        split,
        config: pcfg,
    })
}

pub fn default_forecast_path(cfg: &RunConfig) -> CliResult<PathBuf> {
    Ok(cfg.output(&format!("forecast_{}.csv", cfg.target()?)))
}

/// `<stem>_samples.csv` next to a forecast file.
pub fn samples_path(forecast: &Path) -> PathBuf {
    let stem = forecast.file_stem().and_then(|s| s.to_str()).unwrap_or("forecast");
    forecast.with_file_name(format!("{stem}_samples.csv"))
}

/// Test-split forecasts for the trained stations, plus unseen stations from
/// `zero_shot` (a station file) forecast through the mean embedding.
pub fn cmd_forecast(
    cfg: &RunConfig,
    stations: Option<Vec<StationId>>,
    zero_shot: Option<&Path>,
    output: Option<PathBuf>,
) -> CliResult<PathBuf> {
    cfg.validate()?;
    let mut data = load_bundle(cfg)?;
    let pipeline = load_pipeline(cfg)?;
    let mut ids = stations.unwrap_or_else(|| pipeline.stage2.model.stations().to_vec());
    if let Some(path) = zero_shot {
        let extra: Vec<StationMeta> = parse_stations(path)?;
        for meta in extra {
            if !data.pickups.contains_key(&meta.id) {
                return Err(CliError::data(format!("{}: station {} has no demand history in the bundle", path.display(), meta.id)));
            }
            if !ids.contains(&meta.id) {
                ids.push(meta.id.clone());
            }
            match data.stations.iter_mut().find(|s| s.id == meta.id) {
                Some(s) => *s = meta,
                None => data.stations.push(meta),
            }
        }
    }
    let zs = zero_shot.is_some();
    let archives = pipeline.archives(&data, &ids, zs)?;
    let fc = pipeline.forecast(&data, &archives, &ids, pipeline.split.test(), zs)?;
    let path = match output {
        Some(p) => p,
        None => {
            ensure_output(cfg)?;
            default_forecast_path(cfg)?
        }
    };
    write_forecasts(&fc, &path)?;
    Ok(path)
}

pub fn write_forecasts(fc: &[QuarterForecast], path: &Path) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut s = BufWriter::new(File::create(samples_path(path))?);
    writeln!(w, "{FORECAST_HEADER}")?;
    writeln!(s, "{SAMPLES_HEADER}")?;
    for f in fc {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            f.station,
            f.quarter,
            f.dist.params.mu(),
            f.dist.params.r(),
            f.dist.point,
            f.dist.interval.0,
            f.dist.interval.1
        )?;
        let joined: Vec<String> = f.dist.samples.iter().map(u64::to_string).collect();
        writeln!(s, "{},{},{}", f.station, f.quarter, joined.join(";"))?;
    }
    w.flush()?;
    s.flush()?;
    Ok(())
}

/// One parsed line of a forecast file.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub station: StationId,
    pub quarter: usize,
    pub mu: f64,
    pub r: f64,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
}

pub fn read_forecasts(path: &Path) -> CliResult<Vec<ForecastRow>> {
    let bad = |line: usize, msg: &str| CliError::data(format!("{}: line {line}: {msg}", path.display()));
    let file = File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != FORECAST_HEADER {
        return Err(bad(1, &format!("expected header `{FORECAST_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(i + 2, "expected 7 fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
        let (Ok(quarter), Some(mu), Some(r), Some(median), Some(p05), Some(p95)) =
            (f[1].trim().parse::<usize>(), num(f[2]), num(f[3]), num(f[4]), num(f[5]), num(f[6]))
        else {
            return Err(bad(i + 2, "unparsable field"));
        };
        if !(mu > 0.0 && r > 0.0) || !(p05 <= median && median <= p95) {
            return Err(bad(i + 2, "inconsistent distribution summary"));
        }
        out.push(ForecastRow {
            station: StationId::from(f[0].trim()),
            quarter,
            mu,
            r,
            median,
            p05,
            p95,
        });
    }
    Ok(out)
}

fn read_samples(path: &Path) -> CliResult<BTreeMap<(StationId, usize), Vec<f64>>> {
    let bad = |line: usize| CliError::data(format!("{}: line {line}: malformed samples row", path.display()));
    let mut lines = BufReader::new(File::open(path)?).lines();
    if lines.next().transpose()?.as_deref().map(str::trim) != Some(SAMPLES_HEADER) {
        return Err(CliError::data(format!("{}: expected header `{SAMPLES_HEADER}`", path.display())));
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let mut f = line.splitn(3, ',');
        let (Some(id), Some(q), Some(s)) = (f.next(), f.next(), f.next()) else { return Err(bad(i + 2)) };
        let q: usize = q.parse().map_err(|_| bad(i + 2))?;
        let v: Vec<f64> = s.split(';').map(|x| x.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad(i + 2))?;
        out.insert((StationId::from(id), q), v);
    }
    Ok(out)
}

/// Files written by an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutcome {
    pub written: Vec<PathBuf>,
    pub reports: Vec<ScoreReport>,
}

fn rows_from_forecasts(
    rows: &[ForecastRow],
    samples: Option<&BTreeMap<(StationId, usize), Vec<f64>>>,
    data: &NetworkData,
    kind: DemandKind,
    n: usize,
    seed: u64,
    alpha: f64,
) -> CliResult<Vec<ScoreRow>> {
    rows.iter()
        .map(|r| {
            let series = data.series(kind, &r.station)?;
            let y = *series
                .get(r.quarter)
                .ok_or_else(|| CliError::data(format!("quarter {} outside the data", r.quarter)))? as f64;
            let draws = match samples.and_then(|m| m.get(&(r.station.clone(), r.quarter))) {
                Some(s) => s.clone(),
                None => {
                    // no sample file: redraw from the stored distribution
                    let p = NegBinParams::new(r.mu, r.r)?;
                    let d = p.sample(n, mix_seed(&[seed, station_hash(&r.station), r.quarter as u64]));
                    d.into_iter().map(|x| x as f64).collect()
                }
            };
            Ok(ScoreRow::from_samples(r.station.clone(), r.quarter, y, r.median, r.p05, r.p95, &draws, alpha)?)
        })
        .collect()
}

fn write_reports(rows: &[ScoreRow], mask: &AbnormalMask, dir: &Path, prefix: &str) -> CliResult<(ScoreReport, Vec<PathBuf>)> {
    let report = build_report(rows, mask);
    let paths = [
        dir.join(format!("{prefix}report.csv")),
        dir.join(format!("{prefix}report_summary.csv")),
        dir.join(format!("{prefix}report_temporal.csv")),
    ];
    write_report_csv(rows, mask, &paths[0])?;
    write_summary_csv(&report, &paths[1])?;
    write_temporal_csv(&report, &paths[2])?;
    Ok((report, paths.to_vec()))
}

fn abnormal_mask(data: &NetworkData, kind: DemandKind, split: &SplitSpec, z: f64) -> CliResult<AbnormalMask> {
    Ok(AbnormalMask::fit(
        data.counts(kind).iter().map(|(k, v)| (k, v.as_slice())),
        split,
        z,
    )?)
}

/// Scores a forecast file (`CvMode::None`) or runs a backtest that retrains per fold.
pub fn cmd_evaluate(cfg: &RunConfig, forecast: Option<&Path>, cv: CvMode) -> CliResult<EvaluateOutcome> {
    cfg.validate()?;
    let data = load_bundle(cfg)?;
    let dir = ensure_output(cfg)?;
    let kind = cfg.target()?;
    let alpha = cfg.alpha()?;
    let z = cfg.abnormal_z()?;
    match cv {
        CvMode::None => {
            let (_, split) = cfg.grid_and_split()?;
            let path = match forecast {
                Some(p) => p.to_path_buf(),
                None => default_forecast_path(cfg)?,
            };
            let rows = read_forecasts(&path)?;
            let sp = samples_path(&path);
            let samples = if sp.is_file() { Some(read_samples(&sp)?) } else { None };
            let pcfg = cfg.pipeline()?;
            let scored = rows_from_forecasts(&rows, samples.as_ref(), &data, kind, pcfg.samples, pcfg.seed, alpha)?;
            let mask = abnormal_mask(&data, kind, &split, z)?;
            let (report, mut written) = write_reports(&scored, &mask, &dir, "")?;
            let archive = dir.join(archive_name(kind));
            if archive.is_file() {
                let archive = Stage1Archive::load(&archive)?;
                let keys: Vec<_> = scored.iter().map(|r| (r.station.clone(), r.index)).collect();
                let b = score_baselines(&data, kind, &split, &archive, &keys, alpha)?;
                let path = dir.join("baselines_summary.csv");
                write_baselines(&path, &report, &b)?;
                written.push(path);
            }
            Ok(EvaluateOutcome {
                written,
                reports: vec![report],
            })
        }
        CvMode::Rolling | CvMode::Sliding => {
            let weeks = data.days() / 7;
            let folds = match cv {
                CvMode::Rolling => {
                    let [initial, val, step, n] = cfg.cv_rolling()?;
                    rolling_origin_folds(initial, val, step, n, weeks)?
                }
                _ => {
                    let [window, val, step, max] = cfg.cv_sliding()?;
                    sliding_window_folds(window, val, step, weeks, Some(max))?
                }
            };
            let reports = run_cv(cfg, &data, &folds, weeks)?;
            let mut written = Vec::new();
            let name = if cv == CvMode::Rolling { "rolling" } else { "sliding" };
            let folds_path = dir.join(format!("cv_{name}_folds.csv"));
            write_folds_csv(&reports, &folds_path)?;
            written.push(folds_path);
            for fr in &reports {
                let p = dir.join(format!("cv_{name}_fold{}_report_summary.csv", fr.fold.index + 1));
                write_summary_csv(&fr.report, &p)?;
                written.push(p);
            }
            Ok(EvaluateOutcome {
                written,
                reports: reports.into_iter().map(|r| r.report).collect(),
            })
        }
    }
}

fn write_baselines(path: &Path, model: &ScoreReport, b: &tstar::tstar::BaselineRows) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "model,count,mae,rmse,mcrps,mis")?;
    let none = AbnormalMask::none();
    let entries = [
        ("tstar", model.overall),
        ("historical_average", build_report(&b.historical_average, &none).overall),
        ("myopic", build_report(&b.myopic, &none).overall),
        ("hourly_split", build_report(&b.hourly_split, &none).overall),
    ];
    for (name, s) in entries {
        writeln!(w, "{name},{},{},{},{},{}", s.count, s.mae, s.rmse, s.mcrps, s.mis)?;
    }
    w.flush()?;
    Ok(())
}

/// Retrains the full pipeline on each fold's training weeks and scores its validation weeks.
pub fn run_cv(cfg: &RunConfig, data: &NetworkData, folds: &[Fold], weeks: usize) -> CliResult<Vec<FoldReport>> {
    let base = cfg.pipeline()?;
    let kind = cfg.target()?;
    let alpha = cfg.alpha()?;
    let z = cfg.abnormal_z()?;
    let stations = train_stations(cfg, data)?;
    let mut failure: Option<CliError> = None;
    let out = run_folds(folds, weeks, |fold| {
        let attempt = || -> CliResult<ScoreReport> {
            let train = fold.train_days();
            let val = fold.validation_days();
            let sliced = data.slice_days(train.start..val.end)?;
            let split = SplitSpec::new(train.len() * 96, sliced.grid.len());
            let mut pcfg = base.clone();
            pcfg.seed = mix_seed(&[base.seed, fold.index as u64]);
            let fitted = FittedPipeline::fit(&sliced, &split, &pcfg, Some(&stations))?;
            let archives = fitted.archives(&sliced, &stations, false)?;
            let fc = fitted.forecast(&sliced, &archives, &stations, split.test(), false)?;
            let rows = score_forecasts(&fc, &sliced, kind, alpha)?;
            let mask = abnormal_mask(&sliced, kind, &split, z)?;
            Ok(build_report(&rows, &mask))
        };
        attempt().map_err(|e| {
            let msg = e.message.clone();
            failure = Some(e);
            tstar::Error::Invalid(msg)
        })
    });
    match (out, failure) {
        (Ok(r), _) => Ok(r),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
    }
}

/// Reads a flat `key = value` synthetic spec on top of [`SynthSpec::network`].
pub fn parse_synth_spec(text: &str) -> CliResult<SynthSpec> {
    let mut kv = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("spec line {}: expected `key = value`", n + 1)))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    fn take<T: std::str::FromStr>(kv: &mut BTreeMap<String, String>, key: &str, default: T) -> CliResult<T> {
        match kv.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CliError::config(format!("spec: bad value `{v}` for `{key}`"))),
        }
    }
    let stations = take(&mut kv, "stations", 20usize)?;
    let days = take(&mut kv, "days", 120usize)?;
    let seed = take(&mut kv, "seed", 7u64)?;
    let mut spec = SynthSpec::network(stations, days, seed);
    if let Some(start) = kv.remove("start") {
        let d = chrono::NaiveDate::parse_from_str(&start, "%Y-%m-%d")
            .map_err(|_| CliError::config(format!("spec: bad start date `{start}`")))?;
        let shift = d - spec.start;
        spec.holidays.iter_mut().for_each(|h| *h += shift);
        spec.start = d;
    }
    if let Some(w) = kv.remove("quarter_weights") {
        let v: Vec<f64> = w
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::config("spec: quarter_weights needs four numbers"))?;
        spec.quarter_weights = v.try_into().map_err(|_| CliError::config("spec: quarter_weights needs four numbers"))?;
    }
    spec.temperature_coef = take(&mut kv, "temperature_coef", spec.temperature_coef)?;
    spec.precipitation_coef = take(&mut kv, "precipitation_coef", spec.precipitation_coef)?;
    spec.metro_stations = take(&mut kv, "metro_stations", spec.metro_stations)?;
    spec.linked_fraction = take(&mut kv, "linked_fraction", spec.linked_fraction)?;
    spec.metro_coupling = take(&mut kv, "metro_coupling", spec.metro_coupling)?;
    spec.metro_persistence = take(&mut kv, "metro_persistence", spec.metro_persistence)?;
    spec.metro_noise = take(&mut kv, "metro_noise", spec.metro_noise)?;
    spec.metro_volume = take(&mut kv, "metro_volume", spec.metro_volume)?;
    spec.r_true = take(&mut kv, "r_true", spec.r_true)?;
    spec.zero_inflation = take(&mut kv, "zero_inflation", spec.zero_inflation)?;
    spec.holiday_factor = take(&mut kv, "holiday_factor", spec.holiday_factor)?;
    if let Some(k) = kv.keys().next() {
        return Err(CliError::config(format!("spec: unknown key `{k}`")));
    }
    spec.validate()?;
    Ok(spec)
}

/// Writes a synthetic dataset in the ingest schemas plus a `tstar.conf` whose
/// dates hold out the last `test_days` days.
pub fn cmd_synth(spec: &SynthSpec, out: &Path, test_days: usize) -> CliResult<PathBuf> {
    if test_days == 0 || test_days >= spec.days {
        return Err(CliError::config("test days must be between 1 and the generated days - 1"));
    }
    let data = generate(spec)?;
    write_dataset(&data, out, spec.seed)?;
    let day = |d: usize| (spec.start + chrono::Duration::days(d as i64)).format("%Y-%m-%d").to_string();
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("trips", "trips.csv".to_string()),
        ("stations", "stations.csv".into()),
        ("metro", "metro.csv".into()),
        ("metro_stations", "metro_stations.csv".into()),
        ("weather", "weather.csv".into()),
        ("holidays", "holidays.txt".into()),
        ("output_dir", "out".into()),
        ("start_date", day(0)),
        ("train_end_date", day(spec.days - test_days)),
        ("test_end_date", day(spec.days)),
        ("seed", spec.seed.to_string()),
    ] {
        cfg.set(k, &v)?;
    }
    let path = out.join("tstar.conf");
    std::fs::write(&path, cfg.render())?;
    Ok(path)
}
