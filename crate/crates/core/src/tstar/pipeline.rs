//! Stage-1 / Stage-2 fitting and rolling forecasts.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::archive::{variation_signals, ArchiveEntry, Stage1Archive, VariationSignal};
use super::baselines::{baseline_historical_average, baseline_hourly_split, baseline_myopic};
use super::network::NetworkData;
use crate::error::{Error, Result};
use crate::eval::ScoreRow;
use crate::features::{
    apply_norm_all, fit_norm_stats, metro_deviation_series, stage1_global_block, stage2_global_block, stage2_local_block,
    ChannelBlock, FeatureFrame, MetroProfiles, NormStats, SeasonalProfile, StaticFeatures,
};
use crate::timegrid::{DemandKind, SplitSpec, StationId, QUARTERS_PER_HOUR};
use crate::transformer::{
    mix_seed, predict, train, Checkpoint, Dataset, EmbedConfig, ForecastDistribution, Model, StationRef,
    StationSequence, TrainConfig, TrainReport, WindowRef, DEFAULT_SAMPLES,
};

const STAGE1: u64 = 1;
const STAGE2: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSize {
    pub station_embed_dim: usize,
    pub global_embed_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub mean_scaling: bool,
}

impl Default for ModelSize {
    fn default() -> Self {
        ModelSize {
            station_embed_dim: 8,
            global_embed_dim: 8,
            model_dim: 16,
            heads: 4,
            mean_scaling: true,
        }
    }
}

/// Where the Stage-1 estimates used to train Stage 2 come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    /// Rolling forecasts of the Stage-1 model fit on the whole training split.
    InSample,
    /// Each half of the training hours is forecast by a model fit on the other half.
    Blocked,
}

impl std::str::FromStr for SignalSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_sample" => Ok(SignalSource::InSample),
            "blocked" => Ok(SignalSource::Blocked),
            _ => Err(Error::config(format!("unknown signal source `{s}` (in_sample or blocked)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub target: DemandKind,
    /// Stage-1 look-back in hours.
    pub v1: usize,
    pub h1: usize,
    /// Stage-2 look-back in quarters.
    pub v2: usize,
    pub h2: usize,
    /// Draws per forecast distribution.
    pub samples: usize,
    pub seed: u64,
    pub stage1_size: ModelSize,
    pub stage2_size: ModelSize,
    pub stage1_train: TrainConfig,
    pub stage2_train: TrainConfig,
    /// Feed the holiday flag to Stage 2 as well.
    pub stage2_holiday: bool,
    pub signal_source: SignalSource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target: DemandKind::Pickup,
            v1: 24,
            h1: 1,
            v2: 24,
            h2: 1,
            samples: DEFAULT_SAMPLES,
            seed: 42,
            stage1_size: ModelSize::default(),
            stage2_size: ModelSize::default(),
            stage1_train: TrainConfig::default(),
            stage2_train: TrainConfig::default(),
            stage2_holiday: false,
            signal_source: SignalSource::InSample,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h1 != 1 || self.h2 != 1 {
            return Err(Error::config("only one-step-ahead horizons (h1 = h2 = 1) are supported"));
        }
        if self.v1 == 0 || self.v2 == 0 {
            return Err(Error::config("look-back windows must be positive"));
        }
        if self.samples == 0 {
            return Err(Error::config("samples must be positive"));
        }
        self.stage1_train.validate()?;
        self.stage2_train.validate()
    }
}

/// FNV-1a of the station id, used to give every station its own sampling stream.
pub fn station_hash(id: &StationId) -> u64 {
    id.as_str()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn kind_code(kind: DemandKind) -> u64 {
    match kind {
        DemandKind::Pickup => 0,
        DemandKind::Dropoff => 1,
    }
}

/// A trained predictor with the normalization it was trained under.
#[derive(Debug, Clone)]
pub struct StageModel {
    pub model: Model,
    pub norm: NormStats,
    pub train: TrainConfig,
    pub report: Option<TrainReport>,
}

impl StageModel {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, &self.train, Some(self.norm.clone()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let norm = ck
            .norm
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no normalization statistics".into()))?;
        Ok(StageModel {
            model: ck.to_model()?,
            norm,
            train: ck.train.clone(),
            report: None,
        })
    }

    pub fn lookback(&self) -> usize {
        self.model.embed_config().lookback
    }
}

/// Mean of the training-station embeddings, the representation given to unseen stations.
pub fn zero_shot_embed(model: &Model) -> Vec<f64> {
    model.mean_station_embedding()
}

fn max_capacity(data: &NetworkData, stations: &[StationId]) -> Result<u32> {
    stations
        .iter()
        .map(|id| data.station(id).map(|s| s.capacity).ok_or_else(|| Error::UnknownStation(id.to_string())))
        .try_fold(1u32, |m, c| Ok(m.max(c?)))
}

fn statics(data: &NetworkData, id: &StationId, max_cap: u32) -> Result<StaticFeatures> {
    let meta = data.station(id).ok_or_else(|| Error::UnknownStation(id.to_string()))?;
    Ok(StaticFeatures::new(meta.capacity, max_cap))
}

/// Raw Stage-1 frames on the hourly grid, sharing one global block.
pub fn stage1_frames(data: &NetworkData, stations: &[StationId], max_cap: u32) -> Result<Vec<FeatureFrame>> {
    let grid = data.hourly_grid();
    let global = Arc::new(stage1_global_block(&grid, &data.weather, &data.holidays)?);
    stations
        .iter()
        .map(|id| {
            FeatureFrame::new(
                id.clone(),
                grid,
                statics(data, id, max_cap)?,
                Arc::clone(&global),
                ChannelBlock::empty(grid.len()),
            )
        })
        .collect()
}

/// Both kinds' Stage-1 archives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivePair {
    pub pickup: Stage1Archive,
    pub dropoff: Stage1Archive,
}

impl ArchivePair {
    pub fn get(&self, kind: DemandKind) -> &Stage1Archive {
        match kind {
            DemandKind::Pickup => &self.pickup,
            DemandKind::Dropoff => &self.dropoff,
        }
    }

    pub fn signals(&self, data: &NetworkData, id: &StationId) -> Result<Vec<Option<VariationSignal>>> {
        variation_signals(
            data.series(DemandKind::Pickup, id)?,
            data.series(DemandKind::Dropoff, id)?,
            &self.pickup.row(id),
            &self.dropoff.row(id),
        )
    }

    pub fn all_signals(&self, data: &NetworkData, stations: &[StationId]) -> Result<BTreeMap<StationId, Vec<Option<VariationSignal>>>> {
        stations.iter().map(|id| Ok((id.clone(), self.signals(data, id)?))).collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn fit_stage(
    stations: &[StationId],
    raw: &[FeatureFrame],
    counts: &[Vec<u32>],
    split: &SplitSpec,
    targets: Range<usize>,
    size: &ModelSize,
    lookback: usize,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<StageModel> {
    let first = raw.first().ok_or_else(|| Error::invalid("no training stations"))?;
    let norm = fit_norm_stats(raw, split)?;
    let frames = apply_norm_all(raw, &norm)?;
    let sequences = frames
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(i, (f, c))| StationSequence::from_frame(f, StationRef::Row(i), c))
        .collect::<Result<Vec<_>>>()?;
    let all = Dataset::new(sequences, lookback, targets.end)?;
    let examples: Vec<WindowRef> = all.examples.iter().copied().filter(|e| targets.contains(&e.target)).collect();
    let dataset = Dataset::with_examples(all.sequences, lookback, targets.end, examples)?;
    let embed = EmbedConfig {
        station_embed_dim: size.station_embed_dim,
        static_dim: first.statics.as_vec().len(),
        global_in: first.global.width(),
        global_embed_dim: size.global_embed_dim,
        local_dim: first.local.width(),
        model_dim: size.model_dim,
        lookback,
        horizon: 1,
        heads: size.heads,
        mean_scaling: size.mean_scaling,
    };
    let mut cfg = train_cfg.clone();
    cfg.seed = mix_seed(&[seed, 0]);
    let mut model = Model::new(embed, &cfg, stations.to_vec(), mix_seed(&[seed, 1]))?;
    let report = train(&mut model, &dataset, &cfg)?;
    Ok(StageModel {
        model,
        norm,
        train: cfg,
        report: Some(report),
    })
}

fn stage1_fit_range(
    data: &NetworkData,
    split: &SplitSpec,
    kind: DemandKind,
    cfg: &PipelineConfig,
    stations: &[StationId],
    targets: Range<usize>,
    fold: u64,
) -> Result<StageModel> {
    let hsplit = split.to_hourly()?;
    let raw = stage1_frames(data, stations, max_capacity(data, stations)?)?;
    let counts = stations.iter().map(|id| data.hourly_series(kind, id)).collect::<Result<Vec<_>>>()?;
    let norm_split = SplitSpec::new(targets.end, hsplit.test_end);
    fit_stage(
        stations,
        &raw,
        &counts,
        &norm_split,
        targets,
        &cfg.stage1_size,
        cfg.v1,
        &cfg.stage1_train,
        mix_seed(&[cfg.seed, STAGE1, kind_code(kind), fold]),
    )
}

/// One global hourly model for `kind` over the training hours of `stations`.
pub fn stage1_fit(
    data: &NetworkData,
    split: &SplitSpec,
    kind: DemandKind,
    cfg: &PipelineConfig,
    stations: &[StationId],
) -> Result<StageModel> {
    cfg.validate()?;
    split.validate(data.grid.len())?;
    let hsplit = split.to_hourly()?;
    stage1_fit_range(data, split, kind, cfg, stations, cfg.v1..hsplit.train_end, 0)
}

/// Rolling one-hour-ahead forecasts for every hour in `hours` with a full look-back.
///
/// The forecast for hour `h` reads counts of hours `< h` only.
#[allow(clippy::too_many_arguments)]
pub fn stage1_forecast_rolling(
    s1: &StageModel,
    data: &NetworkData,
    kind: DemandKind,
    stations: &[StationId],
    hours: Range<usize>,
    samples: usize,
    seed: u64,
    zero_shot: bool,
) -> Result<Stage1Archive> {
    let n_hours = data.hourly_grid().len();
    let lookback = s1.lookback();
    let raw = stage1_frames(data, stations, max_capacity(data, s1.model.stations())?)?;
    let frames = apply_norm_all(&raw, &s1.norm)?;
    let rows: Vec<Result<Vec<(usize, ArchiveEntry)>>> = stations
        .par_iter()
        .zip(frames.par_iter())
        .map(|(id, frame)| {
            let sref = s1.model.station_ref(id, zero_shot)?;
            let seq = StationSequence::from_frame(frame, sref, &data.hourly_series(kind, id)?)?;
            let mut out = Vec::new();
            for h in hours.start.max(lookback)..hours.end.min(n_hours) {
                let Some(w) = seq.window(h, lookback) else { continue };
                let s = mix_seed(&[seed, STAGE1, kind_code(kind), station_hash(id), h as u64]);
                let dist = predict(&s1.model, &w, samples, s)?;
                out.push((
                    h,
                    ArchiveEntry {
                        mu: dist.params.mu(),
                        sigma: dist.sample_std(),
                        sigma_analytic: dist.params.std_dev(),
                    },
                ));
            }
            Ok(out)
        })
        .collect();
    let mut archive = Stage1Archive::new(kind, n_hours);
    for (id, row) in stations.iter().zip(rows) {
        for (h, e) in row? {
            archive.push(id, h, e)?;
        }
    }
    Ok(archive)
}

/// Raw Stage-2 frames on the quarter grid for the target kind.
pub fn stage2_frames(
    data: &NetworkData,
    stations: &[StationId],
    max_cap: u32,
    archives: &ArchivePair,
    profiles: &MetroProfiles,
    kind: DemandKind,
    include_holiday: bool,
) -> Result<Vec<FeatureFrame>> {
    let global = Arc::new(stage2_global_block(&data.grid, &data.holidays, include_holiday)?);
    stations
        .iter()
        .map(|id| {
            let pairs: Vec<Option<(f64, f64)>> = archives
                .signals(data, id)?
                .into_iter()
                .map(|s| s.map(|s| (s.delta_pickup, s.delta_dropoff)))
                .collect();
            let metro = metro_deviation_series(&data.metro, &data.link(id), profiles, kind);
            let local = stage2_local_block(&data.grid, &archives.get(kind).estimates(id), &pairs, &metro)?;
            FeatureFrame::new(id.clone(), data.grid, statics(data, id, max_cap)?, Arc::clone(&global), local)
        })
        .collect()
}

fn require_archives(archives: &ArchivePair, stations: &[StationId]) -> Result<()> {
    for (label, a, kind) in [
        ("pickup", &archives.pickup, DemandKind::Pickup),
        ("dropoff", &archives.dropoff, DemandKind::Dropoff),
    ] {
        if a.kind != kind {
            return Err(Error::config(format!("stage-1 archive passed as {label} holds {} forecasts", a.kind)));
        }
        if let Some(id) = stations.iter().find(|id| a.row(id).iter().all(Option::is_none)) {
            return Err(Error::config(format!(
                "stage-2 input group `stage-1 {label} archive` has no forecasts for station {id}"
            )));
        }
    }
    Ok(())
}

/// The quarter-hour model for `cfg.target`, trained on the training quarters of `stations`.
pub fn stage2_fit(
    data: &NetworkData,
    split: &SplitSpec,
    archives: &ArchivePair,
    cfg: &PipelineConfig,
    stations: &[StationId],
) -> Result<StageModel> {
    cfg.validate()?;
    split.validate(data.grid.len())?;
    require_archives(archives, stations)?;
    let profiles = MetroProfiles::fit(&data.metro, split)?;
    let raw = stage2_frames(
        data,
        stations,
        max_capacity(data, stations)?,
        archives,
        &profiles,
        cfg.target,
        cfg.stage2_holiday,
    )?;
    let counts = stations
        .iter()
        .map(|id| data.series(cfg.target, id).map(<[u32]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    fit_stage(
        stations,
        &raw,
        &counts,
        split,
        cfg.v2..split.train_end,
        &cfg.stage2_size,
        cfg.v2,
        &cfg.stage2_train,
        mix_seed(&[cfg.seed, STAGE2, kind_code(cfg.target)]),
    )
}

/// Distribution for quarter `t + 1` from the look-back ending at `t`; `None` if the window has a gap.
pub fn stage2_forecast(
    s2: &StageModel,
    seq: &StationSequence,
    t: usize,
    samples: usize,
    seed: u64,
) -> Result<Option<ForecastDistribution>> {
    match seq.window(t + 1, s2.lookback()) {
        Some(w) => Ok(Some(predict(&s2.model, &w, samples, seed)?)),
        None => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuarterForecast {
    pub station: StationId,
    /// The forecast quarter (origin + 1).
    pub quarter: usize,
    pub dist: ForecastDistribution,
}

/// Both Stage-1 models and the Stage-2 model of one target kind.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub config: PipelineConfig,
    pub split: SplitSpec,
    pub stage1_pickup: StageModel,
    pub stage1_dropoff: StageModel,
    pub stage2: StageModel,
}

impl FittedPipeline {
    /// Fits everything on the training split of `stations` (all stations when `None`).
    pub fn fit(data: &NetworkData, split: &SplitSpec, cfg: &PipelineConfig, stations: Option<&[StationId]>) -> Result<Self> {
        let stations = stations.map_or_else(|| data.station_ids(), <[StationId]>::to_vec);
        let stage1_pickup = stage1_fit(data, split, DemandKind::Pickup, cfg, &stations)?;
        let stage1_dropoff = stage1_fit(data, split, DemandKind::Dropoff, cfg, &stations)?;
        let archives = match cfg.signal_source {
            SignalSource::InSample => rolling_archives(&stage1_pickup, &stage1_dropoff, data, cfg, &stations, false)?,
            SignalSource::Blocked => blocked_archives(data, split, cfg, &stations)?,
        };
        let stage2 = stage2_fit(data, split, &archives, cfg, &stations)?;
        Ok(FittedPipeline {
            config: cfg.clone(),
            split: *split,
            stage1_pickup,
            stage1_dropoff,
            stage2,
        })
    }

    pub fn stage1(&self, kind: DemandKind) -> &StageModel {
        match kind {
            DemandKind::Pickup => &self.stage1_pickup,
            DemandKind::Dropoff => &self.stage1_dropoff,
        }
    }

    /// Rolling Stage-1 archives over every hour of `data`.
    pub fn archives(&self, data: &NetworkData, stations: &[StationId], zero_shot: bool) -> Result<ArchivePair> {
        rolling_archives(&self.stage1_pickup, &self.stage1_dropoff, data, &self.config, stations, zero_shot)
    }

    /// Stage-2 forecasts for each station and each target quarter in `quarters`.
    pub fn forecast(
        &self,
        data: &NetworkData,
        archives: &ArchivePair,
        stations: &[StationId],
        quarters: Range<usize>,
        zero_shot: bool,
    ) -> Result<Vec<QuarterForecast>> {
        forecast_quarters(&self.stage2, &self.config, &self.split, data, archives, stations, quarters, zero_shot)
    }
}

fn rolling_archives(
    pickup: &StageModel,
    dropoff: &StageModel,
    data: &NetworkData,
    cfg: &PipelineConfig,
    stations: &[StationId],
    zero_shot: bool,
) -> Result<ArchivePair> {
    let n = data.hourly_grid().len();
    Ok(ArchivePair {
        pickup: stage1_forecast_rolling(pickup, data, DemandKind::Pickup, stations, 0..n, cfg.samples, cfg.seed, zero_shot)?,
        dropoff: stage1_forecast_rolling(dropoff, data, DemandKind::Dropoff, stations, 0..n, cfg.samples, cfg.seed, zero_shot)?,
    })
}

/// Training-split archives where each half of the training hours is forecast by a
/// model fit on the other half. Hours from the end of training on are not covered.
pub fn blocked_archives(data: &NetworkData, split: &SplitSpec, cfg: &PipelineConfig, stations: &[StationId]) -> Result<ArchivePair> {
    let train_hours = split.to_hourly()?.train_end;
    let mid = (cfg.v1 + train_hours) / 2;
    if mid <= cfg.v1 + 1 || train_hours <= mid + 1 {
        return Err(Error::config("training split too short for blocked stage-1 signals"));
    }
    let one = |kind: DemandKind| -> Result<Stage1Archive> {
        let first = stage1_fit_range(data, split, kind, cfg, stations, cfg.v1..mid, 1)?;
        let second = stage1_fit_range(data, split, kind, cfg, stations, mid..train_hours, 2)?;
        let mut archive = stage1_forecast_rolling(&second, data, kind, stations, 0..mid, cfg.samples, cfg.seed, false)?;
        archive.extend(&stage1_forecast_rolling(
            &first,
            data,
            kind,
            stations,
            mid..train_hours,
            cfg.samples,
            cfg.seed,
            false,
        )?)?;
        Ok(archive)
    };
    Ok(ArchivePair {
        pickup: one(DemandKind::Pickup)?,
        dropoff: one(DemandKind::Dropoff)?,
    })
}

/// Normalized Stage-2 sequences for `stations`.
pub fn stage2_sequences(
    s2: &StageModel,
    cfg: &PipelineConfig,
    split: &SplitSpec,
    data: &NetworkData,
    archives: &ArchivePair,
    stations: &[StationId],
    zero_shot: bool,
) -> Result<Vec<StationSequence>> {
    let profiles = MetroProfiles::fit(&data.metro, split)?;
    let raw = stage2_frames(
        data,
        stations,
        max_capacity(data, s2.model.stations())?,
        archives,
        &profiles,
        cfg.target,
        cfg.stage2_holiday,
    )?;
    let frames = apply_norm_all(&raw, &s2.norm)?;
    stations
        .iter()
        .zip(&frames)
        .map(|(id, f)| StationSequence::from_frame(f, s2.model.station_ref(id, zero_shot)?, data.series(cfg.target, id)?))
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn forecast_quarters(
    s2: &StageModel,
    cfg: &PipelineConfig,
    split: &SplitSpec,
    data: &NetworkData,
    archives: &ArchivePair,
    stations: &[StationId],
    quarters: Range<usize>,
    zero_shot: bool,
) -> Result<Vec<QuarterForecast>> {
    let seqs = stage2_sequences(s2, cfg, split, data, archives, stations, zero_shot)?;
    let per_station: Vec<Result<Vec<QuarterForecast>>> = stations
        .par_iter()
        .zip(seqs.par_iter())
        .map(|(id, seq)| {
            let mut out = Vec::new();
            for q in quarters.start.max(1)..quarters.end.min(seq.len()) {
                let seed = mix_seed(&[cfg.seed, STAGE2, kind_code(cfg.target), station_hash(id), (q - 1) as u64]);
                if let Some(dist) = stage2_forecast(s2, seq, q - 1, cfg.samples, seed)? {
                    out.push(QuarterForecast {
                        station: id.clone(),
                        quarter: q,
                        dist,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_station {
        out.extend(r?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scoring

pub fn score_forecasts(forecasts: &[QuarterForecast], data: &NetworkData, kind: DemandKind, alpha: f64) -> Result<Vec<ScoreRow>> {
    forecasts
        .iter()
        .map(|f| {
            let y = data.series(kind, &f.station)?[f.quarter] as f64;
            ScoreRow::from_samples(
                f.station.clone(),
                f.quarter,
                y,
                f.dist.point as f64,
                f.dist.interval.0 as f64,
                f.dist.interval.1 as f64,
                &f.dist.samples_f64(),
                alpha,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRows {
    pub historical_average: Vec<ScoreRow>,
    pub myopic: Vec<ScoreRow>,
    pub hourly_split: Vec<ScoreRow>,
}

/// Baseline scores on the same (station, quarter) keys, each scored as a point mass.
///
/// The historical average of a station is fit on that station's own training quarters.
pub fn score_baselines(
    data: &NetworkData,
    kind: DemandKind,
    split: &SplitSpec,
    archive: &Stage1Archive,
    keys: &[(StationId, usize)],
    alpha: f64,
) -> Result<BaselineRows> {
    let mut profiles: BTreeMap<&StationId, SeasonalProfile> = BTreeMap::new();
    let mut rows = BaselineRows {
        historical_average: Vec::with_capacity(keys.len()),
        myopic: Vec::with_capacity(keys.len()),
        hourly_split: Vec::with_capacity(keys.len()),
    };
    for (id, q) in keys {
        let series = data.series(kind, id)?;
        if !profiles.contains_key(id) {
            profiles.insert(id, SeasonalProfile::fit_counts(series, &data.grid, split)?);
        }
        let y = series[*q] as f64;
        let c = data.grid.calendar(*q);
        let ha = baseline_historical_average(&profiles[id], c.day_of_week, c.hour, c.quarter.unwrap_or(0));
        let last = if *q > 0 { series[q - 1] } else { 0 };
        let split_point = baseline_hourly_split(&archive.row(id), *q).ok_or_else(|| Error::MissingStage1Coverage {
            station: id.to_string(),
            hour: q / QUARTERS_PER_HOUR,
        })?;
        rows.historical_average.push(ScoreRow::point_mass(id.clone(), *q, y, ha, alpha)?);
        rows.myopic.push(ScoreRow::point_mass(id.clone(), *q, y, baseline_myopic(last), alpha)?);
        rows.hourly_split.push(ScoreRow::point_mass(id.clone(), *q, y, split_point, alpha)?);
    }
    Ok(rows)
}
