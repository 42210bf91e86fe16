//! The two-stage framework: an hourly Stage-1 model whose rolling forecasts and
//! quarter-hour variation signals feed a quarter-hour Stage-2 model.

mod archive;
mod baselines;
mod network;
mod pipeline;

pub use archive::{
    variation_delta, variation_deltas, variation_signals, write_signals_csv, ArchiveEntry, Stage1Archive, VariationSignal,
};
pub use baselines::{baseline_historical_average, baseline_hourly_split, baseline_myopic};
pub use network::NetworkData;
pub use pipeline::{
    blocked_archives, forecast_quarters, score_baselines, score_forecasts, stage1_fit, stage1_forecast_rolling,
    stage1_frames, stage2_fit, stage2_forecast, stage2_frames, stage2_sequences, station_hash, zero_shot_embed,
    ArchivePair, BaselineRows, FittedPipeline, ModelSize, PipelineConfig, QuarterForecast, SignalSource, StageModel,
};

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use chrono::{Duration, NaiveDate};

    use super::*;
    use crate::features::MetroFlowGrid;
    use crate::ingest::{GeoPoint, StationMeta, WeatherRecord};
    use crate::timegrid::{DemandKind, SplitSpec, StationId, TimeGrid};
    use crate::transformer::TrainConfig;

    /// Network whose quarter counts come from `pattern(station, quarter)`.
    fn toy_network(days: usize, stations: usize, pattern: impl Fn(usize, usize) -> u32) -> NetworkData {
        let grid = TimeGrid::daily(NaiveDate::from_ymd_opt(2023, 3, 6).unwrap(), 15, days).unwrap();
        let metas: Vec<StationMeta> = (0..stations)
            .map(|i| StationMeta {
                id: StationId(format!("S{i}")),
                location: GeoPoint::new(38.9, -77.0 + 0.01 * i as f64).unwrap(),
                capacity: 10 + i as u32,
            })
            .collect();
        let counts: BTreeMap<StationId, Vec<u32>> = metas
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), (0..grid.len()).map(|q| pattern(i, q)).collect()))
            .collect();
        let weather = (0..grid.len() / 4)
            .map(|h| WeatherRecord {
                hour_start: grid.start() + Duration::hours(h as i64),
                temperature: 10.0 + (h % 24) as f64 * 0.5,
                precipitation: 0.0,
                wind_speed: 3.0,
            })
            .collect();
        let data = NetworkData {
            grid,
            stations: metas,
            pickups: counts.clone(),
            dropoffs: counts,
            weather,
            holidays: BTreeSet::new(),
            metro: MetroFlowGrid::from_records(&[], &grid),
            links: BTreeMap::new(),
        };
        data.validate().unwrap();
        data
    }

    fn quick_config() -> PipelineConfig {
        let size = ModelSize {
            station_embed_dim: 4,
            global_embed_dim: 4,
            model_dim: 8,
            heads: 2,
            mean_scaling: true,
        };
        let train = TrainConfig {
            epochs: 12,
            batch_size: 32,
            learning_rate: 1e-2,
            dropout: 0.0,
            hidden: 16,
            max_windows_per_epoch: Some(600),
            ..TrainConfig::default()
        };
        PipelineConfig {
            v1: 6,
            v2: 8,
            samples: 100,
            seed: 11,
            stage1_size: size.clone(),
            stage2_size: size,
            stage1_train: train.clone(),
            stage2_train: train,
            ..PipelineConfig::default()
        }
    }

    fn split_days(data: &NetworkData, train_days: usize) -> SplitSpec {
        SplitSpec::new(train_days * 96, data.grid.len())
    }

    #[test]
    fn constant_hourly_demand_is_recovered() {
        // NB maximum likelihood puts the mean at the sample mean
        let data = toy_network(8, 1, |_, _| 2);
        let split = split_days(&data, 6);
        let cfg = quick_config();
        let ids = data.station_ids();
        let s1 = stage1_fit(&data, &split, DemandKind::Pickup, &cfg, &ids).unwrap();
        let hs = split.to_hourly().unwrap();
        let a = stage1_forecast_rolling(&s1, &data, DemandKind::Pickup, &ids, hs.test(), 100, 1, false).unwrap();
        assert_eq!(a.len(), hs.test().len());
        for h in hs.test() {
            let mu = a.get(&ids[0], h).unwrap().mu;
            assert!((mu - 8.0).abs() / 8.0 < 0.10, "hour {h}: mu = {mu}");
        }
    }

    #[test]
    fn station_embeddings_separate_levels() {
        let data = toy_network(8, 2, |s, _| if s == 0 { 1 } else { 2 });
        let split = split_days(&data, 6);
        let mut cfg = quick_config();
        cfg.stage1_train.epochs = 20;
        let ids = data.station_ids();
        let s1 = stage1_fit(&data, &split, DemandKind::Pickup, &cfg, &ids).unwrap();
        let hs = split.to_hourly().unwrap();
        let a = stage1_forecast_rolling(&s1, &data, DemandKind::Pickup, &ids, hs.test(), 100, 1, false).unwrap();
        for (id, want) in ids.iter().zip([4.0, 8.0]) {
            let mean = hs.test().map(|h| a.get(id, h).unwrap().mu).sum::<f64>() / hs.test().len() as f64;
            assert!((mean - want).abs() / want < 0.15, "{id}: {mean} vs {want}");
        }
    }

    #[test]
    fn rolling_archive_coverage() {
        let data = toy_network(4, 2, |s, q| ((q * 7 + s * 3) % 5) as u32);
        let split = split_days(&data, 3);
        let mut cfg = quick_config();
        cfg.stage1_train.epochs = 1;
        let ids = data.station_ids();
        let s1 = stage1_fit(&data, &split, DemandKind::Pickup, &cfg, &ids).unwrap();
        let a = stage1_forecast_rolling(&s1, &data, DemandKind::Pickup, &ids, 0..96, 100, 1, false).unwrap();
        for id in &ids {
            let row = a.row(id);
            assert!(row[..cfg.v1].iter().all(Option::is_none));
            for e in row[cfg.v1..].iter() {
                let e = e.unwrap();
                assert!(e.mu > 0.0 && e.sigma >= 0.0 && e.sigma_analytic > 0.0);
            }
        }
        let b = stage1_forecast_rolling(&s1, &data, DemandKind::Pickup, &ids, 72..96, 100, 1, false).unwrap();
        assert_eq!(b.len(), 2 * 24);
        assert_eq!(b.get(&ids[0], 80), a.get(&ids[0], 80));
    }

    #[test]
    fn stage2_matches_stage1_share_without_sub_hour_structure() {
        let data = toy_network(8, 1, |_, _| 2);
        let split = split_days(&data, 6);
        let cfg = quick_config();
        let fitted = FittedPipeline::fit(&data, &split, &cfg, None).unwrap();
        let ids = data.station_ids();
        let archives = fitted.archives(&data, &ids, false).unwrap();
        let fc = fitted.forecast(&data, &archives, &ids, split.test(), false).unwrap();
        assert_eq!(fc.len(), split.test().len());
        for f in &fc {
            let share = archives.pickup.get(&f.station, f.quarter / 4).unwrap().mu / 4.0;
            let mu = f.dist.params.mu();
            assert!((mu - share).abs() / share < 0.10, "q{}: {mu} vs {share}", f.quarter);
            assert!(f.dist.interval.0 <= f.dist.point && f.dist.point <= f.dist.interval.1);
        }
    }

    #[test]
    fn all_zero_demand_forecasts_zero() {
        let data = toy_network(5, 2, |_, _| 0);
        let split = split_days(&data, 4);
        let fitted = FittedPipeline::fit(&data, &split, &quick_config(), None).unwrap();
        let ids = data.station_ids();
        let archives = fitted.archives(&data, &ids, false).unwrap();
        let fc = fitted.forecast(&data, &archives, &ids, split.test(), false).unwrap();
        assert_eq!(fc.len(), 2 * 96);
        assert!(fc.iter().all(|f| f.dist.point == 0));
    }

    #[test]
    fn first_test_quarter_uses_train_tail() {
        let data = toy_network(4, 1, |_, q| (q % 3) as u32);
        let split = split_days(&data, 3);
        let mut cfg = quick_config();
        cfg.stage1_train.epochs = 1;
        cfg.stage2_train.epochs = 1;
        let fitted = FittedPipeline::fit(&data, &split, &cfg, None).unwrap();
        let ids = data.station_ids();
        let archives = fitted.archives(&data, &ids, false).unwrap();
        let fc = fitted.forecast(&data, &archives, &ids, split.test(), false).unwrap();
        assert_eq!(fc[0].quarter, split.train_end);
        // the same forecast from the training portion alone plus the target slot
        let seqs = stage2_sequences(&fitted.stage2, &cfg, &split, &data, &archives, &ids, false).unwrap();
        let seed = crate::transformer::mix_seed(&[cfg.seed, 2, 0, station_hash(&ids[0]), (split.train_end - 1) as u64]);
        let direct = stage2_forecast(&fitted.stage2, &seqs[0], split.train_end - 1, cfg.samples, seed).unwrap().unwrap();
        assert_eq!(direct, fc[0].dist);
    }

    #[test]
    fn fitting_is_deterministic() {
        let data = toy_network(4, 2, |s, q| ((q * 5 + s) % 4) as u32);
        let split = split_days(&data, 3);
        let mut cfg = quick_config();
        cfg.stage1_train.epochs = 2;
        cfg.stage2_train.epochs = 2;
        let ids = data.station_ids();
        let run = || {
            let f = FittedPipeline::fit(&data, &split, &cfg, None).unwrap();
            let a = f.archives(&data, &ids, false).unwrap();
            let fc = f.forecast(&data, &a, &ids, split.test(), false).unwrap();
            (a, fc, f.stage2.model.params)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_shot_substitution() {
        let data = toy_network(4, 3, |s, q| ((q + s) % 3) as u32);
        let split = split_days(&data, 3);
        let mut cfg = quick_config();
        cfg.stage1_train.epochs = 1;
        cfg.stage2_train.epochs = 1;
        let ids = data.station_ids();
        let train_ids = &ids[..2];
        let fitted = FittedPipeline::fit(&data, &split, &cfg, Some(train_ids)).unwrap();
        let m = &fitted.stage2.model;
        let (u, v) = (m.embedding_row(0), m.embedding_row(1));
        let mean = zero_shot_embed(m);
        for i in 0..mean.len() {
            assert_eq!(mean[i], (u[i] + v[i]) / 2.0);
        }
        let held = &ids[2..];
        assert!(matches!(fitted.archives(&data, held, false), Err(crate::Error::UnknownStation(_))));
        let archives = fitted.archives(&data, held, true).unwrap();
        let fc = fitted.forecast(&data, &archives, held, split.test(), true).unwrap();
        assert_eq!(fc.len(), 96);
    }

    #[test]
    fn single_training_station_mean_is_identity() {
        let data = toy_network(3, 1, |_, q| (q % 2) as u32);
        let split = split_days(&data, 2);
        let mut cfg = quick_config();
        cfg.stage1_train.epochs = 1;
        let ids = data.station_ids();
        let s1 = stage1_fit(&data, &split, DemandKind::Pickup, &cfg, &ids).unwrap();
        assert_eq!(zero_shot_embed(&s1.model), s1.model.embedding_row(0));
    }

    #[test]
    fn stage2_needs_both_archives() {
        let data = toy_network(3, 1, |_, q| (q % 2) as u32);
        let split = split_days(&data, 2);
        let cfg = quick_config();
        let hours = data.hourly_grid().len();
        let mut pickup = Stage1Archive::new(DemandKind::Pickup, hours);
        let e = ArchiveEntry {
            mu: 1.0,
            sigma: 1.0,
            sigma_analytic: 1.0,
        };
        for h in 0..hours {
            pickup.push(&data.station_ids()[0], h, e).unwrap();
        }
        let archives = ArchivePair {
            pickup,
            dropoff: Stage1Archive::new(DemandKind::Dropoff, hours),
        };
        match stage2_fit(&data, &split, &archives, &cfg, &data.station_ids()) {
            Err(crate::Error::Config(msg)) => assert!(msg.contains("dropoff archive"), "{msg}"),
            other => panic!("expected a configuration error, got {other:?}"),
        }
    }

    #[test]
    fn blocked_signals_cover_training_hours() {
        let data = toy_network(4, 1, |_, q| (q % 3) as u32);
        let split = split_days(&data, 3);
        let mut cfg = quick_config();
        cfg.stage1_train.epochs = 1;
        cfg.stage2_train.epochs = 1;
        cfg.signal_source = SignalSource::Blocked;
        let ids = data.station_ids();
        let a = blocked_archives(&data, &split, &cfg, &ids).unwrap();
        let row = a.pickup.row(&ids[0]);
        assert!(row[cfg.v1..72].iter().all(Option::is_some));
        assert!(row[72..].iter().all(Option::is_none));
        FittedPipeline::fit(&data, &split, &cfg, None).unwrap();
    }

    #[test]
    fn baselines_score_same_keys() {
        let data = toy_network(3, 1, |_, q| (q % 4) as u32);
        let split = split_days(&data, 2);
        let id = data.station_ids()[0].clone();
        let mut archive = Stage1Archive::new(DemandKind::Pickup, 72);
        for h in 0..72 {
            archive
                .push(
                    &id,
                    h,
                    ArchiveEntry {
                        mu: 6.0,
                        sigma: 1.0,
                        sigma_analytic: 1.0,
                    },
                )
                .unwrap();
        }
        let keys: Vec<_> = split.test().map(|q| (id.clone(), q)).collect();
        let b = score_baselines(&data, DemandKind::Pickup, &split, &archive, &keys, 0.1).unwrap();
        // the pattern repeats daily, so the historical average is exact
        assert!(b.historical_average.iter().all(|r| r.mae_term == 0.0));
        assert_eq!(b.myopic[1].point, 0.0);
        assert_eq!(b.hourly_split[0].point, 1.5);
        assert_eq!(b.myopic[0].point, data.pickups[&id][split.train_end - 1] as f64);
    }

    #[test]
    fn network_slicing() {
        let data = toy_network(4, 1, |_, q| (q / 96) as u32);
        let s = data.slice_days(1..3).unwrap();
        assert_eq!(s.days(), 2);
        assert_eq!(s.pickups[&s.stations[0].id][0], 1);
        assert_eq!(s.weather.len(), 48);
        assert_eq!(s.grid.start(), data.grid.interval_start(96));
        assert!(data.slice_days(3..5).is_err());
    }
}
