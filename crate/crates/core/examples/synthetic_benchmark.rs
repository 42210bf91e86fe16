//! Fits the two-stage pipeline on a synthetic network and compares it with the
//! baselines and the true-distribution oracle on the last two weeks.
//!
//! `cargo run --release --example synthetic_benchmark -- [stations] [days] [epochs] [windows]`

use std::time::Instant;

use tstar::eval::{build_report, AbnormalMask, Summary, DEFAULT_ALPHA};
use tstar::ingest::DEFAULT_PROXIMITY_M;
use tstar::synth::{generate, SynthSpec};
use tstar::timegrid::{DemandKind, SplitSpec};
use tstar::tstar::{score_baselines, score_forecasts, FittedPipeline, NetworkData, PipelineConfig};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn line(name: &str, s: &Summary) {
    println!("{name:<16} n={:<6} mae={:.4} rmse={:.4} mcrps={:.4} mis={:.4}", s.count, s.mae, s.rmse, s.mcrps, s.mis);
}

fn main() -> tstar::Result<()> {
    let (stations, days, epochs, windows) = (arg(1, 20), arg(2, 120), arg(3, 4), arg(4, 20_000));
    let started = Instant::now();
    let synth = generate(&SynthSpec::network(stations, days, 7))?;
    let data = NetworkData::from_synth(&synth, DEFAULT_PROXIMITY_M)?;
    let split = SplitSpec::new((days - 14) * 96, days * 96);
    let mut cfg = PipelineConfig::default();
    for t in [&mut cfg.stage1_train, &mut cfg.stage2_train] {
        t.epochs = epochs;
        t.batch_size = 64;
        t.learning_rate = 3e-3;
        t.max_windows_per_epoch = Some(windows);
    }
    let fitted = FittedPipeline::fit(&data, &split, &cfg, None)?;
    for (name, m) in [("stage1 pickup", &fitted.stage1_pickup), ("stage1 dropoff", &fitted.stage1_dropoff), ("stage2", &fitted.stage2)] {
        println!("{name}: {:?}", m.report.as_ref().map(|r| &r.epoch_loss));
    }
    println!("fit: {:.1?}", started.elapsed());
    let ids = data.station_ids();
    let archives = fitted.archives(&data, &ids, false)?;
    let fc = fitted.forecast(&data, &archives, &ids, split.test(), false)?;
    println!("forecast: {:.1?}", started.elapsed());
    let kind = DemandKind::Pickup;
    let rows = score_forecasts(&fc, &data, kind, DEFAULT_ALPHA)?;
    let keys: Vec<_> = rows.iter().map(|r| (r.station.clone(), r.index)).collect();
    let base = score_baselines(&data, kind, &split, &archives.pickup, &keys, DEFAULT_ALPHA)?;
    let oracle = synth.oracle_rows(kind, &keys, 100, 3, DEFAULT_ALPHA)?;
    let mask = AbnormalMask::none();
    line("tstar", &build_report(&rows, &mask).overall);
    line("hourly split", &build_report(&base.hourly_split, &mask).overall);
    line("historical avg", &build_report(&base.historical_average, &mask).overall);
    line("myopic", &build_report(&base.myopic, &mask).overall);
    line("oracle", &build_report(&oracle, &mask).overall);
    println!("total: {:.1?}", started.elapsed());
    Ok(())
}
