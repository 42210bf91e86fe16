//! Point and probabilistic scoring, report aggregation and backtesting folds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timegrid::{SplitSpec, StationId};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const ABNORMAL_Z: f64 = 3.0;

fn check_pairs(actuals: &[f64], points: &[f64]) -> Result<()> {
    if actuals.len() != points.len() {
        return Err(Error::invalid("actuals and forecasts differ in length"));
    }
    if actuals.is_empty() {
        return Err(Error::invalid("cannot score an empty set"));
    }
    Ok(())
}

pub fn mae(actuals: &[f64], points: &[f64]) -> Result<f64> {
    check_pairs(actuals, points)?;
    Ok(actuals.iter().zip(points).map(|(y, p)| (y - p).abs()).sum::<f64>() / actuals.len() as f64)
}

pub fn rmse(actuals: &[f64], points: &[f64]) -> Result<f64> {
    check_pairs(actuals, points)?;
    let mse = actuals.iter().zip(points).map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / actuals.len() as f64;
    Ok(mse.sqrt())
}

/// CRPS of the empirical sample distribution:
/// `(1/N) Σ|x_i − y| − (1/(2N²)) Σ_i Σ_j |x_i − x_j|`.
pub fn crps_empirical(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("CRPS needs at least one sample"));
    }
    let n = samples.len() as f64;
    let abs_err = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Σ_i Σ_j |x_i − x_j| = 2 Σ_i (2i − N + 1) x_(i) over the sorted sample
    let spread: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    Ok((abs_err - spread / (2.0 * n * n)).max(0.0))
}

/// Interval score of the central `(1 − α)` interval `[low, high]`.
pub fn interval_score(low: f64, high: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if low > high {
        return Err(Error::invalid(format!("interval [{low}, {high}] is reversed")));
    }
    let mut s = high - low;
    if y < low {
        s += 2.0 / alpha * (low - y);
    }
    if y > high {
        s += 2.0 / alpha * (y - high);
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub station: StationId,
    pub index: usize,
    pub actual: f64,
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub mae_term: f64,
    pub se_term: f64,
    pub crps: f64,
    pub is: f64,
}

impl ScoreRow {
    /// Scores a sample-based forecast with point `point` and interval `[low, high]`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        station: StationId,
        index: usize,
        actual: f64,
        point: f64,
        low: f64,
        high: f64,
        samples: &[f64],
        alpha: f64,
    ) -> Result<Self> {
        let row = ScoreRow {
            station,
            index,
            actual,
            point,
            low,
            high,
            mae_term: (actual - point).abs(),
            se_term: (actual - point).powi(2),
            crps: crps_empirical(samples, actual)?,
            is: interval_score(low, high, actual, alpha)?,
        };
        if ![row.mae_term, row.se_term, row.crps, row.is].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::invalid(format!("non-finite score for {} at {index}", row.station)));
        }
        Ok(row)
    }

    /// A deterministic forecast scored as a point mass.
    pub fn point_mass(station: StationId, index: usize, actual: f64, point: f64, alpha: f64) -> Result<Self> {
        Self::from_samples(station, index, actual, point, point, point, &[point], alpha)
    }
}

/// Train-split mean and standard deviation of one station's demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandStats {
    pub mean: f64,
    pub std: f64,
}

/// Flags intervals whose demand is at least `z` train-split standard deviations above the train mean.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AbnormalMask {
    pub z: f64,
    pub stats: BTreeMap<StationId, DemandStats>,
}

impl AbnormalMask {
    /// Mask that flags nothing.
    pub fn none() -> Self {
        AbnormalMask {
            z: f64::INFINITY,
            stats: BTreeMap::new(),
        }
    }

    pub fn fit<'a>(series: impl IntoIterator<Item = (&'a StationId, &'a [u32])>, split: &SplitSpec, z: f64) -> Result<Self> {
        let mut stats = BTreeMap::new();
        for (id, values) in series {
            split.validate(values.len())?;
            let train = &values[split.train()];
            let n = train.len() as f64;
            let mean = train.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = train.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            stats.insert(id.clone(), DemandStats { mean, std: var.sqrt() });
        }
        Ok(AbnormalMask { z, stats })
    }

    pub fn is_abnormal(&self, station: &StationId, actual: f64) -> bool {
        let Some(s) = self.stats.get(station) else { return false };
        if s.std > 0.0 {
            (actual - s.mean) / s.std >= self.z
        } else {
            // a constant training history makes any increase infinitely unusual
            self.z.is_finite() && actual > s.mean
        }
    }
}

/// Means of the score terms over a group of rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mcrps: f64,
    pub mis: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    n: usize,
    ae: f64,
    se: f64,
    crps: f64,
    is: f64,
}

impl Sums {
    fn add(&mut self, r: &ScoreRow) {
        self.n += 1;
        self.ae += r.mae_term;
        self.se += r.se_term;
        self.crps += r.crps;
        self.is += r.is;
    }

    fn summary(&self) -> Summary {
        if self.n == 0 {
            return Summary::default();
        }
        let n = self.n as f64;
        Summary {
            count: self.n,
            mae: self.ae / n,
            rmse: (self.se / n).sqrt(),
            mcrps: self.crps / n,
            mis: self.is / n,
        }
    }
}

impl Summary {
    pub fn of(rows: &[ScoreRow]) -> Self {
        let mut s = Sums::default();
        rows.iter().for_each(|r| s.add(r));
        s.summary()
    }

    /// Count-weighted combination of two summaries over disjoint row sets.
    pub fn combine(&self, other: &Summary) -> Summary {
        let n = self.count + other.count;
        if n == 0 {
            return Summary::default();
        }
        let (a, b) = (self.count as f64, other.count as f64);
        let w = |x: f64, y: f64| (a * x + b * y) / n as f64;
        Summary {
            count: n,
            mae: w(self.mae, other.mae),
            rmse: w(self.rmse.powi(2), other.rmse.powi(2)).sqrt(),
            mcrps: w(self.mcrps, other.mcrps),
            mis: w(self.mis, other.mis),
        }
    }
}

/// Population standard deviation of each metric over a set of group summaries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Spread {
    pub mae: f64,
    pub rmse: f64,
    pub mcrps: f64,
    pub mis: f64,
}

impl Spread {
    fn of<'a>(groups: impl Iterator<Item = &'a Summary> + Clone) -> Self {
        let std = |f: fn(&Summary) -> f64| {
            let vals: Vec<f64> = groups.clone().map(f).collect();
            if vals.is_empty() {
                return 0.0;
            }
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
        };
        Spread {
            mae: std(|s| s.mae),
            rmse: std(|s| s.rmse),
            mcrps: std(|s| s.mcrps),
            mis: std(|s| s.mis),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub overall: Summary,
    pub per_station: BTreeMap<StationId, Summary>,
    /// Each interval aggregated across stations.
    pub per_timestep: BTreeMap<usize, Summary>,
    pub normal: Summary,
    pub abnormal: Summary,
    /// Spread of the per-station summaries (unweighted over stations).
    pub across_stations: Spread,
    /// Spread of the per-timestep summaries.
    pub across_timesteps: Spread,
}

impl ScoreReport {
    /// Unweighted mean of the per-station summaries.
    pub fn station_mean(&self) -> Summary {
        let n = self.per_station.len();
        if n == 0 {
            return Summary::default();
        }
        let k = n as f64;
        let sum = |f: fn(&Summary) -> f64| self.per_station.values().map(f).sum::<f64>() / k;
        Summary {
            count: self.per_station.values().map(|s| s.count).sum(),
            mae: sum(|s| s.mae),
            rmse: sum(|s| s.rmse),
            mcrps: sum(|s| s.mcrps),
            mis: sum(|s| s.mis),
        }
    }
}

pub fn build_report(rows: &[ScoreRow], mask: &AbnormalMask) -> ScoreReport {
    let mut overall = Sums::default();
    let mut normal = Sums::default();
    let mut abnormal = Sums::default();
    let mut stations: BTreeMap<StationId, Sums> = BTreeMap::new();
    let mut steps: BTreeMap<usize, Sums> = BTreeMap::new();
    for r in rows {
        overall.add(r);
        if mask.is_abnormal(&r.station, r.actual) {
            abnormal.add(r);
        } else {
            normal.add(r);
        }
        stations.entry(r.station.clone()).or_default().add(r);
        steps.entry(r.index).or_default().add(r);
    }
    let per_station: BTreeMap<_, _> = stations.into_iter().map(|(k, v)| (k, v.summary())).collect();
    let per_timestep: BTreeMap<_, _> = steps.into_iter().map(|(k, v)| (k, v.summary())).collect();
    ScoreReport {
        overall: overall.summary(),
        across_stations: Spread::of(per_station.values()),
        across_timesteps: Spread::of(per_timestep.values()),
        per_station,
        per_timestep,
        normal: normal.summary(),
        abnormal: abnormal.summary(),
    }
}

// ---------------------------------------------------------------------------
// CSV output

pub const REPORT_HEADER: &str = "station_id,index,actual,point,low,high,abs_error,sq_error,crps,interval_score,abnormal";
pub const SUMMARY_HEADER: &str = "scope,key,count,mae,rmse,mcrps,mis";
pub const TEMPORAL_HEADER: &str = "index,count,mae,rmse,mcrps,mis";

pub fn write_report_csv(rows: &[ScoreRow], mask: &AbnormalMask, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.station,
            r.index,
            r.actual,
            r.point,
            r.low,
            r.high,
            r.mae_term,
            r.se_term,
            r.crps,
            r.is,
            u8::from(mask.is_abnormal(&r.station, r.actual))
        )?;
    }
    w.flush()?;
    Ok(())
}

fn summary_line(w: &mut impl Write, scope: &str, key: &str, s: &Summary) -> std::io::Result<()> {
    writeln!(w, "{scope},{key},{},{},{},{},{}", s.count, s.mae, s.rmse, s.mcrps, s.mis)
}

fn spread_line(w: &mut impl Write, key: &str, count: usize, s: &Spread) -> std::io::Result<()> {
    writeln!(w, "spread,{key},{count},{},{},{},{}", s.mae, s.rmse, s.mcrps, s.mis)
}

/// Overall, per-regime, per-station and spread rows.
pub fn write_summary_csv(report: &ScoreReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SUMMARY_HEADER}")?;
    summary_line(&mut w, "overall", "all", &report.overall)?;
    summary_line(&mut w, "overall", "station_mean", &report.station_mean())?;
    summary_line(&mut w, "regime", "normal", &report.normal)?;
    summary_line(&mut w, "regime", "abnormal", &report.abnormal)?;
    spread_line(&mut w, "across_stations", report.per_station.len(), &report.across_stations)?;
    spread_line(&mut w, "across_timesteps", report.per_timestep.len(), &report.across_timesteps)?;
    for (id, s) in &report.per_station {
        summary_line(&mut w, "station", id.as_str(), s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_temporal_csv(report: &ScoreReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TEMPORAL_HEADER}")?;
    for (t, s) in &report.per_timestep {
        writeln!(w, "{t},{},{},{},{},{}", s.count, s.mae, s.rmse, s.mcrps, s.mis)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Backtesting folds

/// One backtest fold in whole weeks (0-based, half-open).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train_weeks: Range<usize>,
    pub validation_weeks: Range<usize>,
}

impl Fold {
    /// 1-based label such as `w1-w4 / w5-w6`.
    pub fn label(&self) -> String {
        format!(
            "w{}-w{} / w{}-w{}",
            self.train_weeks.start + 1,
            self.train_weeks.end,
            self.validation_weeks.start + 1,
            self.validation_weeks.end
        )
    }

    pub fn train_days(&self) -> Range<usize> {
        self.train_weeks.start * 7..self.train_weeks.end * 7
    }

    pub fn validation_days(&self) -> Range<usize> {
        self.validation_weeks.start * 7..self.validation_weeks.end * 7
    }

    /// Training and validation must be non-empty and validation strictly later.
    pub fn validate(&self, total_weeks: usize) -> Result<()> {
        if self.train_weeks.is_empty() || self.validation_weeks.is_empty() {
            return Err(Error::config(format!("fold {} has an empty range", self.index + 1)));
        }
        if self.validation_weeks.start < self.train_weeks.end {
            return Err(Error::config(format!(
                "fold {} validates on weeks overlapping its training weeks ({})",
                self.index + 1,
                self.label()
            )));
        }
        if self.validation_weeks.end > total_weeks {
            return Err(Error::config(format!(
                "fold {} needs {} weeks of data, only {total_weeks} available",
                self.index + 1,
                self.validation_weeks.end
            )));
        }
        Ok(())
    }
}

/// Expanding windows: train on weeks `[0, initial + k·step)`, validate on the next `validation` weeks.
pub fn rolling_origin_folds(initial: usize, validation: usize, step: usize, folds: usize, total_weeks: usize) -> Result<Vec<Fold>> {
    if step == 0 && folds > 1 {
        return Err(Error::config("fold step must be positive"));
    }
    let out: Vec<Fold> = (0..folds)
        .map(|k| {
            let end = initial + k * step;
            Fold {
                index: k,
                train_weeks: 0..end,
                validation_weeks: end..end + validation,
            }
        })
        .collect();
    check_folds(&out, total_weeks)?;
    Ok(out)
}

/// Fixed-length windows advanced by `step` weeks for as many folds as the data allows
/// (at most `max_folds` when given).
pub fn sliding_window_folds(
    window: usize,
    validation: usize,
    step: usize,
    total_weeks: usize,
    max_folds: Option<usize>,
) -> Result<Vec<Fold>> {
    if window + validation > total_weeks {
        return Err(Error::config(format!(
            "a {window}-week window plus {validation} validation weeks exceeds the {total_weeks} weeks of data"
        )));
    }
    if step == 0 {
        return Err(Error::config("fold step must be positive"));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + window + validation <= total_weeks && max_folds.is_none_or(|m| out.len() < m) {
        out.push(Fold {
            index: out.len(),
            train_weeks: start..start + window,
            validation_weeks: start + window..start + window + validation,
        });
        start += step;
    }
    check_folds(&out, total_weeks)?;
    Ok(out)
}

fn check_folds(folds: &[Fold], total_weeks: usize) -> Result<()> {
    if folds.is_empty() {
        return Err(Error::config("no folds requested"));
    }
    folds.iter().try_for_each(|f| f.validate(total_weeks))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: Fold,
    pub report: ScoreReport,
}

/// Runs `evaluate` on every fold in order. The callback receives the fold and
/// must train only on `fold.train_days()`.
pub fn run_folds<F>(folds: &[Fold], total_weeks: usize, mut evaluate: F) -> Result<Vec<FoldReport>>
where
    F: FnMut(&Fold) -> Result<ScoreReport>,
{
    check_folds(folds, total_weeks)?;
    folds
        .iter()
        .map(|f| {
            Ok(FoldReport {
                fold: f.clone(),
                report: evaluate(f)?,
            })
        })
        .collect()
}

/// Expanding-window backtest (4 folds: 4 initial weeks, 2 validation weeks, step 2).
pub fn rolling_origin_cv<F>(total_weeks: usize, evaluate: F) -> Result<Vec<FoldReport>>
where
    F: FnMut(&Fold) -> Result<ScoreReport>,
{
    let folds = rolling_origin_folds(4, 2, 2, 4, total_weeks)?;
    run_folds(&folds, total_weeks, evaluate)
}

/// Sliding-window backtest (8 training weeks, 2 validation weeks, step 1, up to 4 folds).
pub fn sliding_window_cv<F>(total_weeks: usize, evaluate: F) -> Result<Vec<FoldReport>>
where
    F: FnMut(&Fold) -> Result<ScoreReport>,
{
    let folds = sliding_window_folds(8, 2, 1, total_weeks, Some(4))?;
    run_folds(&folds, total_weeks, evaluate)
}

/// `fold,train_weeks,validation_weeks,count,mae,rmse,mcrps,mis,mae_station_std`
pub fn write_folds_csv(reports: &[FoldReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "fold,train_weeks,validation_weeks,count,mae,rmse,mcrps,mis,mae_station_std")?;
    for fr in reports {
        let s = fr.report.overall;
        let f = &fr.fold;
        writeln!(
            w,
            "{},w{}-w{},w{}-w{},{},{},{},{},{},{}",
            f.index + 1,
            f.train_weeks.start + 1,
            f.train_weeks.end,
            f.validation_weeks.start + 1,
            f.validation_weeks.end,
            s.count,
            s.mae,
            s.rmse,
            s.mcrps,
            s.mis,
            fr.report.across_stations.mae
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// ∫ (F(x) − 1[x ≥ y])² dx of the empirical step CDF, integrated segment by segment.
    fn crps_by_integration(samples: &[f64], y: f64) -> f64 {
        let mut knots: Vec<f64> = samples.to_vec();
        knots.push(y);
        knots.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        let mut total = 0.0;
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let f = samples.iter().filter(|&&x| x <= mid).count() as f64 / n;
            let h = if mid >= y { 1.0 } else { 0.0 };
            total += (f - h).powi(2) * (b - a);
        }
        total
    }

    #[test]
    fn point_metrics() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mae(&[3.0], &[5.0]).unwrap(), 2.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[0.0, 2.0], &[0.0, 0.0]).unwrap(), 2f64.sqrt());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps_empirical(&[4.0; 5], 4.0).unwrap(), 0.0);
        assert_eq!(crps_empirical(&[0.0, 2.0], 1.0).unwrap(), 0.5);
        assert_eq!(crps_empirical(&[3.0, 3.0, 3.0], 5.0).unwrap(), 2.0);
        assert!(crps_empirical(&[], 1.0).is_err());
    }

    #[test]
    fn crps_matches_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(1..=20);
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            let y = rng.random_range(0..10) as f64;
            assert!((crps_empirical(&s, y).unwrap() - crps_by_integration(&s, y)).abs() < 1e-9);
        }
    }

    #[test]
    fn interval_examples() {
        assert_eq!(interval_score(0.0, 2.0, 1.0, 0.1).unwrap(), 2.0);
        assert_eq!(interval_score(0.0, 2.0, 3.0, 0.1).unwrap(), 22.0);
        assert_eq!(interval_score(1.0, 1.0, 1.0, 0.1).unwrap(), 0.0);
        assert!(interval_score(2.0, 1.0, 1.0, 0.1).is_err());
        assert!(interval_score(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn interval_score_prefers_true_quantiles() {
        use crate::nbdist::NegBinParams;
        let nb = NegBinParams::new(3.0, 2.0).unwrap();
        let draws = nb.sample(200_000, 4);
        let (lo, hi) = (nb.quantile(0.05) as f64, nb.quantile(0.95) as f64);
        let expected = |l: f64, h: f64| {
            draws.iter().map(|&y| interval_score(l, h, y as f64, 0.1).unwrap()).sum::<f64>() / draws.len() as f64
        };
        let best = expected(lo, hi);
        for (l, h) in [(lo, hi + 3.0), (lo + 1.0, hi), (0.0, 3.0), (1.0, 5.0), (lo, hi - 2.0)] {
            assert!(best <= expected(l, h), "[{l}, {h}]");
        }
    }

    fn row(station: &str, index: usize, actual: f64, point: f64, samples: &[f64]) -> ScoreRow {
        ScoreRow::from_samples(station.into(), index, actual, point, 0.0, 2.0, samples, 0.1).unwrap()
    }

    #[test]
    fn four_row_fixture() {
        let rows = vec![
            row("A", 0, 0.0, 1.0, &[0.0, 2.0]),
            row("A", 1, 3.0, 1.0, &[1.0]),
            row("B", 0, 1.0, 1.0, &[1.0, 1.0]),
            row("B", 1, 2.0, 0.0, &[0.0, 2.0]),
        ];
        // hand computation: abs errors 1,2,0,2; squared 1,4,0,4
        // crps 1 − 0.5 = 0.5; 2; 0; 1 − 0.5 = 0.5; interval scores 2, 2 + 20, 2, 2
        let mask = AbnormalMask {
            z: 3.0,
            stats: [("A".into(), DemandStats { mean: 0.5, std: 0.5 })].into_iter().collect(),
        };
        let r = build_report(&rows, &mask);
        assert_eq!(r.overall.count, 4);
        assert_eq!(r.overall.mae, 1.25);
        assert_eq!(r.overall.rmse, 2.25f64.sqrt());
        assert_eq!(r.overall.mcrps, 0.75);
        assert_eq!(r.overall.mis, 7.0);
        assert_eq!(r.per_station[&StationId::from("A")].mae, 1.5);
        assert_eq!(r.per_station[&StationId::from("B")].mcrps, 0.25);
        assert_eq!(r.per_timestep[&1].mae, 2.0);
        // A at actual 3: z = 5 ≥ 3
        assert_eq!(r.abnormal.count, 1);
        assert_eq!(r.abnormal.mae, 2.0);
        assert_eq!(r.normal.count, 3);
        assert_eq!(r.across_stations.mae, 0.25);
    }

    #[test]
    fn single_row_and_empty_mask() {
        let rows = vec![row("A", 7, 2.0, 1.0, &[1.0, 3.0])];
        let r = build_report(&rows, &AbnormalMask::none());
        assert_eq!(r.overall.mae, 1.0);
        assert_eq!(r.overall.mcrps, rows[0].crps);
        assert_eq!(r.overall.mis, rows[0].is);
        assert_eq!(r.abnormal.count, 0);
        assert_eq!(r.normal, r.overall);
    }

    #[test]
    fn abnormal_mask_uses_train_statistics() {
        let a: StationId = "A".into();
        let values: Vec<u32> = vec![0, 2, 0, 2, 100, 100];
        let split = SplitSpec::new(4, 6);
        let m = AbnormalMask::fit([(&a, values.as_slice())], &split, 3.0).unwrap();
        assert_eq!(m.stats[&a], DemandStats { mean: 1.0, std: 1.0 });
        assert!(m.is_abnormal(&a, 4.0));
        assert!(!m.is_abnormal(&a, 3.9));
        let mut changed = values.clone();
        changed[5] = 0;
        assert_eq!(AbnormalMask::fit([(&a, changed.as_slice())], &split, 3.0).unwrap(), m);
    }

    #[test]
    fn rolling_layout() {
        let folds = rolling_origin_folds(4, 2, 2, 4, 12).unwrap();
        let labels: Vec<String> = folds.iter().map(Fold::label).collect();
        assert_eq!(labels, ["w1-w4 / w5-w6", "w1-w6 / w7-w8", "w1-w8 / w9-w10", "w1-w10 / w11-w12"]);
        let one = rolling_origin_folds(4, 2, 2, 1, 6).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].train_days(), 0..28);
        assert_eq!(one[0].validation_days(), 28..42);
        assert!(rolling_origin_folds(4, 2, 2, 4, 11).is_err());
        let overlapping = Fold {
            index: 3,
            train_weeks: 0..10,
            validation_weeks: 9..11,
        };
        assert!(overlapping.validate(12).is_err());
    }

    #[test]
    fn sliding_layout() {
        let folds = sliding_window_folds(8, 2, 1, 13, None).unwrap();
        let labels: Vec<String> = folds.iter().map(Fold::label).collect();
        assert_eq!(labels, ["w1-w8 / w9-w10", "w2-w9 / w10-w11", "w3-w10 / w11-w12", "w4-w11 / w12-w13"]);
        assert!(folds.iter().all(|f| f.train_weeks.len() == 8));
        assert_eq!(sliding_window_folds(8, 2, 10, 10, None).unwrap().len(), 1);
        assert!(sliding_window_folds(8, 2, 1, 9, None).is_err());
    }

    #[test]
    fn folds_validate_after_training() {
        let mut seen = Vec::new();
        let reports = rolling_origin_cv(12, |f| {
            assert!(f.validation_days().start >= f.train_days().end);
            seen.push(f.index);
            Ok(build_report(&[row("A", f.index, 1.0, 1.0, &[1.0])], &AbnormalMask::none()))
        })
        .unwrap();
        assert_eq!(seen, [0, 1, 2, 3]);
        assert_eq!(reports.len(), 4);
    }

    proptest! {
        #[test]
        fn aggregation_is_linear(split_at in 1usize..9, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<ScoreRow> = (0..10)
                .map(|i| {
                    let s: Vec<f64> = (0..5).map(|_| rng.random_range(0..5) as f64).collect();
                    let y = rng.random_range(0..6) as f64;
                    row(if i % 2 == 0 { "A" } else { "B" }, i, y, s[0], &s)
                })
                .collect();
            let all = Summary::of(&rows);
            let comb = Summary::of(&rows[..split_at]).combine(&Summary::of(&rows[split_at..]));
            prop_assert_eq!(all.count, comb.count);
            prop_assert!((all.mae - comb.mae).abs() < 1e-12);
            prop_assert!((all.rmse - comb.rmse).abs() < 1e-12);
            prop_assert!((all.mcrps - comb.mcrps).abs() < 1e-12);
            prop_assert!((all.mis - comb.mis).abs() < 1e-12);
        }

        #[test]
        fn crps_point_mass_is_absolute_error(x in 0u32..50, y in 0u32..50, n in 1usize..10) {
            let s = vec![x as f64; n];
            prop_assert_eq!(crps_empirical(&s, y as f64).unwrap(), (x as f64 - y as f64).abs());
        }
    }
}
