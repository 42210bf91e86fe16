//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use tstar::timegrid::{DemandKind, SplitSpec, StationId, TimeGrid};
use tstar::transformer::TrainConfig;
use tstar::tstar::{ModelSize, PipelineConfig};

use crate::CliError;

/// Every key with its default and a one-line description, in print order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("trips", "trips.csv", "trip records"),
    ("stations", "stations.csv", "bike station locations and capacities"),
    ("metro", "metro.csv", "metro check-ins and check-outs per 15 minutes"),
    ("metro_stations", "metro_stations.csv", "metro station locations"),
    ("weather", "weather.csv", "hourly weather"),
    ("holidays", "holidays.txt", "one ISO date per line"),
    ("output_dir", "out", "where bundles, checkpoints and reports go"),
    ("start_date", "2023-03-06", "first day of the grid"),
    ("train_end_date", "2023-06-20", "first day after the training split"),
    ("test_end_date", "2023-07-04", "first day after the test split"),
    ("seed", "42", "master seed"),
    ("jobs", "0", "worker threads (0 = all cores)"),
    ("target", "pickup", "pickup or dropoff"),
    ("v1", "24", "stage-1 look-back in hours"),
    ("v2", "24", "stage-2 look-back in quarters"),
    ("horizon", "1", "forecast horizon (only 1 is supported)"),
    ("samples", "100", "draws per forecast distribution"),
    ("alpha", "0.1", "interval score level"),
    ("abnormal_z", "3", "z-score marking abnormal demand"),
    ("proximity_m", "300", "metro linking radius in meters"),
    ("weather_gap_hours", "3", "longest weather gap filled forward"),
    ("stage2_holiday", "false", "feed the holiday flag to stage 2"),
    ("signal_source", "in_sample", "stage-2 training signals: in_sample or blocked"),
    ("holdout", "", "comma-separated stations excluded from training"),
    ("station_embed_dim", "8", "station embedding width"),
    ("global_embed_dim", "8", "global feature embedding width"),
    ("model_dim", "16", "encoder width"),
    ("heads", "4", "attention heads"),
    ("layers", "1", "encoder blocks"),
    ("hidden", "32", "feed-forward width"),
    ("mean_scaling", "true", "scale windows by their mean demand"),
    ("epochs", "100", "training epochs"),
    ("batch_size", "256", "windows per batch"),
    ("learning_rate", "0.001", "Adam step size"),
    ("dropout", "0.1", "dropout rate"),
    ("grad_clip", "10", "global gradient norm clip (none to disable)"),
    ("max_windows_per_epoch", "none", "random windows visited per epoch (none = all)"),
    ("cv_rolling", "4,2,2,4", "initial weeks, validation weeks, step, folds"),
    ("cv_sliding", "8,2,1,4", "window weeks, validation weeks, step, max folds"),
];

const PATH_KEYS: &[&str] = &["trips", "stations", "metro", "metro_stations", "weather", "holidays"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn key_of(key: &str) -> Option<&'static str> {
    KEYS.iter().map(|(k, _, _)| *k).find(|k| *k == key)
}

impl RunConfig {
    /// Defaults overridden by `path`; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("config line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::config(format!("config line {}: {}", n + 1, e.message)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let k = key_of(key).ok_or_else(|| CliError::config(format!("unknown key `{key}`")))?;
        self.values.insert(k, value.to_string());
        Ok(())
    }

    /// `key=value` override from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    /// All effective values as a loadable config file.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, _, help) in KEYS {
            out.push_str(&format!("# {help}\n{k} = {}\n", self.get(k)));
        }
        out
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e| CliError::config(format!("`{key} = {}`: {e}", self.get(key))))
    }

    fn optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            "" | "none" => Ok(None),
            _ => self.parse_value(key).map(Some),
        }
    }

    fn list(&self, key: &str, len: usize) -> Result<Vec<usize>, CliError> {
        let v: Vec<usize> = self
            .get(key)
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::config(format!("`{key}`: {e}")))?;
        if v.len() != len {
            return Err(CliError::config(format!("`{key}` needs {len} comma-separated integers")));
        }
        Ok(v)
    }

    pub fn path(&self, key: &str) -> PathBuf {
        let p = PathBuf::from(self.get(key));
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.path("output_dir")
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir().join(name)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse_value("seed")
    }

    pub fn jobs(&self) -> Result<usize, CliError> {
        self.parse_value("jobs")
    }

    pub fn target(&self) -> Result<DemandKind, CliError> {
        self.parse_value("target")
    }

    pub fn alpha(&self) -> Result<f64, CliError> {
        let a: f64 = self.parse_value("alpha")?;
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::config("alpha must lie in (0, 1)"));
        }
        Ok(a)
    }

    pub fn abnormal_z(&self) -> Result<f64, CliError> {
        self.parse_value("abnormal_z")
    }

    pub fn proximity_m(&self) -> Result<f64, CliError> {
        self.parse_value("proximity_m")
    }

    pub fn weather_gap_hours(&self) -> Result<i64, CliError> {
        self.parse_value("weather_gap_hours")
    }

    pub fn holdout(&self) -> Vec<StationId> {
        self.get("holdout")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(StationId::from)
            .collect()
    }

    pub fn cv_rolling(&self) -> Result<[usize; 4], CliError> {
        let v = self.list("cv_rolling", 4)?;
        Ok([v[0], v[1], v[2], v[3]])
    }

    pub fn cv_sliding(&self) -> Result<[usize; 4], CliError> {
        let v = self.list("cv_sliding", 4)?;
        Ok([v[0], v[1], v[2], v[3]])
    }

    fn date(&self, key: &str) -> Result<NaiveDate, CliError> {
        NaiveDate::parse_from_str(self.get(key), "%Y-%m-%d")
            .map_err(|e| CliError::config(format!("`{key} = {}`: {e}", self.get(key))))
    }

    /// The quarter-hour grid from `start_date` to `test_end_date` and its train/test split.
    pub fn grid_and_split(&self) -> Result<(TimeGrid, SplitSpec), CliError> {
        let (start, train_end, test_end) = (self.date("start_date")?, self.date("train_end_date")?, self.date("test_end_date")?);
        if !(start < train_end && train_end < test_end) {
            return Err(CliError::config("dates must satisfy start_date < train_end_date < test_end_date"));
        }
        let days = |a: NaiveDate, b: NaiveDate| (b - a).num_days() as usize;
        let grid = TimeGrid::daily(start, 15, days(start, test_end))?;
        let split = SplitSpec::new(days(start, train_end) * 96, grid.len());
        Ok((grid, split))
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        let size = ModelSize {
            station_embed_dim: self.parse_value("station_embed_dim")?,
            global_embed_dim: self.parse_value("global_embed_dim")?,
            model_dim: self.parse_value("model_dim")?,
            heads: self.parse_value("heads")?,
            mean_scaling: self.parse_value("mean_scaling")?,
        };
        let train = TrainConfig {
            epochs: self.parse_value("epochs")?,
            batch_size: self.parse_value("batch_size")?,
            learning_rate: self.parse_value("learning_rate")?,
            dropout: self.parse_value("dropout")?,
            layers: self.parse_value("layers")?,
            hidden: self.parse_value("hidden")?,
            seed: self.seed()?,
            max_windows_per_epoch: self.optional("max_windows_per_epoch")?,
            grad_clip: self.optional("grad_clip")?,
            parallel: true,
            frozen: Vec::new(),
        };
        let horizon: usize = self.parse_value("horizon")?;
        let cfg = PipelineConfig {
            target: self.target()?,
            v1: self.parse_value("v1")?,
            h1: horizon,
            v2: self.parse_value("v2")?,
            h2: horizon,
            samples: self.parse_value("samples")?,
            seed: self.seed()?,
            stage1_size: size.clone(),
            stage2_size: size,
            stage1_train: train.clone(),
            stage2_train: train,
            stage2_holiday: self.parse_value("stage2_holiday")?,
            signal_source: self.parse_value("signal_source")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses every typed value so mistakes surface before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline()?;
        self.grid_and_split()?;
        self.jobs()?;
        self.alpha()?;
        self.abnormal_z()?;
        self.proximity_m()?;
        self.weather_gap_hours()?;
        self.cv_rolling()?;
        self.cv_sliding()?;
        Ok(())
    }

    /// Every input file must exist.
    pub fn validate_inputs(&self) -> Result<(), CliError> {
        for k in PATH_KEYS {
            let p = self.path(k);
            if !p.is_file() {
                return Err(CliError::data(format!("{}: input file `{k}` not found", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_render() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back.values, cfg.values);
        let p = cfg.pipeline().unwrap();
        assert_eq!((p.v1, p.v2, p.h1, p.samples), (24, 24, 1, 100));
        assert_eq!((p.stage1_train.epochs, p.stage1_train.batch_size), (100, 256));
        assert_eq!(cfg.alpha().unwrap(), 0.1);
        assert_eq!(cfg.proximity_m().unwrap(), 300.0);
    }

    #[test]
    fn parse_and_override() {
        let mut cfg = RunConfig::parse("# comment\nseed = 7\n\nepochs=3 # trailing\n").unwrap();
        assert_eq!(cfg.seed().unwrap(), 7);
        assert_eq!(cfg.pipeline().unwrap().stage2_train.epochs, 3);
        cfg.set_pair("max_windows_per_epoch=500").unwrap();
        assert_eq!(cfg.pipeline().unwrap().stage1_train.max_windows_per_epoch, Some(500));
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("seed 1").is_err());
        cfg.set("seed", "x").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn grid_follows_dates() {
        let cfg = RunConfig::parse("start_date = 2023-03-06\ntrain_end_date = 2023-03-13\ntest_end_date = 2023-03-15").unwrap();
        let (grid, split) = cfg.grid_and_split().unwrap();
        assert_eq!(grid.len(), 9 * 96);
        assert_eq!(split.train_end, 7 * 96);
        let bad = RunConfig::parse("train_end_date = 2023-03-01").unwrap();
        assert!(bad.grid_and_split().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "trips = data/t.csv\noutput_dir = /abs/out\n").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.path("trips"), dir.path().join("data/t.csv"));
        assert_eq!(cfg.output_dir(), PathBuf::from("/abs/out"));
        let err = cfg.validate_inputs().unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("t.csv"));
    }
}
