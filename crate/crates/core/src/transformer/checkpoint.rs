//! Versioned JSON checkpoints. Floats are written with round-trip precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{EmbedConfig, TrainConfig};
use super::model::Model;
use super::params::ParamLayout;
use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::timegrid::StationId;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub embed: EmbedConfig,
    pub train: TrainConfig,
    pub layout: ParamLayout,
    pub stations: Vec<StationId>,
    pub params: Vec<f64>,
    pub norm: Option<NormStats>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, train: &TrainConfig, norm: Option<NormStats>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            embed: model.embed_config().clone(),
            train: train.clone(),
            layout: model.layout().clone(),
            stations: model.stations().to_vec(),
            params: model.params.clone(),
            norm,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let model = Model::from_parts(
            self.embed.clone(),
            self.train.layers,
            self.train.hidden,
            self.stations.clone(),
            self.params.clone(),
        )?;
        if model.layout() != &self.layout {
            return Err(Error::Checkpoint("stored tensor layout does not match the configuration".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
        }
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.params.len() != ck.layout.total {
            return Err(Error::Checkpoint("parameter count does not match the layout".into()));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ChannelStat;
    use crate::transformer::model::tests::small_config;

    #[test]
    fn round_trip_is_bit_exact() {
        let (embed, train) = small_config();
        let mut m = Model::new(embed, &train, vec!["A".into(), "B".into()], 5).unwrap();
        m.params[0] = 0.1 + 0.2;
        m.params[1] = -1.0e-300;
        let norm = NormStats {
            global: vec![ChannelStat {
                name: "temperature".into(),
                mean: 12.345678901234567,
                std: 1.0 / 3.0,
                degenerate: false,
            }],
            local: vec![],
        };
        let ck = Checkpoint::from_model(&m, &train, Some(norm));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let restored = back.to_model().unwrap();
        assert!(restored.params.iter().zip(&m.params).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (embed, train) = small_config();
        let m = Model::new(embed, &train, vec!["A".into()], 5).unwrap();
        let mut ck = Checkpoint::from_model(&m, &train, None);
        ck.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
