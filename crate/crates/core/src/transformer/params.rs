//! Flat parameter storage with a named tensor layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::EmbedConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in ±sqrt(6 / (rows + cols)).
    GlorotUniform,
    /// N(0, 0.02²).
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl ParamLayout {
    fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> usize {
        let offset = self.total;
        self.tensors.push(TensorSpec {
            name: name.into(),
            rows,
            cols,
            offset,
            init,
        });
        self.total += rows * cols;
        offset
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensor containing flat index `i`, with the index inside it.
    pub fn locate(&self, i: usize) -> Option<(&TensorSpec, usize)> {
        self.tensors
            .iter()
            .find(|t| t.range().contains(&i))
            .map(|t| (t, i - t.offset))
    }

    pub fn initialize(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut out = vec![0.0; self.total];
        for t in &self.tensors {
            let slot = &mut out[t.range()];
            match t.init {
                Init::Zeros => {}
                Init::Ones => slot.fill(1.0),
                Init::GlorotUniform => {
                    let a = (6.0 / (t.rows + t.cols) as f64).sqrt();
                    slot.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
                }
                Init::Embedding => slot.iter_mut().for_each(|v| *v = normal.sample(&mut rng)),
            }
        }
        out
    }
}

/// Offsets of one encoder block's tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelIdx {
    pub station_embedding: usize,
    pub static_w: usize,
    pub global_w: usize,
    pub global_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub blocks: Vec<BlockIdx>,
    pub head_mu_w: usize,
    pub head_mu_b: usize,
    pub head_r_w: usize,
    pub head_r_b: usize,
}

pub fn build_layout(cfg: &EmbedConfig, n_stations: usize, layers: usize, hidden: usize) -> (ParamLayout, ModelIdx) {
    let mut l = ParamLayout::default();
    let e = cfg.model_dim;
    let i = cfg.station_embed_dim;
    let station_embedding = l.push("station_embedding", n_stations, i, Init::Embedding);
    let static_w = l.push("static_w", cfg.static_dim, i, Init::GlorotUniform);
    let global_w = l.push("global_w", cfg.global_in, cfg.global_embed_dim, Init::GlorotUniform);
    let global_b = l.push("global_b", 1, cfg.global_embed_dim, Init::Zeros);
    let proj_w = l.push("proj_w", cfg.concat_dim(), e, Init::GlorotUniform);
    let proj_b = l.push("proj_b", 1, e, Init::Zeros);
    let blocks = (0..layers)
        .map(|b| {
            let mut p = |name: &str, rows, cols, init| l.push(format!("block{b}.{name}"), rows, cols, init);
            BlockIdx {
                wq: p("wq", e, e, Init::GlorotUniform),
                bq: p("bq", 1, e, Init::Zeros),
                wk: p("wk", e, e, Init::GlorotUniform),
                bk: p("bk", 1, e, Init::Zeros),
                wv: p("wv", e, e, Init::GlorotUniform),
                bv: p("bv", 1, e, Init::Zeros),
                wo: p("wo", e, e, Init::GlorotUniform),
                bo: p("bo", 1, e, Init::Zeros),
                ln1_g: p("ln1_g", 1, e, Init::Ones),
                ln1_b: p("ln1_b", 1, e, Init::Zeros),
                ff1_w: p("ff1_w", e, hidden, Init::GlorotUniform),
                ff1_b: p("ff1_b", 1, hidden, Init::Zeros),
                ff2_w: p("ff2_w", hidden, e, Init::GlorotUniform),
                ff2_b: p("ff2_b", 1, e, Init::Zeros),
                ln2_g: p("ln2_g", 1, e, Init::Ones),
                ln2_b: p("ln2_b", 1, e, Init::Zeros),
            }
        })
        .collect();
    let head_mu_w = l.push("head_mu_w", e, 1, Init::GlorotUniform);
    let head_mu_b = l.push("head_mu_b", 1, 1, Init::Zeros);
    let head_r_w = l.push("head_r_w", e, 1, Init::GlorotUniform);
    let head_r_b = l.push("head_r_b", 1, 1, Init::Zeros);
    (
        l,
        ModelIdx {
            station_embedding,
            static_w,
            global_w,
            global_b,
            proj_w,
            proj_b,
            blocks,
            head_mu_w,
            head_mu_b,
            head_r_w,
            head_r_b,
        },
    )
}
