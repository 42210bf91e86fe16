//! Encoder-only time-series transformer with a Negative Binomial output head.
//!
//! Per look-back step `τ` the contextual embedding is
//!
//! ```text
//! u_τ = [h_station, W_g·g_τ + b_g, x_τ, y_τ / ν]      z_τ = u_τ·W_e + b_e      e_τ = z_τ + PE_τ
//! ```
//!
//! where `h_station = E[row] + W_s·statics` and `ν = 1 + mean(y over the window)`
//! (or 1 with mean scaling off). The sequence passes through post-norm encoder
//! blocks (multi-head self-attention and a GELU feed-forward layer, each
//! followed by a residual connection and layer norm). The last position feeds
//! the head `mu = ν·softplus(w_mu·h + b_mu) + 1e-6`, `r = softplus(w_r·h + b_r) + 1e-6`.
//!
//! Gradients are derived by hand; see [`super::gradcheck`] for their verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EmbedConfig, TrainConfig};
use super::linalg::{
    acc_a_bt, acc_at_b, acc_colsum, affine, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, sigmoid,
    softmax_row, softplus,
};
use super::params::{build_layout, BlockIdx, ModelIdx, ParamLayout};
use crate::error::{Error, Result};
use crate::nbdist::{nll_with_grad, NegBinParams};
use crate::timegrid::StationId;

/// Positivity floor added to both head outputs.
pub const HEAD_EPS: f64 = 1e-6;

/// Which station representation a window uses.
#[derive(Debug, Clone, PartialEq)]
pub enum StationRef {
    /// A row of the learned embedding table.
    Row(usize),
    /// The element-wise mean of all rows (zero-shot substitution for unseen stations).
    Mean,
}

/// One model input: `lookback` steps of channels plus the value to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub station: StationRef,
    pub statics: Vec<f64>,
    /// `lookback × global_in`, row-major.
    pub global: Vec<f64>,
    /// `lookback × local_dim`, row-major.
    pub local: Vec<f64>,
    /// Raw counts at each look-back step.
    pub y: Vec<f64>,
    pub target: Option<u32>,
}

/// Sinusoidal positional encoding: `PE[2j] = sin(pos / 10000^(2j/dim))`, `PE[2j+1] = cos(…)`.
pub fn positional_encoding(position: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|c| {
            let j2 = (c - c % 2) as f64;
            let angle = position as f64 / 10000f64.powf(j2 / dim as f64);
            if c % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Eval,
    Train { dropout: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Model {
    embed: EmbedConfig,
    layers: usize,
    hidden: usize,
    layout: ParamLayout,
    idx: ModelIdx,
    pub params: Vec<f64>,
    stations: Vec<StationId>,
    pe: Vec<f64>,
}

struct BlockCache {
    q_start: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads × nq × V`.
    attn: Vec<f64>,
    o: Vec<f64>,
    mask1: Option<Vec<f64>>,
    xhat1: Vec<f64>,
    inv1: Vec<f64>,
    x1: Vec<f64>,
    hpre: Vec<f64>,
    ha: Vec<f64>,
    mask2: Option<Vec<f64>>,
    xhat2: Vec<f64>,
    inv2: Vec<f64>,
    out: Vec<f64>,
}

struct ForwardCache {
    scale: f64,
    station_vec: Vec<f64>,
    u: Vec<f64>,
    blocks: Vec<BlockCache>,
    last: Vec<f64>,
    a_mu: f64,
    a_r: f64,
}

impl Model {
    pub fn new(embed: EmbedConfig, train: &TrainConfig, stations: Vec<StationId>, seed: u64) -> Result<Self> {
        let (layout, _) = build_layout(&embed, stations.len(), train.layers, train.hidden);
        let params = layout.initialize(seed);
        Self::from_parts(embed, train.layers, train.hidden, stations, params)
    }

    pub fn from_parts(
        embed: EmbedConfig,
        layers: usize,
        hidden: usize,
        stations: Vec<StationId>,
        params: Vec<f64>,
    ) -> Result<Self> {
        embed.validate()?;
        if stations.is_empty() {
            return Err(Error::config("a model needs at least one training station"));
        }
        let (layout, idx) = build_layout(&embed, stations.len(), layers, hidden);
        if params.len() != layout.total {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        let pe = (0..embed.lookback)
            .flat_map(|p| positional_encoding(p, embed.model_dim))
            .collect();
        Ok(Model {
            embed,
            layers,
            hidden,
            layout,
            idx,
            params,
            stations,
            pe,
        })
    }

    pub fn embed_config(&self) -> &EmbedConfig {
        &self.embed
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn stations(&self) -> &[StationId] {
        &self.stations
    }

    pub fn station_row(&self, id: &StationId) -> Option<usize> {
        self.stations.iter().position(|s| s == id)
    }

    /// Embedding row for `id`, or the mean embedding when `zero_shot` is set and `id` is unseen.
    pub fn station_ref(&self, id: &StationId, zero_shot: bool) -> Result<StationRef> {
        match self.station_row(id) {
            Some(r) => Ok(StationRef::Row(r)),
            None if zero_shot => Ok(StationRef::Mean),
            None => Err(Error::UnknownStation(id.to_string())),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.get(name)?.range();
        Some(&mut self.params[r])
    }

    fn p(&self, off: usize, len: usize) -> &[f64] {
        &self.params[off..off + len]
    }

    pub fn embedding_row(&self, row: usize) -> &[f64] {
        let i = self.embed.station_embed_dim;
        self.p(self.idx.station_embedding + row * i, i)
    }

    /// Element-wise mean of the station embedding table.
    pub fn mean_station_embedding(&self) -> Vec<f64> {
        let i = self.embed.station_embed_dim;
        let n = self.stations.len();
        let mut mean = vec![0.0; i];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(self.embedding_row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        mean
    }

    /// Latent station representation `E[row] + W_s·statics`.
    pub fn station_vector(&self, station: &StationRef, statics: &[f64]) -> Vec<f64> {
        let i = self.embed.station_embed_dim;
        let mut h = match station {
            StationRef::Row(r) => self.embedding_row(*r).to_vec(),
            StationRef::Mean => self.mean_station_embedding(),
        };
        let ws = self.p(self.idx.static_w, self.embed.static_dim * i);
        for (s, &x) in statics.iter().enumerate() {
            for c in 0..i {
                h[c] += x * ws[s * i + c];
            }
        }
        h
    }

    /// Projected embedding of one step before positional encoding.
    pub fn embed_step(&self, station_vec: &[f64], global: &[f64], local: &[f64], y: f64) -> Vec<f64> {
        let c = &self.embed;
        let mut hg = vec![0.0; c.global_embed_dim];
        affine(
            global,
            self.p(self.idx.global_w, c.global_in * c.global_embed_dim),
            self.p(self.idx.global_b, c.global_embed_dim),
            1,
            c.global_in,
            c.global_embed_dim,
            &mut hg,
        );
        let mut u = Vec::with_capacity(c.concat_dim());
        u.extend_from_slice(station_vec);
        u.extend_from_slice(&hg);
        u.extend_from_slice(local);
        u.push(y);
        let mut z = vec![0.0; c.model_dim];
        affine(
            &u,
            self.p(self.idx.proj_w, c.concat_dim() * c.model_dim),
            self.p(self.idx.proj_b, c.model_dim),
            1,
            c.concat_dim(),
            c.model_dim,
            &mut z,
        );
        z
    }

    pub fn window_scale(&self, y: &[f64]) -> f64 {
        if self.embed.mean_scaling && !y.is_empty() {
            1.0 + y.iter().sum::<f64>() / y.len() as f64
        } else {
            1.0
        }
    }

    fn check_window(&self, w: &Window) -> Result<()> {
        let c = &self.embed;
        let v = c.lookback;
        if w.y.len() != v || w.global.len() != v * c.global_in || w.local.len() != v * c.local_dim {
            return Err(Error::invalid(format!(
                "window shape mismatch: y {} global {} local {} for lookback {v}",
                w.y.len(),
                w.global.len(),
                w.local.len()
            )));
        }
        if w.statics.len() != c.static_dim {
            return Err(Error::invalid("static channel count mismatch"));
        }
        if let StationRef::Row(r) = w.station {
            if r >= self.stations.len() {
                return Err(Error::invalid(format!("station row {r} out of range")));
            }
        }
        Ok(())
    }

    /// Sequence `E = [z_τ + PE_τ]` of shape `lookback × model_dim`.
    pub fn embed_sequence(&self, w: &Window) -> Result<Vec<f64>> {
        self.check_window(w)?;
        let scale = self.window_scale(&w.y);
        let hs = self.station_vector(&w.station, &w.statics);
        let u = self.concat_inputs(w, &hs, scale);
        Ok(self.project(&u))
    }

    fn concat_inputs(&self, w: &Window, hs: &[f64], scale: f64) -> Vec<f64> {
        let c = &self.embed;
        let v = c.lookback;
        let mut hg = vec![0.0; v * c.global_embed_dim];
        affine(
            &w.global,
            self.p(self.idx.global_w, c.global_in * c.global_embed_dim),
            self.p(self.idx.global_b, c.global_embed_dim),
            v,
            c.global_in,
            c.global_embed_dim,
            &mut hg,
        );
        let d = c.concat_dim();
        let mut u = Vec::with_capacity(v * d);
        for t in 0..v {
            u.extend_from_slice(hs);
            u.extend_from_slice(&hg[t * c.global_embed_dim..(t + 1) * c.global_embed_dim]);
            u.extend_from_slice(&w.local[t * c.local_dim..(t + 1) * c.local_dim]);
            u.push(w.y[t] / scale);
        }
        u
    }

    fn project(&self, u: &[f64]) -> Vec<f64> {
        let c = &self.embed;
        let (v, d, e) = (c.lookback, c.concat_dim(), c.model_dim);
        let mut x = vec![0.0; v * e];
        affine(u, self.p(self.idx.proj_w, d * e), self.p(self.idx.proj_b, e), v, d, e, &mut x);
        for (xv, pv) in x.iter_mut().zip(&self.pe) {
            *xv += pv;
        }
        x
    }

    /// Full encoder pass over a `lookback × model_dim` sequence (inference mode).
    pub fn encoder_forward(&self, seq: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encoder_forward_with_attention(seq)?.0)
    }

    /// Encoder output plus every block's attention maps (`heads × V × V` each).
    pub fn encoder_forward_with_attention(&self, seq: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let c = &self.embed;
        if seq.len() != c.lookback * c.model_dim {
            return Err(Error::invalid("sequence length must equal the look-back window"));
        }
        let mut x = seq.to_vec();
        let mut maps = Vec::with_capacity(self.layers);
        for b in 0..self.layers {
            let cache = self.block_forward(&self.idx.blocks[b], &x, 0, None);
            maps.push(cache.attn.clone());
            x = cache.out;
        }
        check_finite(&x, "encoder output")?;
        Ok((x, maps))
    }

    /// Maps a hidden state to NB parameters for a window with scale `scale`.
    pub fn nb_head(&self, h: &[f64], scale: f64) -> Result<NegBinParams> {
        let (a_mu, a_r) = self.head_preactivations(h);
        head_params(a_mu, a_r, scale)
    }

    fn head_preactivations(&self, h: &[f64]) -> (f64, f64) {
        let e = self.embed.model_dim;
        let a_mu = dot(h, self.p(self.idx.head_mu_w, e)) + self.params[self.idx.head_mu_b];
        let a_r = dot(h, self.p(self.idx.head_r_w, e)) + self.params[self.idx.head_r_b];
        (a_mu, a_r)
    }

    /// Predictive distribution for the step after the window (inference mode).
    pub fn forward(&self, w: &Window) -> Result<NegBinParams> {
        let cache = self.forward_cached(w, Mode::Eval)?;
        head_params(cache.a_mu, cache.a_r, cache.scale)
    }

    fn forward_cached(&self, w: &Window, mode: Mode) -> Result<ForwardCache> {
        self.check_window(w)?;
        let c = &self.embed;
        let (v, e) = (c.lookback, c.model_dim);
        let scale = self.window_scale(&w.y);
        let station_vec = self.station_vector(&w.station, &w.statics);
        let u = self.concat_inputs(w, &station_vec, scale);
        let mut x = self.project(&u);
        let mut rng = match mode {
            Mode::Train { dropout, seed } if dropout > 0.0 => Some((dropout, ChaCha8Rng::seed_from_u64(seed))),
            _ => None,
        };
        let mut blocks = Vec::with_capacity(self.layers);
        for b in 0..self.layers {
            // only the last position reaches the head, so the final block computes one query row
            let q_start = if b + 1 == self.layers { v - 1 } else { 0 };
            let cache = self.block_forward(
                &self.idx.blocks[b],
                &x,
                q_start,
                rng.as_mut().map(|(p, r)| (*p, r)),
            );
            x = cache.out.clone();
            blocks.push(cache);
        }
        let last = if self.layers == 0 { x[(v - 1) * e..].to_vec() } else { x };
        check_finite(&last, "final hidden state")?;
        let (a_mu, a_r) = self.head_preactivations(&last);
        Ok(ForwardCache {
            scale,
            station_vec,
            u,
            blocks,
            last,
            a_mu,
            a_r,
        })
    }

    fn block_forward(&self, b: &BlockIdx, x: &[f64], q_start: usize, mut dropout: Option<(f64, &mut ChaCha8Rng)>) -> BlockCache {
        let c = &self.embed;
        let (v, e, f) = (c.lookback, c.model_dim, self.hidden);
        let nq = v - q_start;
        let heads = c.heads;
        let dh = c.head_dim();
        let xq = &x[q_start * e..];
        let mut q = vec![0.0; nq * e];
        let mut k = vec![0.0; v * e];
        let mut vv = vec![0.0; v * e];
        affine(xq, self.p(b.wq, e * e), self.p(b.bq, e), nq, e, e, &mut q);
        affine(x, self.p(b.wk, e * e), self.p(b.bk, e), v, e, e, &mut k);
        affine(x, self.p(b.wv, e * e), self.p(b.bv, e), v, e, e, &mut vv);
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut attn = vec![0.0; heads * nq * v];
        let mut o = vec![0.0; nq * e];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..nq {
                let row = &mut attn[(h * nq + i) * v..(h * nq + i + 1) * v];
                let qi = &q[i * e + cols.start..i * e + cols.end];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &k[j * e + cols.start..j * e + cols.end]) * inv_sqrt;
                }
                softmax_row(row);
                let oi = &mut o[i * e + cols.start..i * e + cols.end];
                for (j, &a) in row.iter().enumerate() {
                    for (ov, &vv_) in oi.iter_mut().zip(&vv[j * e + cols.start..j * e + cols.end]) {
                        *ov += a * vv_;
                    }
                }
            }
        }
        let mut att = vec![0.0; nq * e];
        affine(&o, self.p(b.wo, e * e), self.p(b.bo, e), nq, e, e, &mut att);
        let mask1 = dropout.as_mut().map(|(p, rng)| apply_dropout(&mut att, *p, rng));
        let r1: Vec<f64> = xq.iter().zip(&att).map(|(a, b)| a + b).collect();
        let mut x1 = vec![0.0; nq * e];
        let mut xhat1 = vec![0.0; nq * e];
        let mut inv1 = vec![0.0; nq];
        layer_norm(&r1, self.p(b.ln1_g, e), self.p(b.ln1_b, e), e, &mut x1, &mut xhat1, &mut inv1);
        let mut hpre = vec![0.0; nq * f];
        affine(&x1, self.p(b.ff1_w, e * f), self.p(b.ff1_b, f), nq, e, f, &mut hpre);
        let ha: Vec<f64> = hpre.iter().map(|&z| gelu(z)).collect();
        let mut ff = vec![0.0; nq * e];
        affine(&ha, self.p(b.ff2_w, f * e), self.p(b.ff2_b, e), nq, f, e, &mut ff);
        let mask2 = dropout.as_mut().map(|(p, rng)| apply_dropout(&mut ff, *p, rng));
        let r2: Vec<f64> = x1.iter().zip(&ff).map(|(a, b)| a + b).collect();
        let mut out = vec![0.0; nq * e];
        let mut xhat2 = vec![0.0; nq * e];
        let mut inv2 = vec![0.0; nq];
        layer_norm(&r2, self.p(b.ln2_g, e), self.p(b.ln2_b, e), e, &mut out, &mut xhat2, &mut inv2);
        BlockCache {
            q_start,
            x: x.to_vec(),
            q,
            k,
            v: vv,
            attn,
            o,
            mask1,
            xhat1,
            inv1,
            x1,
            hpre,
            ha,
            mask2,
            xhat2,
            inv2,
            out,
        }
    }

    /// Backward through one block; accumulates parameter gradients and returns `dL/dx`.
    fn block_backward(&self, b: &BlockIdx, c: &BlockCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let cfg = &self.embed;
        let (v, e, f) = (cfg.lookback, cfg.model_dim, self.hidden);
        let nq = v - c.q_start;
        let heads = cfg.heads;
        let dh = cfg.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        let mut dr2 = vec![0.0; nq * e];
        {
            let (dg, db) = split_pair(grad, b.ln2_g, b.ln2_b, e);
            layer_norm_backward(dout, &c.xhat2, &c.inv2, self.p(b.ln2_g, e), e, &mut dr2, dg, db);
        }
        let mut dx1 = dr2.clone();
        let mut dff = dr2;
        if let Some(m) = &c.mask2 {
            dff.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
        }
        acc_at_b(&c.ha, &dff, nq, f, e, &mut grad[b.ff2_w..b.ff2_w + f * e]);
        acc_colsum(&dff, e, &mut grad[b.ff2_b..b.ff2_b + e]);
        let mut dha = vec![0.0; nq * f];
        acc_a_bt(&dff, self.p(b.ff2_w, f * e), nq, f, e, &mut dha);
        let dhpre: Vec<f64> = dha.iter().zip(&c.hpre).map(|(d, &z)| d * gelu_grad(z)).collect();
        acc_at_b(&c.x1, &dhpre, nq, e, f, &mut grad[b.ff1_w..b.ff1_w + e * f]);
        acc_colsum(&dhpre, f, &mut grad[b.ff1_b..b.ff1_b + f]);
        acc_a_bt(&dhpre, self.p(b.ff1_w, e * f), nq, e, f, &mut dx1);

        let mut dr1 = vec![0.0; nq * e];
        {
            let (dg, db) = split_pair(grad, b.ln1_g, b.ln1_b, e);
            layer_norm_backward(&dx1, &c.xhat1, &c.inv1, self.p(b.ln1_g, e), e, &mut dr1, dg, db);
        }
        let mut dxq = dr1.clone();
        let mut datt = dr1;
        if let Some(m) = &c.mask1 {
            datt.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
        }
        acc_at_b(&c.o, &datt, nq, e, e, &mut grad[b.wo..b.wo + e * e]);
        acc_colsum(&datt, e, &mut grad[b.bo..b.bo + e]);
        let mut d_o = vec![0.0; nq * e];
        acc_a_bt(&datt, self.p(b.wo, e * e), nq, e, e, &mut d_o);

        let mut dq = vec![0.0; nq * e];
        let mut dk = vec![0.0; v * e];
        let mut dv = vec![0.0; v * e];
        let mut da = vec![0.0; v];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..nq {
                let a = &c.attn[(h * nq + i) * v..(h * nq + i + 1) * v];
                let doi = &d_o[i * e + cols.start..i * e + cols.end];
                for j in 0..v {
                    let vj = j * e + cols.start..j * e + cols.end;
                    da[j] = dot(doi, &c.v[vj.clone()]);
                    for (dvv, &g) in dv[vj].iter_mut().zip(doi) {
                        *dvv += a[j] * g;
                    }
                }
                let inner = dot(a, &da);
                let qi = i * e + cols.start..i * e + cols.end;
                for j in 0..v {
                    let ds = a[j] * (da[j] - inner) * inv_sqrt;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = j * e + cols.start..j * e + cols.end;
                    for (dqv, &kv) in dq[qi.clone()].iter_mut().zip(&c.k[kj.clone()]) {
                        *dqv += ds * kv;
                    }
                    for (dkv, &qv) in dk[kj].iter_mut().zip(&c.q[qi.clone()]) {
                        *dkv += ds * qv;
                    }
                }
            }
        }
        let xq = &c.x[c.q_start * e..];
        acc_at_b(xq, &dq, nq, e, e, &mut grad[b.wq..b.wq + e * e]);
        acc_colsum(&dq, e, &mut grad[b.bq..b.bq + e]);
        acc_a_bt(&dq, self.p(b.wq, e * e), nq, e, e, &mut dxq);
        acc_at_b(&c.x, &dk, v, e, e, &mut grad[b.wk..b.wk + e * e]);
        acc_colsum(&dk, e, &mut grad[b.bk..b.bk + e]);
        acc_at_b(&c.x, &dv, v, e, e, &mut grad[b.wv..b.wv + e * e]);
        acc_colsum(&dv, e, &mut grad[b.bv..b.bv + e]);
        let mut dx = vec![0.0; v * e];
        acc_a_bt(&dk, self.p(b.wk, e * e), v, e, e, &mut dx);
        acc_a_bt(&dv, self.p(b.wv, e * e), v, e, e, &mut dx);
        for (d, s) in dx[c.q_start * e..].iter_mut().zip(&dxq) {
            *d += s;
        }
        dx
    }

    /// Negative log-likelihood of the window's target; accumulates `∂NLL/∂θ` into `grad`.
    pub fn loss_and_grad(&self, w: &Window, mode: Mode, grad: &mut [f64]) -> Result<f64> {
        let target = w
            .target
            .ok_or_else(|| Error::invalid("training window has no target"))?;
        if grad.len() != self.params.len() {
            return Err(Error::invalid("gradient buffer does not match parameter count"));
        }
        let cache = self.forward_cached(w, mode)?;
        let cfg = &self.embed;
        let (v, e) = (cfg.lookback, cfg.model_dim);
        let sp_mu = softplus(cache.a_mu);
        let mu = cache.scale * sp_mu + HEAD_EPS;
        let r = softplus(cache.a_r) + HEAD_EPS;
        let (nll, dmu, dr) = nll_with_grad(mu, r, target as u64);
        if !nll.is_finite() {
            return Err(Error::Divergence(format!("non-finite NLL (mu = {mu}, r = {r}, k = {target})")));
        }
        let da_mu = dmu * cache.scale * sigmoid(cache.a_mu);
        let da_r = dr * sigmoid(cache.a_r);

        let idx = &self.idx;
        for (g, &h) in grad[idx.head_mu_w..idx.head_mu_w + e].iter_mut().zip(&cache.last) {
            *g += da_mu * h;
        }
        grad[idx.head_mu_b] += da_mu;
        for (g, &h) in grad[idx.head_r_w..idx.head_r_w + e].iter_mut().zip(&cache.last) {
            *g += da_r * h;
        }
        grad[idx.head_r_b] += da_r;
        let dlast: Vec<f64> = self
            .p(idx.head_mu_w, e)
            .iter()
            .zip(self.p(idx.head_r_w, e))
            .map(|(wm, wr)| da_mu * wm + da_r * wr)
            .collect();

        let mut dx = if self.layers == 0 {
            let mut d = vec![0.0; v * e];
            d[(v - 1) * e..].copy_from_slice(&dlast);
            d
        } else {
            dlast
        };
        for b in (0..self.layers).rev() {
            dx = self.block_backward(&idx.blocks[b], &cache.blocks[b], &dx, grad);
        }

        // projection
        let d = cfg.concat_dim();
        acc_at_b(&cache.u, &dx, v, d, e, &mut grad[idx.proj_w..idx.proj_w + d * e]);
        acc_colsum(&dx, e, &mut grad[idx.proj_b..idx.proj_b + e]);
        let mut du = vec![0.0; v * d];
        acc_a_bt(&dx, self.p(idx.proj_w, d * e), v, d, e, &mut du);

        // station representation and global dense layer
        let (i, s) = (cfg.station_embed_dim, cfg.global_embed_dim);
        let mut dhs = vec![0.0; i];
        let mut dhg = vec![0.0; v * s];
        for t in 0..v {
            let row = &du[t * d..(t + 1) * d];
            for (a, b) in dhs.iter_mut().zip(&row[..i]) {
                *a += b;
            }
            dhg[t * s..(t + 1) * s].copy_from_slice(&row[i..i + s]);
        }
        let g = cfg.global_in;
        acc_at_b(&w.global, &dhg, v, g, s, &mut grad[idx.global_w..idx.global_w + g * s]);
        acc_colsum(&dhg, s, &mut grad[idx.global_b..idx.global_b + s]);
        for (sidx, &x) in w.statics.iter().enumerate() {
            let off = idx.static_w + sidx * i;
            for c in 0..i {
                grad[off + c] += x * dhs[c];
            }
        }
        match w.station {
            StationRef::Row(r) => {
                let off = idx.station_embedding + r * i;
                for c in 0..i {
                    grad[off + c] += dhs[c];
                }
            }
            StationRef::Mean => {
                let n = self.stations.len();
                for r in 0..n {
                    let off = idx.station_embedding + r * i;
                    for c in 0..i {
                        grad[off + c] += dhs[c] / n as f64;
                    }
                }
            }
        }
        debug_assert_eq!(cache.station_vec.len(), i);
        Ok(nll)
    }

    /// Summed NLL over `windows` in inference mode, without gradients.
    pub fn batch_nll(&self, windows: &[Window]) -> Result<f64> {
        let mut total = 0.0;
        for w in windows {
            let target = w.target.ok_or_else(|| Error::invalid("window has no target"))?;
            total -= self.forward(w)?.log_pmf(target as u64);
        }
        Ok(total)
    }
}

fn head_params(a_mu: f64, a_r: f64, scale: f64) -> Result<NegBinParams> {
    let mu = scale * softplus(a_mu) + HEAD_EPS;
    let r = softplus(a_r) + HEAD_EPS;
    NegBinParams::new(mu, r).map_err(|e| Error::Divergence(format!("head produced invalid parameters: {e}")))
}

fn apply_dropout(x: &mut [f64], p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    mask
}

fn split_pair(grad: &mut [f64], a: usize, b: usize, len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + len <= b);
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + len], &mut hi[..len])
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence(format!("{what} has a non-finite value at index {pos}")));
    }
    Ok(())
}
