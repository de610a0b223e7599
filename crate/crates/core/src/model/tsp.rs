//! Attention model for the travelling salesman.
//!
//! Coordinates are embedded linearly and refined by transformer layers
//! (multi-head self-attention and a feed-forward block, each with a residual
//! connection and layer normalisation). The decoder's query combines the
//! embeddings of the first and last visited nodes, or learned placeholders
//! before the first choice, attends over unvisited nodes and scores them
//! with a single-head compatibility clipped by `clip * tanh`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Policy;
use crate::autodiff::{Matrix, ParamId, ParameterSet, Tape, Var};
use crate::env::tsp::{TourState, TspInstance};
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TspConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub clip: f64,
}

impl Default for TspConfig {
    fn default() -> Self {
        Self {
            width: 128,
            layers: 3,
            heads: 8,
            ff_width: 512,
            clip: 10.0,
        }
    }
}

struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    fn new<R: Rng + ?Sized>(params: &mut ParameterSet, name: &str, fan_in: usize, out: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            w: params.add_uniform(format!("{name}.w"), fan_in, out, rng),
            b: bias.then(|| params.add_bias(format!("{name}.b"), fan_in, out, rng)),
        }
    }

    fn apply(&self, tape: &Tape, x: Var) -> Var {
        let y = tape.matmul(x, tape.param(self.w));
        match self.b {
            Some(b) => tape.add_row(y, tape.param(b)),
            None => y,
        }
    }
}

struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(params: &mut ParameterSet, name: &str, d: usize) -> Self {
        Self {
            gain: params.add(format!("{name}.gain"), Matrix::filled(1, d, 1.0)),
            bias: params.add(format!("{name}.bias"), Matrix::zeros(1, d)),
        }
    }

    fn apply(&self, tape: &Tape, x: Var) -> Var {
        tape.layer_norm(x, tape.param(self.gain), tape.param(self.bias))
    }
}

struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

pub struct TspModel {
    config: TspConfig,
    embed: Linear,
    layers: Vec<EncoderLayer>,
    query_first: ParamId,
    query_last: ParamId,
    placeholder_first: ParamId,
    placeholder_last: ParamId,
    glimpse_k: Linear,
    glimpse_v: Linear,
    glimpse_out: Linear,
    logit_k: Linear,
}

pub struct TspEncoding {
    n: usize,
    /// Query contributions of each node as first and as last node, with a
    /// final row for the placeholder.
    first: Var,
    last: Var,
    glimpse_keys: Vec<Var>,
    glimpse_values: Vec<Var>,
    logit_keys: Var,
}

impl TspModel {
    pub fn new<R: Rng + ?Sized>(config: TspConfig, params: &mut ParameterSet, rng: &mut R) -> Self {
        let d = config.width;
        assert!(config.heads > 0 && d % config.heads == 0, "width must be divisible by heads");
        let embed = Linear::new(params, "tsp.embed", 2, d, true, rng);
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("tsp.layer{l}");
                EncoderLayer {
                    q: Linear::new(params, &format!("{p}.q"), d, d, false, rng),
                    k: Linear::new(params, &format!("{p}.k"), d, d, false, rng),
                    v: Linear::new(params, &format!("{p}.v"), d, d, false, rng),
                    out: Linear::new(params, &format!("{p}.out"), d, d, false, rng),
                    norm1: Norm::new(params, &format!("{p}.norm1"), d),
                    ff1: Linear::new(params, &format!("{p}.ff1"), d, config.ff_width, true, rng),
                    ff2: Linear::new(params, &format!("{p}.ff2"), config.ff_width, d, true, rng),
                    norm2: Norm::new(params, &format!("{p}.norm2"), d),
                }
            })
            .collect();
        Self {
            config,
            embed,
            layers,
            // row blocks of one projection of [h_first || h_last]
            query_first: params.add_uniform_fan_in("tsp.decoder.query_first", d, d, 2 * d, rng),
            query_last: params.add_uniform_fan_in("tsp.decoder.query_last", d, d, 2 * d, rng),
            placeholder_first: params.add_uniform_fan_in("tsp.decoder.placeholder_first", 1, d, d, rng),
            placeholder_last: params.add_uniform_fan_in("tsp.decoder.placeholder_last", 1, d, d, rng),
            glimpse_k: Linear::new(params, "tsp.decoder.glimpse_k", d, d, false, rng),
            glimpse_v: Linear::new(params, "tsp.decoder.glimpse_v", d, d, false, rng),
            glimpse_out: Linear::new(params, "tsp.decoder.glimpse_out", d, d, false, rng),
            logit_k: Linear::new(params, "tsp.decoder.logit_k", d, d, false, rng),
        }
    }

    pub fn config(&self) -> &TspConfig {
        &self.config
    }

    fn head_dim(&self) -> usize {
        self.config.width / self.config.heads
    }

    fn self_attention(&self, tape: &Tape, layer: &EncoderLayer, h: Var, n: usize) -> Var {
        let dh = self.head_dim();
        let (q, k, v) = (layer.q.apply(tape, h), layer.k.apply(tape, h), layer.v.apply(tape, h));
        let all = vec![true; n * n];
        let heads: Vec<Var> = (0..self.config.heads)
            .map(|i| {
                let qi = tape.slice_cols(q, i * dh, dh);
                let ki = tape.slice_cols(k, i * dh, dh);
                let vi = tape.slice_cols(v, i * dh, dh);
                let scores = tape.scale(tape.matmul_nt(qi, ki), 1.0 / (dh as f64).sqrt());
                let att = tape.softmax(scores, &all).expect("unmasked rows are non-empty");
                tape.matmul(att, vi)
            })
            .collect();
        layer.out.apply(tape, tape.concat_cols(&heads))
    }

    /// Node embeddings after the encoder.
    pub fn node_embeddings(&self, tape: &Tape, inst: &TspInstance) -> Var {
        let n = inst.len();
        let coords = tape.constant(model_coordinates(inst));
        let mut h = self.embed.apply(tape, coords);
        for layer in &self.layers {
            let att = self.self_attention(tape, layer, h, n);
            h = layer.norm1.apply(tape, tape.add(h, att));
            let ff = layer.ff2.apply(tape, tape.relu(layer.ff1.apply(tape, h)));
            h = layer.norm2.apply(tape, tape.add(h, ff));
        }
        h
    }
}

/// Coordinates fed to the network: unchanged inside the unit square,
/// otherwise shifted and uniformly scaled into it.
pub fn model_coordinates(inst: &TspInstance) -> Matrix {
    let c = inst.coords();
    let inside = c.iter().flatten().all(|v| (0.0..=1.0).contains(v));
    let data: Vec<f64> = if inside {
        c.iter().flatten().copied().collect()
    } else {
        let min_x = c.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let min_y = c.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let span = c
            .iter()
            .map(|p| (p[0] - min_x).max(p[1] - min_y))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        c.iter().flat_map(|p| [(p[0] - min_x) / span, (p[1] - min_y) / span]).collect()
    };
    Matrix::from_vec(c.len(), 2, data)
}

impl Policy<TspInstance> for TspModel {
    type Encoding = TspEncoding;
    type Memory = ();

    fn encode(&self, tape: &Tape, inst: &TspInstance) -> Result<TspEncoding> {
        let n = inst.len();
        let h = self.node_embeddings(tape, inst);
        let dh = self.head_dim();
        let first = tape.matmul(
            tape.concat_rows(&[h, tape.param(self.placeholder_first)]),
            tape.param(self.query_first),
        );
        let last = tape.matmul(
            tape.concat_rows(&[h, tape.param(self.placeholder_last)]),
            tape.param(self.query_last),
        );
        let gk = self.glimpse_k.apply(tape, h);
        let gv = self.glimpse_v.apply(tape, h);
        Ok(TspEncoding {
            n,
            first,
            last,
            glimpse_keys: (0..self.config.heads).map(|i| tape.slice_cols(gk, i * dh, dh)).collect(),
            glimpse_values: (0..self.config.heads).map(|i| tape.slice_cols(gv, i * dh, dh)).collect(),
            logit_keys: self.logit_k.apply(tape, h),
        })
    }

    fn start(&self, _tape: &Tape, _enc: &TspEncoding, _rows: usize) {}

    fn log_probs(
        &self,
        tape: &Tape,
        _inst: &TspInstance,
        enc: &TspEncoding,
        _memory: &mut (),
        states: &[TourState],
        mask: &[bool],
    ) -> Result<Var> {
        if mask.len() != states.len() * enc.n {
            return domain("mask shape does not match states");
        }
        let dh = self.head_dim();
        let first: Vec<usize> = states.iter().map(|s| s.first().unwrap_or(enc.n)).collect();
        let last: Vec<usize> = states.iter().map(|s| s.last().unwrap_or(enc.n)).collect();
        let q = tape.add(tape.gather_rows(enc.first, &first), tape.gather_rows(enc.last, &last));
        let heads: Vec<Var> = (0..self.config.heads)
            .map(|i| -> Result<Var> {
                let qi = tape.slice_cols(q, i * dh, dh);
                let scores = tape.scale(tape.matmul_nt(qi, enc.glimpse_keys[i]), 1.0 / (dh as f64).sqrt());
                let att = tape.softmax(scores, mask)?;
                Ok(tape.matmul(att, enc.glimpse_values[i]))
            })
            .collect::<Result<_>>()?;
        let glimpse = self.glimpse_out.apply(tape, tape.concat_cols(&heads));
        let logits = tape.scale(
            tape.matmul_nt(glimpse, enc.logit_keys),
            1.0 / (self.config.width as f64).sqrt(),
        );
        let clipped = tape.scale(tape.tanh(logits), self.config.clip);
        tape.log_softmax(clipped, mask)
    }
}
