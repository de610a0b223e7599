//! Graph-attention encoder with a recurrent context-attention decoder for
//! the scheduling problems.
//!
//! The encoder runs one graph-attention branch per edge type and
//! concatenates their rectified outputs; two such layers are stacked with the
//! raw features concatenated back in before and after the second. The
//! decoder turns the embedding of the previously chosen node into a query
//! through an LSTM cell and layer normalisation; each candidate's key mixes
//! its embedding with rectified context features. Time-valued features are
//! divided by the instance's largest processing time before use.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{lstm_cell, zeros, Policy};
use crate::autodiff::{Adjacency, Matrix, ParamId, ParameterSet, Tape, Var};
use crate::env::fjsp::{self, FjspInstance, FjspState};
use crate::env::jsp::{self, JspInstance, ScheduleState};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MglConfig {
    /// Output width of each graph-attention branch, split across heads.
    pub gat_width: usize,
    pub heads: usize,
    /// Width of the LSTM state, queries and keys.
    pub model_width: usize,
    /// Width of the rectified context projection.
    pub context_width: usize,
}

impl Default for MglConfig {
    fn default() -> Self {
        Self {
            gat_width: 32,
            heads: 2,
            model_width: 64,
            context_width: 32,
        }
    }
}

const ATTENTION_SLOPE: f64 = 0.2;

/// Column indices of time-valued static features.
const STATE_TIME_COLUMNS: [usize; 13] = [0, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14];

struct GatBranch {
    w: ParamId,
    a_src: ParamId,
    a_dst: ParamId,
}

struct GraphEncoder {
    first: Vec<GatBranch>,
    second: Vec<GatBranch>,
    heads: usize,
}

impl GraphEncoder {
    fn new<R: Rng + ?Sized>(params: &mut ParameterSet, prefix: &str, in_dim: usize, graphs: usize, cfg: &MglConfig, rng: &mut R) -> Self {
        assert!(cfg.heads > 0 && cfg.gat_width % cfg.heads == 0, "gat_width must be divisible by heads");
        let head_dim = cfg.gat_width / cfg.heads;
        let layer = |name: &str, fan_in: usize, params: &mut ParameterSet, rng: &mut R| -> Vec<GatBranch> {
            (0..graphs)
                .map(|g| GatBranch {
                    w: params.add_uniform(format!("{prefix}.{name}.{g}.w"), fan_in, cfg.gat_width, rng),
                    a_src: params.add_bias(format!("{prefix}.{name}.{g}.a_src"), head_dim, cfg.gat_width, rng),
                    a_dst: params.add_bias(format!("{prefix}.{name}.{g}.a_dst"), head_dim, cfg.gat_width, rng),
                })
                .collect()
        };
        let first = layer("first", in_dim, params, rng);
        let second = layer("second", in_dim + graphs * cfg.gat_width, params, rng);
        Self {
            first,
            second,
            heads: cfg.heads,
        }
    }

    fn layer(&self, tape: &Tape, x: Var, branches: &[GatBranch], graphs: &[Rc<Adjacency>]) -> Var {
        let outs: Vec<Var> = branches
            .iter()
            .zip(graphs)
            .map(|(b, adj)| {
                let h = tape.matmul(x, tape.param(b.w));
                let att = tape.gat(h, tape.param(b.a_src), tape.param(b.a_dst), adj, self.heads, ATTENTION_SLOPE);
                tape.relu(att)
            })
            .collect();
        tape.concat_cols(&outs)
    }

    fn encode(&self, tape: &Tape, features: Var, graphs: &[Rc<Adjacency>]) -> Var {
        let first = self.layer(tape, features, &self.first, graphs);
        let mid = tape.concat_cols(&[features, first]);
        let second = self.layer(tape, mid, &self.second, graphs);
        tape.concat_cols(&[features, second])
    }
}

struct RecurrentQuery {
    w1: ParamId,
    wx: ParamId,
    wh: ParamId,
    bias: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
    w2: ParamId,
}

impl RecurrentQuery {
    fn new<R: Rng + ?Sized>(params: &mut ParameterSet, prefix: &str, emb: usize, d: usize, rng: &mut R) -> Self {
        Self {
            w1: params.add_uniform(format!("{prefix}.w1"), emb, d, rng),
            wx: params.add_uniform(format!("{prefix}.lstm.wx"), d, 4 * d, rng),
            wh: params.add_uniform(format!("{prefix}.lstm.wh"), d, 4 * d, rng),
            bias: params.add_bias(format!("{prefix}.lstm.b"), d, 4 * d, rng),
            ln_gain: params.add(format!("{prefix}.ln.gain"), Matrix::filled(1, d, 1.0)),
            ln_bias: params.add(format!("{prefix}.ln.bias"), Matrix::zeros(1, d)),
            w2: params.add_uniform(format!("{prefix}.w2"), d, d, rng),
        }
    }

    /// Advances the memory with `prev` (rows of previous-choice embeddings)
    /// and returns the queries.
    fn step(&self, tape: &Tape, prev: Var, memory: &mut Memory) -> Var {
        let x = tape.relu(tape.matmul(prev, tape.param(self.w1)));
        let (h, c) = lstm_cell(tape, x, memory.h, memory.c, tape.param(self.wx), tape.param(self.wh), tape.param(self.bias));
        memory.h = h;
        memory.c = c;
        let normed = tape.layer_norm(h, tape.param(self.ln_gain), tape.param(self.ln_bias));
        tape.matmul(normed, tape.param(self.w2))
    }
}

pub struct Memory {
    h: Var,
    c: Var,
}

fn start_memory(tape: &Tape, rows: usize, d: usize) -> Memory {
    Memory {
        h: zeros(tape, rows, d),
        c: zeros(tape, rows, d),
    }
}

fn scaled_features<const W: usize>(rows: &[[f64; W]], time_columns: &[usize], scale: f64) -> Matrix {
    let mut m = Matrix::from_vec(rows.len(), W, rows.iter().flatten().copied().collect());
    for r in 0..rows.len() {
        for &c in time_columns {
            let v = m.get(r, c) / scale;
            m.set(r, c, v);
        }
    }
    m
}

/// Model for job-shop scheduling; actions are jobs.
pub struct JspMgl {
    config: MglConfig,
    encoder: GraphEncoder,
    query: RecurrentQuery,
    w3: ParamId,
    w4_context: ParamId,
    w4_embedding: ParamId,
}

pub struct JspEncoding {
    /// Embeddings with an extra zero row standing for "nothing chosen yet".
    embeddings: Var,
    /// Embedding part of every operation's key.
    keys: Var,
    scale: f64,
}

const JSP_CONTEXT_TIME_COLUMNS: [usize; 9] = [0, 2, 3, 4, 5, 7, 8, 9, 10];

impl JspMgl {
    pub fn new<R: Rng + ?Sized>(config: MglConfig, params: &mut ParameterSet, rng: &mut R) -> Self {
        let emb = jsp::STATE_FEATURES + 2 * config.gat_width;
        let d = config.model_width;
        let encoder = GraphEncoder::new(params, "jsp.encoder", jsp::STATE_FEATURES, 2, &config, rng);
        let query = RecurrentQuery::new(params, "jsp.query", emb, d, rng);
        let w3 = params.add_uniform("jsp.key.w3", jsp::CONTEXT_FEATURES, config.context_width, rng);
        // The key projection acts on [context, embedding]; its two row
        // blocks share the fan-in of the full concatenation.
        let fan_in = config.context_width + emb;
        let w4_context = params.add_uniform_fan_in("jsp.key.w4_context", config.context_width, d, fan_in, rng);
        let w4_embedding = params.add_uniform_fan_in("jsp.key.w4_embedding", emb, d, fan_in, rng);
        Self {
            config,
            encoder,
            query,
            w3,
            w4_context,
            w4_embedding,
        }
    }

    pub fn config(&self) -> &MglConfig {
        &self.config
    }

    /// Node embeddings of an instance, for inspection.
    pub fn embeddings(&self, params: &ParameterSet, inst: &JspInstance) -> Matrix {
        let tape = Tape::frozen(params);
        let enc = self.encode(&tape, inst).expect("encoding a valid instance");
        let e = tape.value(enc.embeddings);
        let (rows, cols) = e.shape();
        Matrix::from_vec(rows - 1, cols, e.data()[..(rows - 1) * cols].to_vec())
    }
}

impl Policy<JspInstance> for JspMgl {
    type Encoding = JspEncoding;
    type Memory = Memory;

    fn encode(&self, tape: &Tape, inst: &JspInstance) -> Result<JspEncoding> {
        let scale = inst.max_time() as f64;
        let n = inst.op_count();
        let graph = inst.graph();
        let graphs = [
            Rc::new(Adjacency::new(n, &graph.conjunctive, false)),
            Rc::new(Adjacency::new(n, &graph.disjunctive, true)),
        ];
        let features = tape.constant(scaled_features(&inst.state_features(), &STATE_TIME_COLUMNS, scale));
        let e = self.encoder.encode(tape, features, &graphs);
        let keys = tape.matmul(e, tape.param(self.w4_embedding));
        let width = tape.shape(e).1;
        let embeddings = tape.concat_rows(&[e, zeros(tape, 1, width)]);
        Ok(JspEncoding { embeddings, keys, scale })
    }

    fn start(&self, tape: &Tape, _enc: &JspEncoding, rows: usize) -> Memory {
        start_memory(tape, rows, self.config.model_width)
    }

    fn log_probs(
        &self,
        tape: &Tape,
        inst: &JspInstance,
        enc: &JspEncoding,
        memory: &mut Memory,
        states: &[ScheduleState],
        mask: &[bool],
    ) -> Result<Var> {
        let n_ops = inst.op_count();
        let n_jobs = inst.n_jobs();
        let prev: Vec<usize> = states.iter().map(|s| s.last_op.unwrap_or(n_ops)).collect();
        let q = self.query.step(tape, tape.gather_rows(enc.embeddings, &prev), memory);

        let mut contexts = Vec::with_capacity(states.len() * n_jobs);
        let mut pending = Vec::with_capacity(states.len() * n_jobs);
        for s in states {
            contexts.extend(s.context_features(inst));
            pending.extend((0..n_jobs).map(|j| s.pending(inst, j).unwrap_or(0)));
        }
        let ctx = tape.constant(scaled_features(&contexts, &JSP_CONTEXT_TIME_COLUMNS, enc.scale));
        let ctx = tape.relu(tape.matmul(ctx, tape.param(self.w3)));
        let q_ctx = tape.matmul_nt(q, tape.param(self.w4_context));
        let ctx_scores = tape.row_block_dot(q_ctx, ctx, n_jobs);
        let emb_scores = tape.gather_per_row(tape.matmul_nt(q, enc.keys), &pending);
        tape.log_softmax(tape.add(ctx_scores, emb_scores), mask)
    }
}

/// Model for flexible job-shop scheduling; actions are operation-machine nodes.
pub struct FjspMgl {
    config: MglConfig,
    encoder: GraphEncoder,
    query: RecurrentQuery,
    w_job: ParamId,
    w_machine: ParamId,
    w5_job: ParamId,
    w5_machine: ParamId,
    w5_embedding: ParamId,
}

pub struct FjspEncoding {
    embeddings: Var,
    keys: Var,
    scale: f64,
    node_job: Vec<usize>,
    node_machine: Vec<usize>,
}

const COMPLETION_TIME_COLUMNS: [usize; 4] = [1, 2, 3, 4];

impl FjspMgl {
    pub fn new<R: Rng + ?Sized>(config: MglConfig, params: &mut ParameterSet, rng: &mut R) -> Self {
        let emb = fjsp::STATE_FEATURES + 3 * config.gat_width;
        let d = config.model_width;
        let c = config.context_width;
        let encoder = GraphEncoder::new(params, "fjsp.encoder", fjsp::STATE_FEATURES, 3, &config, rng);
        let query = RecurrentQuery::new(params, "fjsp.query", emb, d, rng);
        let w_job = params.add_uniform("fjsp.key.w3", fjsp::JOB_CONTEXT_FEATURES, c, rng);
        let w_machine = params.add_uniform("fjsp.key.w4", fjsp::MACHINE_CONTEXT_FEATURES, c, rng);
        let fan_in = 2 * c + emb;
        let w5_job = params.add_uniform_fan_in("fjsp.key.w5_job", c, d, fan_in, rng);
        let w5_machine = params.add_uniform_fan_in("fjsp.key.w5_machine", c, d, fan_in, rng);
        let w5_embedding = params.add_uniform_fan_in("fjsp.key.w5_embedding", emb, d, fan_in, rng);
        Self {
            config,
            encoder,
            query,
            w_job,
            w_machine,
            w5_job,
            w5_machine,
            w5_embedding,
        }
    }

    pub fn config(&self) -> &MglConfig {
        &self.config
    }
}

impl Policy<FjspInstance> for FjspMgl {
    type Encoding = FjspEncoding;
    type Memory = Memory;

    fn encode(&self, tape: &Tape, inst: &FjspInstance) -> Result<FjspEncoding> {
        let scale = inst.max_time() as f64;
        let n = inst.node_count();
        let graph = inst.graph();
        let graphs = [
            Rc::new(Adjacency::new(n, &graph.precedence, false)),
            Rc::new(Adjacency::new(n, &graph.same_machine, true)),
            Rc::new(Adjacency::new(n, &graph.same_op, true)),
        ];
        let features = tape.constant(scaled_features(&inst.state_features(), &STATE_TIME_COLUMNS, scale));
        let e = self.encoder.encode(tape, features, &graphs);
        let keys = tape.matmul(e, tape.param(self.w5_embedding));
        let width = tape.shape(e).1;
        let embeddings = tape.concat_rows(&[e, zeros(tape, 1, width)]);
        Ok(FjspEncoding {
            embeddings,
            keys,
            scale,
            node_job: inst.nodes().iter().map(|nd| inst.job_of(nd.op)).collect(),
            node_machine: inst.nodes().iter().map(|nd| nd.machine).collect(),
        })
    }

    fn start(&self, tape: &Tape, _enc: &FjspEncoding, rows: usize) -> Memory {
        start_memory(tape, rows, self.config.model_width)
    }

    fn log_probs(
        &self,
        tape: &Tape,
        inst: &FjspInstance,
        enc: &FjspEncoding,
        memory: &mut Memory,
        states: &[FjspState],
        mask: &[bool],
    ) -> Result<Var> {
        let n_nodes = inst.node_count();
        let prev: Vec<usize> = states.iter().map(|s| s.last_node.unwrap_or(n_nodes)).collect();
        let q = self.query.step(tape, tape.gather_rows(enc.embeddings, &prev), memory);

        let mut jobs = Vec::new();
        let mut machines = Vec::new();
        let mut job_idx = Vec::with_capacity(states.len() * n_nodes);
        let mut machine_idx = Vec::with_capacity(states.len() * n_nodes);
        for s in states {
            jobs.extend(s.job_context());
            machines.extend(s.machine_context());
            job_idx.extend_from_slice(&enc.node_job);
            machine_idx.extend_from_slice(&enc.node_machine);
        }
        let jc = tape.constant(scaled_features(&jobs, &COMPLETION_TIME_COLUMNS, enc.scale));
        let jc = tape.relu(tape.matmul(jc, tape.param(self.w_job)));
        let mc = tape.constant(scaled_features(&machines, &COMPLETION_TIME_COLUMNS, enc.scale));
        let mc = tape.relu(tape.matmul(mc, tape.param(self.w_machine)));
        let job_scores = tape.row_block_dot(tape.matmul_nt(q, tape.param(self.w5_job)), jc, inst.n_jobs());
        let machine_scores = tape.row_block_dot(tape.matmul_nt(q, tape.param(self.w5_machine)), mc, inst.n_machines());
        let scores = tape.add(
            tape.add(tape.gather_per_row(job_scores, &job_idx), tape.gather_per_row(machine_scores, &machine_idx)),
            tape.matmul_nt(q, enc.keys),
        );
        tape.log_softmax(scores, mask)
    }
}
