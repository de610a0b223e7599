//! Policy networks and batched rollouts.
//!
//! A [`Policy`] maps construction states to log-probabilities over actions.
//! Rollouts and replays batch many solutions of one instance as rows of the
//! same matrices, so the instance is encoded once per call.

pub mod mgl;
pub mod tsp;

use rand::Rng as _;

use crate::autodiff::{Matrix, ParameterSet, Tape, Var};
use crate::cop::{Origin, Solution};
use crate::env::Environment;
use crate::error::{domain, Result};
use crate::rng::Rng;

pub use mgl::{FjspMgl, JspMgl, MglConfig};
pub use tsp::{TspConfig, TspModel};

pub trait Policy<E: Environment>: Sync {
    /// Per-instance values shared by every row.
    type Encoding;
    /// Per-row decoder memory carried across steps.
    type Memory;

    fn encode(&self, tape: &Tape, inst: &E) -> Result<Self::Encoding>;

    fn start(&self, tape: &Tape, enc: &Self::Encoding, rows: usize) -> Self::Memory;

    /// Log-probabilities, one row per state and one column per action;
    /// infeasible entries are `-inf`. `mask` is row-major over the same shape.
    fn log_probs(
        &self,
        tape: &Tape,
        inst: &E,
        enc: &Self::Encoding,
        memory: &mut Self::Memory,
        states: &[E::State],
        mask: &[bool],
    ) -> Result<Var>;
}

pub enum RowMode {
    /// Highest-probability action, ties to the lowest index.
    Greedy,
    /// Categorical draw from the row's own stream.
    Sample(Rng),
}

pub struct RowSpec {
    pub mode: RowMode,
    /// Action forced at the first step, for multi-start decoding.
    pub first_action: Option<usize>,
}

impl RowSpec {
    pub fn greedy() -> Self {
        Self {
            mode: RowMode::Greedy,
            first_action: None,
        }
    }

    pub fn sample(rng: Rng) -> Self {
        Self {
            mode: RowMode::Sample(rng),
            first_action: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// One solution per row, in row order; `sample` is the row index.
    pub solutions: Vec<Solution>,
    /// Bytes held by the rollout tape.
    pub tape_bytes: usize,
}

/// Index of the largest feasible entry; ties go to the lowest index.
pub fn argmax_feasible(row: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for j in 0..row.len() {
        if mask[j] && best.map_or(true, |b| row[j] > row[b]) {
            best = Some(j);
        }
    }
    best
}

fn sample_feasible(row: &[f64], mask: &[bool], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for j in 0..row.len() {
        if mask[j] {
            acc += row[j].exp();
            last = Some(j);
            if u < acc {
                return j;
            }
        }
    }
    last.expect("feasible action exists")
}

/// Runs every row to completion with parameters frozen.
pub fn rollout<E, P>(policy: &P, params: &ParameterSet, inst: &E, rows: Vec<RowSpec>) -> Result<Rollout>
where
    E: Environment,
    P: Policy<E>,
{
    if rows.is_empty() {
        return domain("rollout needs at least one row");
    }
    let tape = Tape::frozen(params);
    let enc = policy.encode(&tape, inst)?;
    let b = rows.len();
    let a = inst.action_count();
    let mut memory = policy.start(&tape, &enc, b);
    let mut states: Vec<E::State> = (0..b).map(|_| inst.initial_state()).collect();
    let mut actions: Vec<Vec<usize>> = vec![Vec::with_capacity(inst.horizon()); b];
    let mut modes: Vec<(RowMode, Option<usize>)> = rows.into_iter().map(|r| (r.mode, r.first_action)).collect();
    let mut mask = vec![false; b * a];
    for step in 0..inst.horizon() {
        for (r, st) in states.iter().enumerate() {
            inst.write_mask(st, &mut mask[r * a..(r + 1) * a]);
        }
        let lp = tape.value(policy.log_probs(&tape, inst, &enc, &mut memory, &states, &mask)?);
        for r in 0..b {
            let m = &mask[r * a..(r + 1) * a];
            let (mode, first) = &mut modes[r];
            let choice = match (step, *first) {
                (0, Some(forced)) => forced,
                _ => match mode {
                    RowMode::Greedy => argmax_feasible(lp.row(r), m).expect("feasible action exists"),
                    RowMode::Sample(rng) => sample_feasible(lp.row(r), m, rng),
                },
            };
            inst.apply(&mut states[r], choice)?;
            actions[r].push(choice);
        }
    }
    let solutions = actions
        .into_iter()
        .zip(&states)
        .zip(&modes)
        .enumerate()
        .map(|(r, ((acts, st), (mode, _)))| {
            let origin = match mode {
                RowMode::Greedy => Origin::Greedy,
                RowMode::Sample(_) => Origin::Sampled,
            };
            Solution::new(acts, inst.objective(st), origin, r)
        })
        .collect();
    Ok(Rollout {
        solutions,
        tape_bytes: tape.value_bytes(),
    })
}

/// Total log-likelihood of each action sequence as a `K x 1` column.
pub fn sequence_log_likelihoods<E, P>(policy: &P, tape: &Tape, inst: &E, sequences: &[&[usize]]) -> Result<Var>
where
    E: Environment,
    P: Policy<E>,
{
    if sequences.is_empty() {
        return domain("no sequences to replay");
    }
    let horizon = inst.horizon();
    if let Some(s) = sequences.iter().find(|s| s.len() != horizon) {
        return domain(format!("sequence has {} actions, expected {horizon}", s.len()));
    }
    let enc = policy.encode(tape, inst)?;
    let k = sequences.len();
    let a = inst.action_count();
    let mut memory = policy.start(tape, &enc, k);
    let mut states: Vec<E::State> = (0..k).map(|_| inst.initial_state()).collect();
    let mut mask = vec![false; k * a];
    let mut total: Option<Var> = None;
    for step in 0..horizon {
        for (r, st) in states.iter().enumerate() {
            inst.write_mask(st, &mut mask[r * a..(r + 1) * a]);
        }
        let chosen: Vec<usize> = sequences.iter().map(|s| s[step]).collect();
        for (r, &c) in chosen.iter().enumerate() {
            if c >= a || !mask[r * a + c] {
                return domain(format!("action {c} is infeasible at step {step}"));
            }
        }
        let lp = policy.log_probs(tape, inst, &enc, &mut memory, &states, &mask)?;
        let picked = tape.gather_per_row(lp, &chosen);
        total = Some(match total {
            None => picked,
            Some(t) => tape.add(t, picked),
        });
        for (st, &c) in states.iter_mut().zip(&chosen) {
            inst.apply(st, c)?;
        }
    }
    Ok(total.expect("horizon is at least one step"))
}

/// Probabilities of every action at a single state.
pub fn action_probabilities<E, P>(policy: &P, params: &ParameterSet, inst: &E, prefix: &[usize]) -> Result<Vec<f64>>
where
    E: Environment,
    P: Policy<E>,
{
    let tape = Tape::frozen(params);
    let enc = policy.encode(&tape, inst)?;
    let mut memory = policy.start(&tape, &enc, 1);
    let mut state = inst.initial_state();
    let mut mask = vec![false; inst.action_count()];
    let mut probs = Vec::new();
    for step in 0..=prefix.len() {
        inst.write_mask(&state, &mut mask);
        if !mask.iter().any(|&m| m) {
            return domain("no feasible action");
        }
        let lp = policy.log_probs(&tape, inst, &enc, &mut memory, std::slice::from_ref(&state), &mask)?;
        if step == prefix.len() {
            probs = tape.value(lp).data().iter().map(|v| v.exp()).collect();
        } else {
            inst.apply(&mut state, prefix[step])?;
        }
    }
    Ok(probs)
}

/// LSTM cell over a batch: returns the new hidden and cell states.
pub(crate) fn lstm_cell(tape: &Tape, x: Var, h: Var, c: Var, wx: Var, wh: Var, bias: Var) -> (Var, Var) {
    let d = tape.shape(h).1;
    let gates = tape.add_row(tape.add(tape.matmul(x, wx), tape.matmul(h, wh)), bias);
    let input = tape.sigmoid(tape.slice_cols(gates, 0, d));
    let forget = tape.sigmoid(tape.slice_cols(gates, d, d));
    let cand = tape.tanh(tape.slice_cols(gates, 2 * d, d));
    let output = tape.sigmoid(tape.slice_cols(gates, 3 * d, d));
    let c2 = tape.add(tape.mul(forget, c), tape.mul(input, cand));
    let h2 = tape.mul(output, tape.tanh(c2));
    (h2, c2)
}

pub(crate) fn zeros(tape: &Tape, rows: usize, cols: usize) -> Var {
    tape.constant(Matrix::zeros(rows, cols))
}
