//! Preference and comparison losses, in scalar form and on the tape.
//!
//! Log-likelihoods come in two flavours: totals (sum of chosen-action
//! log-probabilities) and averages (total divided by solution length). The
//! pairwise preference losses use averages except DPO, which uses totals.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Matrix, ParameterSet, Tape, Var};
use crate::cop::Solution;
use crate::env::Environment;
use crate::error::{domain, Error, Result};
use crate::model::{sequence_log_likelihoods, Policy};

pub const DPO_BETA: f64 = 0.1;
pub const SIMPO_BETA: f64 = 2.0;
pub const SIMPO_GAMMA: f64 = 1.0;

/// Training objective. Pairwise kinds consume preference pairs; `Sll` and
/// `Reinforce` consume the best solution and the whole rollout respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    Bopo,
    BopoMinus,
    Dpo { beta: f64 },
    Simpo { beta: f64, gamma: f64 },
    Sll,
    Reinforce,
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Bopo => "bopo",
            Self::BopoMinus => "bopo_minus",
            Self::Dpo { .. } => "dpo",
            Self::Simpo { .. } => "simpo",
            Self::Sll => "sll",
            Self::Reinforce => "reinforce",
        }
    }

    pub fn is_pairwise(&self) -> bool {
        matches!(self, Self::Bopo | Self::BopoMinus | Self::Dpo { .. } | Self::Simpo { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Dpo { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                domain(format!("dpo beta must be finite and non-negative, got {beta}"))
            }
            Self::Simpo { beta, gamma } if !(beta > 0.0 && beta.is_finite() && gamma.is_finite()) => {
                domain(format!("simpo needs beta > 0 and finite gamma, got {beta}, {gamma}"))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for Loss {
    type Err = Error;

    /// Parses a loss name with default hyperparameters.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bopo" => Ok(Self::Bopo),
            "bopo_minus" => Ok(Self::BopoMinus),
            "dpo" => Ok(Self::Dpo { beta: DPO_BETA }),
            "simpo" => Ok(Self::Simpo {
                beta: SIMPO_BETA,
                gamma: SIMPO_GAMMA,
            }),
            "sll" => Ok(Self::Sll),
            "reinforce" => Ok(Self::Reinforce),
            _ => domain(format!("unknown loss {s:?}")),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Average log-likelihoods, lengths and objectives of a winner and a loser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLogliks {
    pub winner_loglik: f64,
    pub loser_loglik: f64,
    pub winner_len: usize,
    pub loser_len: usize,
    pub winner_objective: f64,
    pub loser_objective: f64,
}

impl PairLogliks {
    /// Pair with unit lengths, convenient where only averages matter.
    pub fn new(winner_loglik: f64, loser_loglik: f64, winner_objective: f64, loser_objective: f64) -> Self {
        Self {
            winner_loglik,
            loser_loglik,
            winner_len: 1,
            loser_len: 1,
            winner_objective,
            loser_objective,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.winner_objective > 0.0 && self.winner_objective < self.loser_objective) {
            return domain(format!(
                "need 0 < winner objective < loser objective, got {} and {}",
                self.winner_objective, self.loser_objective
            ));
        }
        if self.winner_len == 0 || self.loser_len == 0 {
            return domain("solution lengths must be positive");
        }
        Ok(())
    }

    pub fn scaling(&self) -> f64 {
        self.loser_objective / self.winner_objective
    }

    pub fn margin(&self) -> f64 {
        self.winner_loglik - self.loser_loglik
    }
}

/// `-ln sigmoid(z)` without overflow.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    softplus(-z)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn bopo_loss(pair: &PairLogliks) -> Result<f64> {
    pair.check()?;
    Ok(neg_log_sigmoid(pair.scaling() * pair.margin()))
}

pub fn bopo_minus_loss(pair: &PairLogliks) -> Result<f64> {
    pair.check()?;
    Ok(neg_log_sigmoid(pair.margin()))
}

/// Uses total log-ratios against the reference policy's totals.
pub fn dpo_loss(pair: &PairLogliks, reference_winner_total: f64, reference_loser_total: f64, beta: f64) -> Result<f64> {
    Loss::Dpo { beta }.validate()?;
    if !(reference_winner_total.is_finite() && reference_loser_total.is_finite()) {
        return domain("reference log-likelihoods must be finite");
    }
    let winner = pair.winner_loglik * pair.winner_len as f64 - reference_winner_total;
    let loser = pair.loser_loglik * pair.loser_len as f64 - reference_loser_total;
    Ok(neg_log_sigmoid(beta * (winner - loser)))
}

pub fn simpo_loss(pair: &PairLogliks, beta: f64, gamma: f64) -> Result<f64> {
    Loss::Simpo { beta, gamma }.validate()?;
    Ok(neg_log_sigmoid(beta * pair.margin() - gamma))
}

/// Negative average log-likelihood of the pseudo-label solution.
pub fn sll_loss(best_avg_loglik: f64) -> f64 {
    -best_avg_loglik
}

/// Objective minus the rollout mean; sums to zero up to rounding.
pub fn reinforce_advantages(objectives: &[f64]) -> Result<Vec<f64>> {
    if objectives.len() < 2 {
        return domain(format!("shared baseline needs at least 2 solutions, got {}", objectives.len()));
    }
    let n = objectives.len() as f64;
    let baseline = objectives.iter().sum::<f64>() / n;
    // A second centring pass removes the rounding left by the first.
    let residual = objectives.iter().map(|o| o - baseline).sum::<f64>() / n;
    Ok(objectives.iter().map(|o| o - baseline - residual).collect())
}

/// `sum_i advantage_i * total_i`; minimising it raises the likelihood of
/// below-average solutions.
pub fn reinforce_loss(objectives: &[f64], totals: &[f64]) -> Result<f64> {
    if objectives.len() != totals.len() {
        return domain("objective and log-likelihood counts differ");
    }
    let adv = reinforce_advantages(objectives)?;
    Ok(adv.iter().zip(totals).map(|(a, t)| a * t).sum())
}

/// The gradient of the BOPO loss with respect to the winner and loser
/// average log-likelihoods is `(-scaling * confidence, scaling * confidence)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientFactors {
    pub scaling: f64,
    pub confidence: f64,
}

pub fn bopo_gradient_factors(pair: &PairLogliks) -> Result<GradientFactors> {
    pair.check()?;
    let scaling = pair.scaling();
    Ok(GradientFactors {
        scaling,
        confidence: sigmoid(-scaling * pair.margin()),
    })
}

/// Average per-step log-likelihood of a solution under the policy.
pub fn implicit_preference<E, P>(policy: &P, params: &ParameterSet, inst: &E, solution: &Solution) -> Result<f64>
where
    E: Environment,
    P: Policy<E>,
{
    if solution.is_empty() {
        return domain("empty solution");
    }
    let tape = Tape::frozen(params);
    let total = sequence_log_likelihoods(policy, &tape, inst, &[&solution.actions])?;
    Ok(tape.scalar(total) / solution.len() as f64)
}

fn column(values: Vec<f64>) -> Matrix {
    Matrix::from_vec(values.len(), 1, values)
}

/// Mean pairwise loss over `pairs` of `(winner, loser)` indices into the
/// rows of `totals` (a `K x 1` column of total log-likelihoods).
/// `reference_totals` is required by DPO and ignored otherwise.
pub fn pairwise_loss(
    tape: &Tape,
    loss: &Loss,
    totals: Var,
    lengths: &[usize],
    objectives: &[f64],
    pairs: &[(usize, usize)],
    reference_totals: Option<&[f64]>,
) -> Result<Var> {
    loss.validate()?;
    let rows = tape.shape(totals).0;
    if lengths.len() != rows || objectives.len() != rows || tape.shape(totals).1 != 1 {
        return domain("lengths and objectives must match the log-likelihood column");
    }
    if pairs.is_empty() {
        return domain("no pairs to score");
    }
    if lengths.contains(&0) {
        return domain("solution lengths must be positive");
    }
    for &(w, l) in pairs {
        if w >= rows || l >= rows {
            return domain(format!("pair ({w}, {l}) is out of range"));
        }
        if !(objectives[w] < objectives[l]) {
            return domain(format!("pair ({w}, {l}) has no strict preference"));
        }
    }
    let winners: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let losers: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let inv_len = tape.constant(column(lengths.iter().map(|&n| 1.0 / n as f64).collect()));
    let averages = || tape.mul(totals, inv_len);
    let margin_of = |x: Var| tape.sub(tape.gather_rows(x, &winners), tape.gather_rows(x, &losers));
    let logits = match *loss {
        Loss::Bopo => {
            if objectives[..].iter().any(|&o| !(o > 0.0)) {
                return domain("objectives must be positive for the scaled loss");
            }
            let scale = column(pairs.iter().map(|&(w, l)| objectives[l] / objectives[w]).collect());
            tape.mul(margin_of(averages()), tape.constant(scale))
        }
        Loss::BopoMinus => margin_of(averages()),
        Loss::Dpo { beta } => {
            let reference = match reference_totals {
                Some(r) if r.len() == rows && r.iter().all(|v| v.is_finite()) => r,
                _ => return domain("dpo needs one finite reference log-likelihood per solution"),
            };
            let ratios = tape.sub(totals, tape.constant(column(reference.to_vec())));
            tape.scale(margin_of(ratios), beta)
        }
        Loss::Simpo { beta, gamma } => {
            let shift = tape.constant(Matrix::filled(pairs.len(), 1, -gamma));
            tape.add(tape.scale(margin_of(averages()), beta), shift)
        }
        Loss::Sll | Loss::Reinforce => return domain(format!("{loss} is not a pairwise loss")),
    };
    let per_pair = tape.softplus(tape.neg(logits));
    Ok(tape.scale(tape.sum(per_pair), 1.0 / pairs.len() as f64))
}

/// Negative average log-likelihood of a `1 x 1` total.
pub fn sll_loss_tape(tape: &Tape, total: Var, len: usize) -> Result<Var> {
    if len == 0 {
        return domain("solution length must be positive");
    }
    Ok(tape.scale(total, -1.0 / len as f64))
}

/// Shared-baseline policy-gradient surrogate over a `B x 1` column of totals.
pub fn reinforce_loss_tape(tape: &Tape, totals: Var, objectives: &[f64]) -> Result<Var> {
    if tape.shape(totals) != (objectives.len(), 1) {
        return domain("objectives must match the log-likelihood column");
    }
    let adv = reinforce_advantages(objectives)?;
    Ok(tape.sum(tape.mul(totals, tape.constant(column(adv)))))
}
