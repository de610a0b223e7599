//! Preference-pair construction: hybrid rollout, filtering of the sorted
//! solution set and pairing, plus the ablation variants used in studies.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParameterSet;
use crate::cop::{sort_solutions, PreferencePair, Solution, SortedSolutionSet};
use crate::env::Environment;
use crate::error::{domain, Error, Result};
use crate::model::{rollout, Policy, RowSpec};
use crate::rng::{stream, Rng};

/// Rollout streams are keyed by `path ++ [row]`; row 0 is never sampled in a
/// hybrid rollout, so both rollout kinds share the same keys for rows >= 1.
fn row_stream(seed: u64, path: &[u64], row: usize) -> Rng {
    let mut key = path.to_vec();
    key.push(row as u64);
    stream(seed, &key)
}

/// One greedy solution (row 0) followed by `count - 1` sampled solutions.
pub fn hybrid_rollout<E, P>(
    policy: &P,
    params: &ParameterSet,
    inst: &E,
    count: usize,
    seed: u64,
    path: &[u64],
) -> Result<Vec<Solution>>
where
    E: Environment,
    P: Policy<E>,
{
    if count == 0 {
        return domain("rollout count must be at least 1");
    }
    let rows = std::iter::once(RowSpec::greedy())
        .chain((1..count).map(|r| RowSpec::sample(row_stream(seed, path, r))))
        .collect();
    Ok(rollout(policy, params, inst, rows)?.solutions)
}

/// `count` sampled solutions; row `r` draws from the same stream as row `r`
/// of a hybrid rollout with the same key.
pub fn sampling_rollout<E, P>(
    policy: &P,
    params: &ParameterSet,
    inst: &E,
    count: usize,
    seed: u64,
    path: &[u64],
) -> Result<Vec<Solution>>
where
    E: Environment,
    P: Policy<E>,
{
    if count == 0 {
        return domain("rollout count must be at least 1");
    }
    let rows = (0..count).map(|r| RowSpec::sample(row_stream(seed, path, r))).collect();
    Ok(rollout(policy, params, inst, rows)?.solutions)
}

/// 0-based positions `floor(total / keep) * k` for `k = 0..keep`.
pub fn uniform_indices(total: usize, keep: usize) -> Result<Vec<usize>> {
    if keep == 0 || keep > total {
        return domain(format!("filter size {keep} must lie in 1..={total}"));
    }
    let stride = total / keep;
    Ok((0..keep).map(|k| stride * k).collect())
}

fn pick(sorted: &SortedSolutionSet, indices: &[usize]) -> Vec<Solution> {
    indices.iter().map(|&i| sorted.as_slice()[i].clone()).collect()
}

/// Evenly spaced subsequence of the sorted set, starting at the best.
pub fn uniform_filter(sorted: &SortedSolutionSet, keep: usize) -> Result<Vec<Solution>> {
    Ok(pick(sorted, &uniform_indices(sorted.len(), keep)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    Uniform,
    Random,
    #[serde(rename = "topk")]
    TopK,
    #[serde(rename = "bottomk")]
    BottomK,
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "random" => Ok(Self::Random),
            "topk" => Ok(Self::TopK),
            "bottomk" => Ok(Self::BottomK),
            _ => domain(format!("unknown filter mode {s:?}")),
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Random => "random",
            Self::TopK => "topk",
            Self::BottomK => "bottomk",
        })
    }
}

/// Selects `keep` solutions from the sorted set; output keeps sorted order.
/// Only [`FilterMode::Random`] draws from `rng`.
pub fn filter(sorted: &SortedSolutionSet, keep: usize, mode: FilterMode, rng: &mut Rng) -> Result<Vec<Solution>> {
    let total = sorted.len();
    if keep == 0 || keep > total {
        return domain(format!("filter size {keep} must lie in 1..={total}"));
    }
    let indices: Vec<usize> = match mode {
        FilterMode::Uniform => uniform_indices(total, keep)?,
        FilterMode::TopK => (0..keep).collect(),
        FilterMode::BottomK => (total - keep..total).collect(),
        FilterMode::Random => {
            let mut chosen = sample_indices(rng, total, keep).into_vec();
            chosen.sort_unstable();
            chosen
        }
    };
    Ok(pick(sorted, &indices))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    BestAnchored,
    FullPermutation,
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "best_anchored" => Ok(Self::BestAnchored),
            "full_permutation" => Ok(Self::FullPermutation),
            _ => domain(format!("unknown pairing mode {s:?}")),
        }
    }
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BestAnchored => "best_anchored",
            Self::FullPermutation => "full_permutation",
        })
    }
}

/// Index pairs `(winner, loser)` into `filtered`, which must be sorted.
/// Pairs with equal objectives are dropped.
pub fn pair_indices(filtered: &[Solution], mode: PairMode) -> Result<Vec<(usize, usize)>> {
    if filtered.len() < 2 {
        return domain(format!("pairing needs at least 2 solutions, got {}", filtered.len()));
    }
    if filtered.windows(2).any(|w| w[0].objective > w[1].objective) {
        return domain("pairing input must be sorted by objective");
    }
    let strict = |w: usize, l: usize| filtered[w].objective < filtered[l].objective;
    Ok(match mode {
        PairMode::BestAnchored => (1..filtered.len()).filter(|&l| strict(0, l)).map(|l| (0, l)).collect(),
        PairMode::FullPermutation => (0..filtered.len())
            .flat_map(|w| (w + 1..filtered.len()).map(move |l| (w, l)))
            .filter(|&(w, l)| strict(w, l))
            .collect(),
    })
}

/// Pairs of the best filtered solution with every strictly worse one.
pub fn best_anchored_pairs(filtered: &[Solution]) -> Result<Vec<PreferencePair>> {
    to_pairs(filtered, PairMode::BestAnchored)
}

/// Every strictly ordered pair among the filtered solutions.
pub fn full_permutation_pairs(filtered: &[Solution]) -> Result<Vec<PreferencePair>> {
    to_pairs(filtered, PairMode::FullPermutation)
}

fn to_pairs(filtered: &[Solution], mode: PairMode) -> Result<Vec<PreferencePair>> {
    pair_indices(filtered, mode)?
        .into_iter()
        .map(|(w, l)| PreferencePair::new(filtered[w].clone(), filtered[l].clone()))
        .collect()
}

/// Output of the sort, filter and pair stages for one instance.
#[derive(Debug, Clone)]
pub struct PairBatch {
    /// Filtered solutions in sorted order.
    pub filtered: Vec<Solution>,
    /// `(winner, loser)` indices into `filtered`.
    pub pairs: Vec<(usize, usize)>,
}

/// Sorts, filters and pairs a rollout. A filter size below 2 yields no pairs.
pub fn build_pairs(
    solutions: Vec<Solution>,
    keep: usize,
    filter_mode: FilterMode,
    pair_mode: PairMode,
    rng: &mut Rng,
) -> Result<PairBatch> {
    let sorted = sort_solutions(solutions)?;
    let filtered = filter(&sorted, keep, filter_mode, rng)?;
    let pairs = if filtered.len() < 2 {
        Vec::new()
    } else {
        pair_indices(&filtered, pair_mode)?
    };
    Ok(PairBatch { filtered, pairs })
}
