//! Decoding modes and gap evaluation against reference objectives.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::{Agent, Instance, Problem, Shape, Task};
use crate::autodiff::ParameterSet;
use crate::cop::{gap_percent, Solution};
use crate::env::fjsp::Flavor;
use crate::env::Environment;
use crate::error::{domain, Error, Result};
use crate::model::{rollout, Policy, RowSpec};
use crate::pairs::sampling_rollout;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EvalMode {
    Greedy,
    /// Best of this many sampled solutions; the greedy one is not included.
    Sample(usize),
    /// One greedy rollout per feasible first action.
    MultiStart,
    /// Multi-start on each of the eight dihedral images of a routing instance.
    MultiStartAug8,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('-', "_");
        match lower.as_str() {
            "greedy" => Ok(Self::Greedy),
            "multistart" | "multi_start" => Ok(Self::MultiStart),
            "multistart_aug8" | "multi_start_aug8" => Ok(Self::MultiStartAug8),
            _ => match lower.strip_prefix("sample:") {
                Some(n) => match n.parse::<usize>() {
                    Ok(n) if n >= 1 => Ok(Self::Sample(n)),
                    _ => domain(format!("invalid sample count in {s:?}")),
                },
                None => domain(format!("unknown decoding mode {s:?}")),
            },
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Greedy => f.write_str("greedy"),
            Self::Sample(n) => write!(f, "sample:{n}"),
            Self::MultiStart => f.write_str("multistart"),
            Self::MultiStartAug8 => f.write_str("multistart_aug8"),
        }
    }
}

impl TryFrom<String> for EvalMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EvalMode> for String {
    fn from(m: EvalMode) -> String {
        m.to_string()
    }
}

struct Decode<'a> {
    params: &'a ParameterSet,
    mode: EvalMode,
    seed: u64,
    path: &'a [u64],
}

impl Task for Decode<'_> {
    type Output = Vec<Solution>;

    fn run<E: Environment, P: Policy<E>>(self, policy: &P, inst: &E) -> Result<Vec<Solution>> {
        match self.mode {
            EvalMode::Greedy => Ok(rollout(policy, self.params, inst, vec![RowSpec::greedy()])?.solutions),
            EvalMode::Sample(n) => sampling_rollout(policy, self.params, inst, n, self.seed, self.path),
            EvalMode::MultiStart | EvalMode::MultiStartAug8 => {
                let mask = inst.feasible_actions(&inst.initial_state())?;
                let rows = (0..mask.len())
                    .filter(|&a| mask[a])
                    .map(|a| RowSpec {
                        first_action: Some(a),
                        ..RowSpec::greedy()
                    })
                    .collect();
                Ok(rollout(policy, self.params, inst, rows)?.solutions)
            }
        }
    }
}

fn best_of(solutions: Vec<Solution>) -> Solution {
    solutions
        .into_iter()
        .reduce(|a, b| if b.objective < a.objective { b } else { a })
        .expect("decoding yields at least one solution")
}

/// Every solution the mode produces, in row order. Sampled rows draw from
/// streams keyed by `(seed, path, row)`, so smaller sample counts see a
/// prefix of larger ones.
pub fn decode_all(
    agent: &Agent,
    params: &ParameterSet,
    inst: &Instance,
    mode: EvalMode,
    seed: u64,
    path: &[u64],
) -> Result<Vec<Solution>> {
    let task = |mode| Decode {
        params,
        mode,
        seed,
        path,
    };
    match (mode, inst) {
        (EvalMode::MultiStartAug8, Instance::Tsp(tsp)) => {
            let mut all = Vec::new();
            for image in tsp.augment_8() {
                for mut sol in agent.run(&Instance::Tsp(image), task(EvalMode::MultiStart))? {
                    // Distances are preserved only up to rounding; score on the original.
                    sol.objective = inst.evaluate(&sol.actions)?;
                    sol.sample = all.len();
                    all.push(sol);
                }
            }
            Ok(all)
        }
        (EvalMode::MultiStartAug8, _) => Err(Error::Capability(
            "eightfold augmentation applies to routing instances only".into(),
        )),
        _ => agent.run(inst, task(mode)),
    }
}

/// Best solution under the decoding mode, scored on the given instance.
pub fn solve(agent: &Agent, params: &ParameterSet, inst: &Instance, mode: EvalMode, seed: u64, path: &[u64]) -> Result<Solution> {
    Ok(best_of(decode_all(agent, params, inst, mode, seed, path)?))
}

/// Best solution and solve time in seconds for every instance, decoded in
/// parallel; instance `i` samples from streams keyed by `(seed, i)`.
pub fn solve_all(
    agent: &Agent,
    params: &ParameterSet,
    instances: &[Instance],
    mode: EvalMode,
    seed: u64,
) -> Result<Vec<(Solution, f64)>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let started = Instant::now();
            let sol = solve(agent, params, inst, mode, seed, &[i as u64])?;
            Ok((sol, started.elapsed().as_secs_f64()))
        })
        .collect()
}

/// Instances with their reference objectives and the reference method.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub instances: Vec<Instance>,
    pub references: Vec<Option<f64>>,
    pub reference_kind: String,
}

impl ValidationSet {
    /// `per_shape` fresh instances of every shape, references computed in
    /// parallel with deterministic ordering.
    pub fn generate(problem: Problem, shapes: &[Shape], per_shape: usize, flavor: Flavor, seed: u64) -> Result<Self> {
        let mut instances = Vec::with_capacity(shapes.len() * per_shape);
        for (s, &shape) in shapes.iter().enumerate() {
            for j in 0..per_shape {
                let mut rng = stream(seed, &[s as u64, j as u64]);
                instances.push(Instance::generate(problem, shape, flavor, &mut rng)?);
            }
        }
        Self::with_references(instances, seed)
    }

    pub fn with_references(instances: Vec<Instance>, seed: u64) -> Result<Self> {
        let refs: Vec<(f64, &'static str)> = instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| inst.reference(crate::rng::derive_seed(seed, &[i as u64])))
            .collect::<Result<_>>()?;
        let mut kinds: Vec<&str> = refs.iter().map(|r| r.1).collect();
        kinds.sort_unstable();
        kinds.dedup();
        Ok(Self {
            instances,
            references: refs.iter().map(|r| Some(r.0)).collect(),
            reference_kind: kinds.join("+"),
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    /// Best objective per instance.
    pub objectives: Vec<f64>,
    /// Gap per instance; `None` when the instance has no reference.
    pub gaps: Vec<Option<f64>>,
    pub mean_objective: f64,
    /// Mean over instances with a reference; `None` if there are none.
    pub mean_gap: Option<f64>,
    pub skipped: usize,
}

/// Decodes every instance in parallel; results do not depend on the
/// number of worker threads.
pub fn evaluate(
    agent: &Agent,
    params: &ParameterSet,
    instances: &[Instance],
    references: &[Option<f64>],
    mode: EvalMode,
    seed: u64,
) -> Result<EvalSummary> {
    if instances.len() != references.len() {
        return domain("one reference slot per instance is required");
    }
    if instances.is_empty() {
        return domain("nothing to evaluate");
    }
    let objectives: Vec<f64> = solve_all(agent, params, instances, mode, seed)?
        .into_iter()
        .map(|(s, _)| s.objective)
        .collect();
    let gaps: Vec<Option<f64>> = objectives
        .iter()
        .zip(references)
        .map(|(&o, r)| r.map(|r| gap_percent(o, r)).transpose())
        .collect::<Result<_>>()?;
    let known: Vec<f64> = gaps.iter().flatten().copied().collect();
    Ok(EvalSummary {
        mean_objective: objectives.iter().sum::<f64>() / objectives.len() as f64,
        mean_gap: (!known.is_empty()).then(|| known.iter().sum::<f64>() / known.len() as f64),
        skipped: gaps.len() - known.len(),
        objectives,
        gaps,
    })
}

pub fn validate(agent: &Agent, params: &ParameterSet, set: &ValidationSet, mode: EvalMode, seed: u64) -> Result<EvalSummary> {
    evaluate(agent, params, &set.instances, &set.references, mode, seed)
}
