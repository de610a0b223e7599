//! Problem-level dispatch: one enum each for problems, instances and policy
//! networks, so the training loop and tools can stay problem-agnostic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParameterSet;
use crate::env::fjsp::{fjsp_pdr_schedule, FjspInstance, Flavor};
use crate::env::jsp::{pdr_schedule, DispatchRule, JspInstance};
use crate::env::tsp::{exact_tsp, two_opt_reference, TspInstance, EXACT_MAX_NODES};
use crate::env::Environment;
use crate::error::{domain, Error, Result};
use crate::model::{FjspMgl, JspMgl, MglConfig, Policy, TspConfig, TspModel};
use crate::rng::{stream, Rng};

pub const DISPATCH_RULES: [DispatchRule; 3] = [DispatchRule::Spt, DispatchRule::Mor, DispatchRule::Mwr];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Jsp,
    Tsp,
    Fjsp,
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsp" => Ok(Self::Jsp),
            "tsp" => Ok(Self::Tsp),
            "fjsp" => Ok(Self::Fjsp),
            _ => domain(format!("unknown problem {s:?}")),
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Jsp => "jsp",
            Self::Tsp => "tsp",
            Self::Fjsp => "fjsp",
        })
    }
}

/// Instance size: node count for routing, `jobs x machines` for scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Shape {
    pub size: usize,
    pub machines: Option<usize>,
}

impl Shape {
    pub fn nodes(size: usize) -> Self {
        Self { size, machines: None }
    }

    pub fn grid(jobs: usize, machines: usize) -> Self {
        Self {
            size: jobs,
            machines: Some(machines),
        }
    }

    pub fn check(&self, problem: Problem) -> Result<()> {
        match (problem, self.machines) {
            (Problem::Tsp, None) if self.size >= 2 => Ok(()),
            (Problem::Jsp | Problem::Fjsp, Some(m)) if self.size >= 1 && m >= 1 => Ok(()),
            _ => domain(format!("shape {self} does not fit problem {problem}")),
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("invalid shape {s:?}; expected N or JxM"));
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        match s.split_once(['x', 'X']) {
            Some((a, b)) => Ok(Self::grid(num(a)?, num(b)?)),
            None => Ok(Self::nodes(num(s)?)),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.machines {
            Some(m) => write!(f, "{}x{}", self.size, m),
            None => write!(f, "{}", self.size),
        }
    }
}

impl TryFrom<String> for Shape {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Shape> for String {
    fn from(s: Shape) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Jsp(JspInstance),
    Tsp(TspInstance),
    Fjsp(FjspInstance),
}

impl Instance {
    pub fn problem(&self) -> Problem {
        match self {
            Self::Jsp(_) => Problem::Jsp,
            Self::Tsp(_) => Problem::Tsp,
            Self::Fjsp(_) => Problem::Fjsp,
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            Self::Jsp(i) => Shape::grid(i.n_jobs(), i.n_machines()),
            Self::Tsp(i) => Shape::nodes(i.len()),
            Self::Fjsp(i) => Shape::grid(i.n_jobs(), i.n_machines()),
        }
    }

    /// Random instance; flexible instances use `machines` as the longest
    /// job's operation count.
    pub fn generate(problem: Problem, shape: Shape, flavor: Flavor, rng: &mut Rng) -> Result<Self> {
        shape.check(problem)?;
        let machines = shape.machines.unwrap_or(0);
        Ok(match problem {
            Problem::Jsp => Self::Jsp(JspInstance::generate(shape.size, machines, rng)?),
            Problem::Tsp => Self::Tsp(TspInstance::generate(shape.size, rng)?),
            Problem::Fjsp => Self::Fjsp(FjspInstance::generate(shape.size, machines, machines, flavor, rng)?),
        })
    }

    /// Parses Taillard, TSPLIB or `.fjs` text according to the problem.
    pub fn parse(problem: Problem, text: &str) -> Result<Self> {
        Ok(match problem {
            Problem::Jsp => Self::Jsp(JspInstance::parse_taillard(text)?),
            Problem::Tsp => Self::Tsp(TspInstance::parse_tsplib(text)?),
            Problem::Fjsp => Self::Fjsp(FjspInstance::parse_fjs(text)?),
        })
    }

    pub fn to_text(&self, name: &str) -> String {
        match self {
            Self::Jsp(i) => i.to_taillard(),
            Self::Tsp(i) => i.to_tsplib(name),
            Self::Fjsp(i) => i.to_fjs(),
        }
    }

    /// Objective of a complete action sequence.
    pub fn evaluate(&self, actions: &[usize]) -> Result<f64> {
        match self {
            Self::Jsp(i) => i.evaluate(actions),
            Self::Tsp(i) => i.evaluate(actions),
            Self::Fjsp(i) => i.evaluate(actions),
        }
    }

    /// Makespan of a dispatching rule; scheduling problems only.
    pub fn dispatch(&self, rule: DispatchRule) -> Result<f64> {
        match self {
            Self::Jsp(i) => Ok(pdr_schedule(i, rule).objective),
            Self::Fjsp(i) => Ok(fjsp_pdr_schedule(i, rule).objective),
            Self::Tsp(_) => Err(Error::Capability("dispatching rules apply to scheduling problems".into())),
        }
    }

    /// Reference objective and the name of the method that produced it:
    /// the exact optimum for small routing instances, a 2-opt local optimum
    /// for larger ones, and the best dispatching rule for scheduling.
    pub fn reference(&self, seed: u64) -> Result<(f64, &'static str)> {
        let value = match self {
            Self::Tsp(i) if i.len() <= EXACT_MAX_NODES => exact_tsp(i)?.length,
            Self::Tsp(i) => two_opt_reference(i, seed)?.length,
            _ => {
                let mut best = f64::INFINITY;
                for rule in DISPATCH_RULES {
                    best = best.min(self.dispatch(rule)?);
                }
                best
            }
        };
        Ok((value, self.reference_method()))
    }

    /// Name of the method [`Instance::reference`] uses for this instance.
    pub fn reference_method(&self) -> &'static str {
        match self {
            Self::Tsp(i) if i.len() <= EXACT_MAX_NODES => "held-karp",
            Self::Tsp(_) => "2-opt",
            _ => "best-pdr",
        }
    }
}

/// Network hyperparameters; graph models serve both scheduling problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Mgl(MglConfig),
    Tsp(TspConfig),
}

impl ModelConfig {
    pub fn default_for(problem: Problem) -> Self {
        match problem {
            Problem::Tsp => Self::Tsp(TspConfig::default()),
            Problem::Jsp | Problem::Fjsp => Self::Mgl(MglConfig::default()),
        }
    }

    pub fn check(&self, problem: Problem) -> Result<()> {
        match (problem, self) {
            (Problem::Tsp, Self::Tsp(c)) => {
                if c.width == 0 || c.heads == 0 || c.width % c.heads != 0 || c.ff_width == 0 {
                    return domain("model width must be a positive multiple of the head count");
                }
                Ok(())
            }
            (Problem::Jsp | Problem::Fjsp, Self::Mgl(c)) => {
                if c.heads == 0 || c.gat_width == 0 || c.gat_width % c.heads != 0 {
                    return domain("attention width must be a positive multiple of the head count");
                }
                if c.model_width == 0 || c.context_width == 0 {
                    return domain("model widths must be positive");
                }
                Ok(())
            }
            _ => domain(format!("model kind does not fit problem {problem}")),
        }
    }
}

/// A policy network of the matching problem.
pub enum Agent {
    Jsp(JspMgl),
    Tsp(TspModel),
    Fjsp(FjspMgl),
}

/// Work that runs against any environment and its policy.
pub trait Task {
    type Output;

    fn run<E: Environment, P: Policy<E>>(self, policy: &P, inst: &E) -> Result<Self::Output>;
}

impl Agent {
    /// Fresh network with parameters drawn from `seed`.
    pub fn build(problem: Problem, model: &ModelConfig, seed: u64) -> Result<(Self, ParameterSet)> {
        model.check(problem)?;
        let mut params = ParameterSet::new();
        let mut rng = stream(seed, &[]);
        let agent = match (problem, *model) {
            (Problem::Jsp, ModelConfig::Mgl(c)) => Self::Jsp(JspMgl::new(c, &mut params, &mut rng)),
            (Problem::Fjsp, ModelConfig::Mgl(c)) => Self::Fjsp(FjspMgl::new(c, &mut params, &mut rng)),
            (Problem::Tsp, ModelConfig::Tsp(c)) => Self::Tsp(TspModel::new(c, &mut params, &mut rng)),
            _ => unreachable!("checked above"),
        };
        Ok((agent, params))
    }

    pub fn problem(&self) -> Problem {
        match self {
            Self::Jsp(_) => Problem::Jsp,
            Self::Tsp(_) => Problem::Tsp,
            Self::Fjsp(_) => Problem::Fjsp,
        }
    }

    pub fn run<T: Task>(&self, inst: &Instance, task: T) -> Result<T::Output> {
        match (self, inst) {
            (Self::Jsp(p), Instance::Jsp(i)) => task.run(p, i),
            (Self::Tsp(p), Instance::Tsp(i)) => task.run(p, i),
            (Self::Fjsp(p), Instance::Fjsp(i)) => task.run(p, i),
            _ => domain(format!(
                "a {} model cannot solve a {} instance",
                self.problem(),
                inst.problem()
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_parse_and_print() {
        assert_eq!("6x6".parse::<Shape>().unwrap(), Shape::grid(6, 6));
        assert_eq!("20".parse::<Shape>().unwrap(), Shape::nodes(20));
        assert_eq!(Shape::grid(10, 5).to_string(), "10x5");
        assert!("6x".parse::<Shape>().is_err());
        assert!(Shape::nodes(5).check(Problem::Jsp).is_err());
        assert!(Shape::grid(5, 5).check(Problem::Tsp).is_err());
        let json = serde_json::to_string(&vec![Shape::grid(8, 8)]).unwrap();
        assert_eq!(json, "[\"8x8\"]");
    }

    #[test]
    fn mismatched_model_and_instance_is_rejected() {
        let (agent, _) = Agent::build(Problem::Tsp, &ModelConfig::default_for(Problem::Tsp), 1).unwrap();
        let inst = Instance::generate(Problem::Jsp, Shape::grid(2, 2), Flavor::RData, &mut stream(1, &[])).unwrap();
        struct Nothing;
        impl Task for Nothing {
            type Output = ();
            fn run<E: Environment, P: Policy<E>>(self, _: &P, _: &E) -> Result<()> {
                Ok(())
            }
        }
        assert!(agent.run(&inst, Nothing).is_err());
        assert!(Agent::build(Problem::Jsp, &ModelConfig::default_for(Problem::Tsp), 1).is_err());
    }

    #[test]
    fn scheduling_reference_is_the_best_rule() {
        let inst = Instance::generate(Problem::Jsp, Shape::grid(4, 3), Flavor::RData, &mut stream(2, &[])).unwrap();
        let (value, name) = inst.reference(0).unwrap();
        let rules: Vec<f64> = DISPATCH_RULES.iter().map(|&r| inst.dispatch(r).unwrap()).collect();
        assert_eq!(value, rules.iter().cloned().fold(f64::INFINITY, f64::min));
        assert_eq!(name, "best-pdr");
    }
}
