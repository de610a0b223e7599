//! Training loop: sample instances, roll out, filter and pair, score the
//! loss, apply one optimiser update per step, validate on a cadence.

pub mod adam;
pub mod agent;
pub mod checkpoint;
pub mod eval;

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParameterSet, Tape, Var};
use crate::cop::{sort_solutions, Solution};
use crate::env::fjsp::Flavor;
use crate::env::Environment;
use crate::error::{domain, Error, Result};
use crate::losses::{pairwise_loss, reinforce_loss_tape, sll_loss_tape, Loss};
use crate::model::{sequence_log_likelihoods, Policy};
use crate::pairs::{build_pairs, hybrid_rollout, sampling_rollout, FilterMode, PairBatch, PairMode};
use crate::rng::stream;

pub use adam::Adam;
pub use agent::{Agent, Instance, ModelConfig, Problem, Shape, Task};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};
pub use eval::{decode_all, evaluate, solve, solve_all, validate, EvalMode, EvalSummary, ValidationSet};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "BOPO_WORKERS";

const KEY_INIT: u64 = 0;
const KEY_DATASET: u64 = 1;
const KEY_INSTANCE: u64 = 2;
const KEY_ROLLOUT: u64 = 3;
const KEY_FILTER: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: Problem,
    pub shapes: Vec<Shape>,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Instances per step.
    pub batch: usize,
    /// Solutions rolled out per instance.
    pub rollouts: usize,
    /// Solutions kept by the filter.
    pub keep: usize,
    pub lr: f64,
    pub loss: Loss,
    pub filter: FilterMode,
    pub pairing: PairMode,
    pub seed: u64,
    pub model: ModelConfig,
    /// Candidate distribution of generated flexible instances.
    pub flavor: Flavor,
    /// Size of the fixed scheduling training set; routing instances are
    /// generated fresh every step.
    pub dataset_size: usize,
    pub validate_every: usize,
    /// Validation instances per shape; 0 disables validation.
    pub validation_size: usize,
    pub validation_mode: EvalMode,
    pub validation_seed: u64,
    /// Steps between refreshes of the frozen reference policy (DPO only).
    pub reference_refresh: usize,
}

impl TrainConfig {
    /// Defaults of the full-scale setting for the problem.
    pub fn new(problem: Problem) -> Self {
        let (shapes, batch, rollouts, keep) = match problem {
            Problem::Jsp => (vec![Shape::grid(6, 6), Shape::grid(8, 8)], 1, 256, 16),
            Problem::Fjsp => (vec![Shape::grid(10, 5)], 1, 256, 16),
            Problem::Tsp => (vec![Shape::nodes(20)], 64, 128, 8),
        };
        Self {
            problem,
            shapes,
            epochs: 20,
            steps_per_epoch: 100,
            batch,
            rollouts,
            keep,
            lr: 2e-4,
            loss: Loss::Bopo,
            filter: FilterMode::Uniform,
            pairing: PairMode::BestAnchored,
            seed: 1,
            model: ModelConfig::default_for(problem),
            flavor: Flavor::RData,
            dataset_size: 30_000,
            validate_every: 50,
            validation_size: 100,
            validation_mode: EvalMode::Greedy,
            validation_seed: 20_240_101,
            reference_refresh: 10,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn check(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch == 0 {
            return domain("epochs, steps per epoch and batch size must be at least 1");
        }
        if self.rollouts == 0 || self.keep == 0 || self.keep > self.rollouts {
            return domain(format!(
                "need 1 <= filter size <= rollouts, got {} and {}",
                self.keep, self.rollouts
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return domain(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.shapes.is_empty() {
            return domain("at least one shape is required");
        }
        for s in &self.shapes {
            s.check(self.problem)?;
        }
        if self.dataset_size == 0 || self.validate_every == 0 || self.reference_refresh == 0 {
            return domain("dataset size, validation cadence and reference refresh must be at least 1");
        }
        if self.validation_mode == EvalMode::MultiStartAug8 && self.problem != Problem::Tsp {
            return Err(Error::Capability("eightfold augmentation applies to routing only".into()));
        }
        self.model.check(self.problem)?;
        self.loss.validate()
    }

    /// Instances consumed after `step` steps.
    pub fn instances_after(&self, step: usize) -> u64 {
        (step * self.batch * self.rollouts) as u64
    }
}

/// Worker threads requested through [`WORKERS_ENV`]; 1 when unset.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => domain(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")),
        },
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Capability(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub instances: u64,
    /// Mean step loss since the previous record; `None` if no update ran.
    pub loss: Option<f64>,
    pub val_gap: Option<f64>,
    pub seconds: Option<f64>,
}

/// Per-instance result of one training step.
#[derive(Debug, Clone)]
pub struct InstanceOutcome {
    pub loss: f64,
    /// Solutions the loss was scored on, with pair indices into them.
    pub batch: PairBatch,
    pub grads: Gradients,
}

#[derive(Debug, Clone)]
pub struct StepDetail {
    pub step: usize,
    pub instances: Vec<Instance>,
    /// `None` for instances that produced nothing to learn from.
    pub outcomes: Vec<Option<InstanceOutcome>>,
    /// Mean over contributing instances.
    pub loss: Option<f64>,
    pub grads: Option<Gradients>,
}

/// Scores a batch on a tracked tape; the row layout of `batch` depends on
/// the loss (all rollouts, the best solution, or the filtered solutions).
fn score_batch<E: Environment, P: Policy<E>>(
    policy: &P,
    tape: &Tape,
    inst: &E,
    loss: &Loss,
    batch: &PairBatch,
    reference: Option<&ParameterSet>,
) -> Result<Var> {
    let seqs = |rows: &[usize]| -> Vec<&[usize]> { rows.iter().map(|&r| &batch.filtered[r].actions[..]).collect() };
    match loss {
        Loss::Reinforce => {
            let rows: Vec<usize> = (0..batch.filtered.len()).collect();
            let totals = sequence_log_likelihoods(policy, tape, inst, &seqs(&rows))?;
            let objectives: Vec<f64> = batch.filtered.iter().map(|s| s.objective).collect();
            reinforce_loss_tape(tape, totals, &objectives)
        }
        Loss::Sll => {
            let best = &batch.filtered[0];
            let total = sequence_log_likelihoods(policy, tape, inst, &[&best.actions])?;
            sll_loss_tape(tape, total, best.len())
        }
        _ => {
            let mut used: Vec<usize> = batch.pairs.iter().flat_map(|&(w, l)| [w, l]).collect();
            used.sort_unstable();
            used.dedup();
            let slot = |r: usize| used.binary_search(&r).expect("row is used");
            let pairs: Vec<(usize, usize)> = batch.pairs.iter().map(|&(w, l)| (slot(w), slot(l))).collect();
            let sequences = seqs(&used);
            let totals = sequence_log_likelihoods(policy, tape, inst, &sequences)?;
            let lengths: Vec<usize> = sequences.iter().map(|s| s.len()).collect();
            let objectives: Vec<f64> = used.iter().map(|&r| batch.filtered[r].objective).collect();
            let reference_totals = match (loss, reference) {
                (Loss::Dpo { .. }, Some(frozen)) => {
                    let ref_tape = Tape::frozen(frozen);
                    let t = sequence_log_likelihoods(policy, &ref_tape, inst, &sequences)?;
                    Some(ref_tape.value(t).data().to_vec())
                }
                (Loss::Dpo { .. }, None) => return domain("dpo needs a reference policy"),
                _ => None,
            };
            pairwise_loss(tape, loss, totals, &lengths, &objectives, &pairs, reference_totals.as_deref())
        }
    }
}

struct InstanceStep<'a> {
    params: &'a ParameterSet,
    reference: Option<&'a ParameterSet>,
    config: &'a TrainConfig,
    step: usize,
    index: usize,
}

impl Task for InstanceStep<'_> {
    type Output = Option<InstanceOutcome>;

    fn run<E: Environment, P: Policy<E>>(self, policy: &P, inst: &E) -> Result<Option<InstanceOutcome>> {
        let cfg = self.config;
        let path = [KEY_ROLLOUT, self.step as u64, self.index as u64];
        let batch = match cfg.loss {
            Loss::Reinforce => {
                if cfg.rollouts < 2 {
                    return Ok(None);
                }
                let sols = sampling_rollout(policy, self.params, inst, cfg.rollouts, cfg.seed, &path)?;
                PairBatch {
                    filtered: sols,
                    pairs: Vec::new(),
                }
            }
            Loss::Sll => {
                let sols = hybrid_rollout(policy, self.params, inst, cfg.rollouts, cfg.seed, &path)?;
                let best: Solution = sort_solutions(sols)?.best().clone();
                PairBatch {
                    filtered: vec![best],
                    pairs: Vec::new(),
                }
            }
            _ => {
                let sols = hybrid_rollout(policy, self.params, inst, cfg.rollouts, cfg.seed, &path)?;
                let mut rng = stream(cfg.seed, &[KEY_FILTER, self.step as u64, self.index as u64]);
                let batch = build_pairs(sols, cfg.keep, cfg.filter, cfg.pairing, &mut rng)?;
                if batch.pairs.is_empty() {
                    return Ok(None);
                }
                batch
            }
        };
        let tape = Tape::new(self.params);
        let loss = score_batch(policy, &tape, inst, &cfg.loss, &batch, self.reference)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return domain(format!("non-finite loss {value} at step {}", self.step));
        }
        let grads = tape.backward(loss);
        Ok(Some(InstanceOutcome {
            loss: value,
            batch,
            grads,
        }))
    }
}

struct Replay<'a> {
    params: &'a ParameterSet,
    reference: Option<&'a ParameterSet>,
    loss: &'a Loss,
    batch: &'a PairBatch,
}

impl Task for Replay<'_> {
    type Output = f64;

    fn run<E: Environment, P: Policy<E>>(self, policy: &P, inst: &E) -> Result<f64> {
        let tape = Tape::frozen(self.params);
        let loss = score_batch(policy, &tape, inst, self.loss, self.batch, self.reference)?;
        Ok(tape.scalar(loss))
    }
}

pub struct TrainOutcome {
    pub agent: Agent,
    pub params: ParameterSet,
    pub records: Vec<TrainRecord>,
    pub updates: usize,
    pub skipped_steps: usize,
}

pub struct Trainer<'v> {
    config: TrainConfig,
    agent: Agent,
    params: ParameterSet,
    adam: Adam,
    reference: Option<ParameterSet>,
    dataset: Vec<Instance>,
    validation: Option<&'v ValidationSet>,
    step: usize,
    updates: usize,
    skipped: usize,
    started: Instant,
}

impl<'v> Trainer<'v> {
    pub fn new(config: TrainConfig, validation: Option<&'v ValidationSet>) -> Result<Self> {
        config.check()?;
        let (agent, params) = Agent::build(config.problem, &config.model, crate::rng::derive_seed(config.seed, &[KEY_INIT]))?;
        let dataset = match config.problem {
            Problem::Tsp => Vec::new(),
            _ => (0..config.dataset_size)
                .into_par_iter()
                .map(|j| {
                    let shape = config.shapes[j % config.shapes.len()];
                    Instance::generate(config.problem, shape, config.flavor, &mut stream(config.seed, &[KEY_DATASET, j as u64]))
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            adam: Adam::new(&params, config.lr),
            config,
            agent,
            params,
            reference: None,
            dataset,
            validation,
            step: 0,
            updates: 0,
            skipped: 0,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Completed steps, skipped ones included.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Frozen reference policy used by DPO at the next step.
    pub fn reference(&self) -> Option<&ParameterSet> {
        self.reference.as_ref()
    }

    /// Training instances of a 1-based step.
    pub fn instances_for_step(&self, step: usize) -> Vec<Instance> {
        let cfg = &self.config;
        (0..cfg.batch)
            .map(|i| {
                let mut rng = stream(cfg.seed, &[KEY_INSTANCE, step as u64, i as u64]);
                match cfg.problem {
                    Problem::Tsp => {
                        let shape = cfg.shapes[rng.gen_range(0..cfg.shapes.len())];
                        Instance::generate(cfg.problem, shape, cfg.flavor, &mut rng).expect("checked shape")
                    }
                    _ => self.dataset[rng.gen_range(0..self.dataset.len())].clone(),
                }
            })
            .collect()
    }

    fn refresh_reference(&mut self, step: usize) {
        let due = (step - 1) % self.config.reference_refresh == 0;
        if matches!(self.config.loss, Loss::Dpo { .. }) && (due || self.reference.is_none()) {
            self.reference = Some(self.params.clone());
        }
    }

    /// Computes the next step's losses and gradients without applying them.
    pub fn next_step_detail(&mut self) -> Result<StepDetail> {
        let step = self.step + 1;
        self.refresh_reference(step);
        let instances = self.instances_for_step(step);
        let outcomes: Vec<Option<InstanceOutcome>> = instances
            .par_iter()
            .enumerate()
            .map(|(index, inst)| {
                self.agent.run(
                    inst,
                    InstanceStep {
                        params: &self.params,
                        reference: self.reference.as_ref(),
                        config: &self.config,
                        step,
                        index,
                    },
                )
            })
            .collect::<Result<_>>()?;
        let contributing: Vec<&InstanceOutcome> = outcomes.iter().flatten().collect();
        let (loss, grads) = if contributing.is_empty() {
            (None, None)
        } else {
            let n = contributing.len() as f64;
            let mut grads = Gradients::zeros_like(&self.params);
            for o in &contributing {
                grads.add_assign(&o.grads);
            }
            grads.scale(1.0 / n);
            let loss = contributing.iter().map(|o| o.loss).sum::<f64>() / n;
            (Some(loss), Some(grads))
        };
        Ok(StepDetail {
            step,
            instances,
            outcomes,
            loss,
            grads,
        })
    }

    /// Runs one step; a step without any pair is skipped with a warning.
    pub fn step(&mut self) -> Result<Option<f64>> {
        let detail = self.next_step_detail()?;
        self.step = detail.step;
        match detail.grads {
            Some(grads) => {
                self.adam.step(&mut self.params, &grads);
                self.updates += 1;
                Ok(detail.loss)
            }
            None => {
                log::warn!("step {}: no preference pairs, update skipped", detail.step);
                self.skipped += 1;
                Ok(None)
            }
        }
    }

    /// Loss of a logged batch recomputed under the given parameters.
    pub fn replay_loss(&self, params: &ParameterSet, inst: &Instance, batch: &PairBatch) -> Result<f64> {
        self.agent.run(
            inst,
            Replay {
                params,
                reference: self.reference.as_ref(),
                loss: &self.config.loss,
                batch,
            },
        )
    }

    fn record(&self, losses: &[f64]) -> Result<TrainRecord> {
        let val_gap = match self.validation {
            Some(set) => validate(&self.agent, &self.params, set, self.config.validation_mode, self.config.validation_seed)?.mean_gap,
            None => None,
        };
        Ok(TrainRecord {
            step: self.step,
            instances: self.config.instances_after(self.step),
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            val_gap,
            seconds: Some(self.started.elapsed().as_secs_f64()),
        })
    }

    /// Runs every remaining step, emitting a record at step 0, on the
    /// validation cadence and after the last step.
    pub fn run(mut self, mut on_record: impl FnMut(&TrainRecord)) -> Result<TrainOutcome> {
        let total = self.config.total_steps();
        let mut records = Vec::new();
        let mut window = Vec::new();
        if self.step == 0 {
            let r = self.record(&window)?;
            on_record(&r);
            records.push(r);
        }
        while self.step < total {
            if let Some(loss) = self.step()? {
                window.push(loss);
            }
            if self.step % self.config.validate_every == 0 || self.step == total {
                let r = self.record(&window)?;
                log::info!(
                    "step {} instances {} loss {:?} gap {:?}",
                    r.step,
                    r.instances,
                    r.loss,
                    r.val_gap
                );
                window.clear();
                on_record(&r);
                records.push(r);
            }
            if self.step % self.config.steps_per_epoch == 0 {
                log::debug!("epoch {} done", self.step / self.config.steps_per_epoch);
            }
        }
        Ok(TrainOutcome {
            agent: self.agent,
            params: self.params,
            records,
            updates: self.updates,
            skipped_steps: self.skipped,
        })
    }
}

/// Trains on the configured worker pool with a validation set generated
/// from the configuration.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let workers = worker_count()?;
    with_workers(workers, || {
        let validation = if config.validation_size > 0 {
            Some(ValidationSet::generate(
                config.problem,
                &config.shapes,
                config.validation_size,
                config.flavor,
                config.validation_seed,
            )?)
        } else {
            None
        };
        Trainer::new(config.clone(), validation.as_ref())?.run(|_| {})
    })?
}

pub const CURVE_HEADER: &str = "step,instances,loss,val_gap,seconds";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

/// Curve text: the configuration as a comment line, a header and one row
/// per record. Wall time is printed only on request so runs compare equal.
pub fn format_curve(config: &TrainConfig, records: &[TrainRecord], record_time: bool) -> Result<String> {
    let mut out = format!("# config: {}\n{CURVE_HEADER}\n", serde_json::to_string(config)?);
    for r in records {
        let seconds = if record_time { r.seconds } else { None };
        writeln!(out, "{},{},{},{},{}", r.step, r.instances, opt(r.loss), opt(r.val_gap), opt(seconds))
            .expect("writing to a string");
    }
    Ok(out)
}

/// Parses curve text back into records; comment lines are skipped.
pub fn parse_curve(text: &str) -> Result<Vec<TrainRecord>> {
    let mut records = Vec::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line.trim() != CURVE_HEADER {
                return crate::error::parse_err(line_no, "missing curve header");
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return crate::error::parse_err(line_no, format!("expected 5 fields, found {}", fields.len()));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s == "-" {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("invalid number {s:?}"),
                })
        };
        let int = |s: &str| -> Result<u64> {
            s.parse::<u64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid integer {s:?}"),
            })
        };
        records.push(TrainRecord {
            step: int(fields[0])? as usize,
            instances: int(fields[1])?,
            loss: num(fields[2])?,
            val_gap: num(fields[3])?,
            seconds: num(fields[4])?,
        });
    }
    if !seen_header {
        return crate::error::parse_err(text.lines().count().max(1), "missing curve header");
    }
    Ok(records)
}
