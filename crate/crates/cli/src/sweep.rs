//! `bopo sweep`: trains every cell of a grid under an equal instance budget.

use std::path::PathBuf;

use anyhow::Result;
use bopo_core::autodiff::ParameterSet;
use bopo_core::env::Environment;
use bopo_core::model::{rollout, Policy, RowSpec};
use bopo_core::pairs::{FilterMode, PairMode};
use bopo_core::rng::stream;
use bopo_core::trainer::{with_workers, worker_count, Agent, Instance, Problem, Task, TrainConfig, Trainer, ValidationSet};

use crate::options::{check_config, resolve_loss, RunOpts};
use crate::table::{num, Table};
use crate::{emit, usage};

pub const SWEEP_HEADER: [&str; 11] = [
    "loss", "filter", "pairing", "rollouts", "keep", "seed", "steps", "instances", "final_gap", "peak_bytes", "status",
];

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub problem: Problem,
    /// Rollout counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rollout_b: Vec<usize>,
    /// Filter sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub filter_k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "uniform")]
    pub filter: Vec<FilterMode>,
    #[arg(long, value_delimiter = ',', default_value = "best_anchored")]
    pub pairing: Vec<PairMode>,
    #[arg(long, value_delimiter = ',', default_value = "bopo")]
    pub loss: Vec<String>,
    /// Training seeds; every cell runs once per seed.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    /// Instances consumed per cell, counted as steps x batch x rollouts;
    /// replaces --epochs and --steps.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunOpts,
}

struct TapeProbe<'a> {
    params: &'a ParameterSet,
    rows: usize,
}

impl Task for TapeProbe<'_> {
    type Output = usize;

    fn run<E: Environment, P: Policy<E>>(self, policy: &P, inst: &E) -> bopo_core::Result<usize> {
        let rows = (0..self.rows).map(|_| RowSpec::greedy()).collect();
        Ok(rollout(policy, self.params, inst, rows)?.tape_bytes)
    }
}

/// Bytes of the rollout tape for one instance of the largest training
/// shape; the dominant allocation of a training step per worker.
fn peak_bytes(config: &TrainConfig) -> Result<usize> {
    let shape = *config
        .shapes
        .iter()
        .max_by_key(|s| s.size * s.machines.unwrap_or(1))
        .expect("configurations have a shape");
    let inst = Instance::generate(config.problem, shape, config.flavor, &mut stream(config.seed, &[]))?;
    let (agent, params) = Agent::build(config.problem, &config.model, config.seed)?;
    Ok(agent.run(
        &inst,
        TapeProbe {
            params: &params,
            rows: config.rollouts,
        },
    )?)
}

pub fn run(args: SweepArgs) -> Result<()> {
    if args.run.seed.is_some() {
        return usage("sweep takes --seeds");
    }
    if args.budget.is_some() && (args.run.epochs.is_some() || args.run.steps.is_some()) {
        return usage("--budget replaces --epochs and --steps");
    }
    let mut base = TrainConfig::new(args.problem);
    args.run.apply(&mut base)?;
    let losses = args
        .loss
        .iter()
        .map(|l| resolve_loss(l, None, None))
        .collect::<Result<Vec<_>>>()?;
    let workers = worker_count()?;
    let validation = with_workers(workers, || -> Result<Option<ValidationSet>> {
        if base.validation_size == 0 {
            return Ok(None);
        }
        Ok(Some(ValidationSet::generate(
            base.problem,
            &base.shapes,
            base.validation_size,
            base.flavor,
            base.validation_seed,
        )?))
    })??;

    let mut table = Table::new(&SWEEP_HEADER);
    table.meta("problem", args.problem);
    table.meta("batch", base.batch);
    table.meta("budget", args.budget.map_or_else(|| "-".to_string(), |b| b.to_string()));
    if let Some(v) = &validation {
        table.meta("validation", format!("{} instances, {} mode, {}", v.len(), base.validation_mode, v.reference_kind));
    }
    table.meta("peak_bytes", "rollout tape of one instance of the largest shape");
    for loss in &losses {
        for &filter in &args.filter {
            for &pairing in &args.pairing {
                for &rollouts in &args.rollout_b {
                    for &keep in &args.filter_k {
                        for &seed in &args.seeds {
                            let mut config = TrainConfig {
                                loss: *loss,
                                filter,
                                pairing,
                                rollouts,
                                keep,
                                seed,
                                ..base.clone()
                            };
                            let mut status = "ok".to_string();
                            if let Some(budget) = args.budget {
                                let per_step = (config.batch * rollouts) as u64;
                                config.epochs = 1;
                                config.steps_per_epoch = (budget / per_step) as usize;
                                if budget % per_step != 0 {
                                    status = "ok: budget rounded down to whole steps".into();
                                }
                            }
                            let mut row = vec![
                                loss.to_string(),
                                filter.to_string(),
                                pairing.to_string(),
                                rollouts.to_string(),
                                keep.to_string(),
                                seed.to_string(),
                            ];
                            let skip = if keep > rollouts {
                                Some("skipped: filter size exceeds rollouts")
                            } else if config.steps_per_epoch == 0 {
                                Some("skipped: budget below one step")
                            } else {
                                None
                            };
                            if let Some(reason) = skip {
                                log::warn!("cell {row:?} {reason}");
                                row.extend(["0", "0", "-", "-", reason].map(String::from));
                                table.push(row);
                                continue;
                            }
                            check_config(&config)?;
                            log::info!("training cell {row:?}");
                            let outcome =
                                with_workers(workers, || Trainer::new(config.clone(), validation.as_ref())?.run(|_| {}))??;
                            let last = outcome.records.last().expect("a run records at least step 0");
                            row.extend([
                                config.total_steps().to_string(),
                                last.instances.to_string(),
                                num(last.val_gap),
                                peak_bytes(&config)?.to_string(),
                                status,
                            ]);
                            table.push(row);
                        }
                    }
                }
            }
        }
    }
    emit(args.out.as_deref(), &table.render())
}
