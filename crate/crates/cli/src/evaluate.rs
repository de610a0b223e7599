//! `bopo eval`, `bopo pdr` and `bopo oracle`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use bopo_core::env::jsp::DispatchRule;
use bopo_core::env::tsp::Metric;
use bopo_core::gap_percent;
use bopo_core::trainer::agent::DISPATCH_RULES;
use bopo_core::trainer::{
    load_checkpoint, solve_all, with_workers, worker_count, EvalMode, Instance, Problem, ValidationSet,
};
use bopo_core::Error;

use crate::bench::{load_refs, Named, SourceOpts};
use crate::table::{num, Table};
use crate::{emit, usage};

pub const EVAL_HEADER: [&str; 5] = ["name", "objective", "reference", "gap_percent", "seconds"];
pub const NO_REF: &str = "no-ref";

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Greedy,
    Sample,
    Multistart,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricArg {
    /// Exact Euclidean distances.
    Euclidean,
    /// Distances rounded to the nearest integer.
    Tsplib,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Tsplib => Metric::TsplibRounded,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Trained checkpoint; omit when evaluating a dispatching rule.
    #[arg(long, required_unless_present = "pdr", conflicts_with = "pdr")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a dispatching rule (spt, mor, mwr) instead of a model.
    #[arg(long)]
    pub pdr: Option<DispatchRule>,
    #[command(flatten)]
    pub source: SourceOpts,
    /// Decoding of the model.
    #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
    pub mode: ModeArg,
    /// Samples per instance in sample mode.
    #[arg(long)]
    pub num_samples: Option<usize>,
    /// Multi-start decoding on the eight symmetric images of each routing instance.
    #[arg(long)]
    pub aug8: bool,
    /// Seed of the sampling streams.
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
    /// Reference table with `name,optimum` columns.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Distance convention for routing objectives.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Print per-instance wall time; tables then differ between runs.
    #[arg(long)]
    pub record_time: bool,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn eval_mode(args: &EvalArgs, problem: Problem) -> Result<EvalMode> {
    if args.num_samples.is_some() && args.mode != ModeArg::Sample {
        return usage("--num-samples applies to --mode sample only");
    }
    if args.aug8 && problem != Problem::Tsp {
        return usage("--aug8 applies to routing instances only");
    }
    Ok(match (args.mode, args.aug8) {
        (ModeArg::Sample, true) => return usage("--aug8 combines with greedy or multistart decoding"),
        (ModeArg::Sample, false) => match args.num_samples.unwrap_or(128) {
            0 => return usage("--num-samples must be at least 1"),
            n => EvalMode::Sample(n),
        },
        (_, true) => EvalMode::MultiStartAug8,
        (ModeArg::Greedy, false) => EvalMode::Greedy,
        (ModeArg::Multistart, false) => EvalMode::MultiStart,
    })
}

/// Per-instance references and a label naming where they came from. Files
/// on disk have references only through `--refs`; generated sets fall back
/// to the built-in oracle.
fn references(named: &[Named], refs: Option<&Path>, generated: bool, seed: u64) -> Result<(Vec<Option<f64>>, String)> {
    if let Some(path) = refs {
        let table = load_refs(path)?;
        let values = named.iter().map(|n| table.get(&n.name).copied()).collect();
        return Ok((values, format!("file {}", path.display())));
    }
    if generated {
        let set = ValidationSet::with_references(named.iter().map(|n| n.instance.clone()).collect(), seed)?;
        return Ok((set.references, set.reference_kind));
    }
    Ok((vec![None; named.len()], "none".to_string()))
}

fn rescore(inst: &Instance, actions: &[usize], objective: f64, metric: Metric) -> Result<f64> {
    match (inst, metric) {
        (Instance::Tsp(tsp), Metric::TsplibRounded) => Ok(tsp.tour_length_with(actions, metric)?),
        _ => Ok(objective),
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.into_iter().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Gap table: one row per instance and a final `mean` row whose reference
/// and gap average over instances that have a reference.
pub fn gap_table(
    meta: Vec<(String, String)>,
    named: &[Named],
    results: &[(f64, f64)],
    refs: &[Option<f64>],
    record_time: bool,
) -> Result<Table> {
    let mut table = Table::new(&EVAL_HEADER);
    table.meta = meta;
    let mut gaps = Vec::new();
    for ((n, &(objective, seconds)), reference) in named.iter().zip(results).zip(refs) {
        let gap = reference.map(|r| gap_percent(objective, r)).transpose()?;
        gaps.extend(gap);
        table.push(vec![
            n.name.clone(),
            objective.to_string(),
            reference.map_or_else(|| NO_REF.to_string(), |r| r.to_string()),
            num(gap),
            num(record_time.then_some(seconds)),
        ]);
    }
    let mean_ref = mean(refs.iter().flatten().copied());
    table.push(vec![
        "mean".to_string(),
        num(mean(results.iter().map(|r| r.0))),
        mean_ref.map_or_else(|| NO_REF.to_string(), |r| r.to_string()),
        num(mean(gaps.iter().copied())),
        num(record_time.then(|| mean(results.iter().map(|r| r.1)).unwrap_or(0.0))),
    ]);
    Ok(table)
}

pub fn run_eval(args: EvalArgs) -> Result<()> {
    let metric_given = args.metric;
    let metric: Metric = metric_given.map_or(Metric::Euclidean, Into::into);
    let workers = worker_count()?;
    let mut meta = Vec::new();
    let mut push = |k: &str, v: String| meta.push((k.to_string(), v));

    let (problem, checkpoint) = match (&args.checkpoint, args.pdr) {
        (Some(path), _) => {
            let ckpt = load_checkpoint(path)?;
            if let Some(p) = args.source.problem.filter(|&p| p != ckpt.config.problem) {
                return Err(Error::Checkpoint(format!(
                    "checkpoint {} holds a {} model, not {p}",
                    path.display(),
                    ckpt.config.problem
                ))
                .into());
            }
            (ckpt.config.problem, Some(ckpt))
        }
        (None, Some(_)) => match args.source.problem {
            Some(Problem::Tsp) => return usage("dispatching rules apply to jsp and fjsp"),
            Some(p) => (p, None),
            None => return usage("--pdr needs --problem"),
        },
        (None, None) => return usage("either --checkpoint or --pdr is required"),
    };
    if metric_given.is_some() && problem != Problem::Tsp {
        return usage("--metric applies to routing instances only");
    }
    push("problem", problem.to_string());
    let mode = match args.pdr {
        Some(rule) => {
            if args.mode != ModeArg::Greedy || args.num_samples.is_some() || args.aug8 {
                return usage("--mode, --num-samples and --aug8 apply to model evaluation only");
            }
            push("solver", format!("pdr {rule}"));
            None
        }
        None => {
            let mode = eval_mode(&args, problem)?;
            push("solver", "checkpoint".to_string());
            push("mode", mode.to_string());
            if matches!(mode, EvalMode::Sample(_)) {
                push("sample_seed", args.sample_seed.to_string());
            }
            Some(mode)
        }
    };
    if problem == Problem::Tsp {
        push("metric", metric.name().to_string());
    }

    let named = args.source.load(problem)?;
    let (refs, ref_label) = with_workers(workers, || {
        references(&named, args.refs.as_deref(), args.source.is_generated(), args.source.instance_seed)
    })??;
    push("reference", ref_label);
    push("instances", named.len().to_string());
    push("no_ref", refs.iter().filter(|r| r.is_none()).count().to_string());

    let instances: Vec<Instance> = named.iter().map(|n| n.instance.clone()).collect();
    let results: Vec<(f64, f64)> = match (checkpoint, args.pdr) {
        (Some(ckpt), _) => {
            let mode = mode.expect("model evaluation has a mode");
            let solved =
                with_workers(workers, || solve_all(&ckpt.agent, &ckpt.params, &instances, mode, args.sample_seed))??;
            solved
                .iter()
                .zip(&instances)
                .map(|((sol, secs), inst)| Ok((rescore(inst, &sol.actions, sol.objective, metric)?, *secs)))
                .collect::<Result<_>>()?
        }
        (None, Some(rule)) => instances
            .iter()
            .map(|inst| {
                let started = Instant::now();
                let objective = inst.dispatch(rule)?;
                Ok((objective, started.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()?,
        (None, None) => unreachable!("checked above"),
    };
    let table = gap_table(meta, &named, &results, &refs, args.record_time)?;
    emit(args.out.as_deref(), &table.render())
}

#[derive(clap::Args, Debug)]
pub struct PdrArgs {
    #[command(flatten)]
    pub source: SourceOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Makespan of every rule per instance, with the best rule.
pub fn run_pdr(args: PdrArgs) -> Result<()> {
    let problem = match args.source.problem {
        Some(Problem::Tsp) => return usage("dispatching rules apply to jsp and fjsp"),
        Some(p) => p,
        None => return usage("--problem is required"),
    };
    let named = args.source.load(problem)?;
    let mut header = vec!["name".to_string()];
    header.extend(DISPATCH_RULES.iter().map(|r| r.to_string()));
    header.extend(["best".to_string(), "best_rule".to_string()]);
    let mut table = Table {
        meta: vec![("problem".into(), problem.to_string())],
        header,
        rows: Vec::new(),
    };
    for n in &named {
        let values: Vec<f64> = DISPATCH_RULES
            .iter()
            .map(|&r| n.instance.dispatch(r))
            .collect::<Result<_, _>>()?;
        let (best_idx, best) = values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let mut row = vec![n.name.clone()];
        row.extend(values.iter().map(|v| v.to_string()));
        row.extend([best.to_string(), DISPATCH_RULES[best_idx].to_string()]);
        table.push(row);
    }
    emit(args.out.as_deref(), &table.render())
}

#[derive(clap::Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub source: SourceOpts,
    /// Seed of randomised restarts in the large-instance heuristic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reference table in the format `--refs` reads: exact optima for routing
/// up to 20 nodes, 2-opt above, best dispatching rule for scheduling.
pub fn run_oracle(args: OracleArgs) -> Result<()> {
    let Some(problem) = args.source.problem else {
        return usage("--problem is required");
    };
    let named = args.source.load(problem)?;
    let set = with_workers(worker_count()?, || {
        ValidationSet::with_references(named.iter().map(|n| n.instance.clone()).collect(), args.seed)
    })??;
    let mut table = Table::new(&["name", "optimum", "source"]);
    table.meta("problem", problem);
    table.meta("method", &set.reference_kind);
    for (n, r) in named.iter().zip(&set.references) {
        table.push(vec![n.name.clone(), num(*r), n.instance.reference_method().to_string()]);
    }
    emit(args.out.as_deref(), &table.render())
}
