//! `bopo train`.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use bopo_core::pairs::{FilterMode, PairMode};
use bopo_core::trainer::{
    format_curve, save_checkpoint, with_workers, worker_count, Problem, TrainConfig, Trainer, ValidationSet,
};
use serde_json::json;

use crate::options::{check_config, resolve_loss, RunOpts};
use crate::usage;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CURVE_FILE: &str = "curve.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// jsp, tsp or fjsp; may be omitted when --config is given.
    #[arg(long, required_unless_present = "config")]
    pub problem: Option<Problem>,
    /// Base configuration as JSON, such as the `config` of a manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Solutions rolled out per instance.
    #[arg(long)]
    pub rollout_b: Option<usize>,
    /// Solutions kept by the filter.
    #[arg(long)]
    pub filter_k: Option<usize>,
    /// bopo, bopo_minus, dpo, simpo, sll or reinforce.
    #[arg(long)]
    pub loss: Option<String>,
    /// Temperature (dpo, simpo).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Target reward margin (simpo).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// uniform, random, topk or bottomk.
    #[arg(long)]
    pub filter: Option<FilterMode>,
    /// best_anchored or full_permutation.
    #[arg(long)]
    pub pairing: Option<PairMode>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Print wall-clock seconds in the curve; runs then differ byte-wise.
    #[arg(long)]
    pub record_time: bool,
    #[command(flatten)]
    pub run: RunOpts,
}

fn resolve(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let config: TrainConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing configuration {}", path.display()))?;
            if args.problem.is_some_and(|p| p != config.problem) {
                return usage("--problem disagrees with the configuration file");
            }
            config
        }
        None => TrainConfig::new(args.problem.expect("clap requires a problem without a config")),
    };
    if let Some(b) = args.rollout_b {
        config.rollouts = b;
    }
    if let Some(k) = args.filter_k {
        config.keep = k;
    }
    if let Some(f) = args.filter {
        config.filter = f;
    }
    if let Some(p) = args.pairing {
        config.pairing = p;
    }
    match &args.loss {
        Some(name) => config.loss = resolve_loss(name, args.beta, args.gamma)?,
        None if args.beta.is_some() || args.gamma.is_some() => {
            config.loss = resolve_loss(config.loss.name(), args.beta, args.gamma)?
        }
        None => {}
    }
    args.run.apply(&mut config)?;
    check_config(&config)?;
    Ok(config)
}

pub fn run(args: TrainArgs) -> Result<()> {
    let config = resolve(&args)?;
    let workers = worker_count()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (outcome, validation) = with_workers(workers, || -> Result<_> {
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
        let outcome = Trainer::new(config.clone(), validation.as_ref())?.run(|r| {
            log::info!("step {} instances {} gap {:?}", r.step, r.instances, r.val_gap);
        })?;
        Ok((outcome, validation))
    })??;

    save_checkpoint(&args.out.join(CHECKPOINT_FILE), &config, &outcome.params)?;
    let curve = format_curve(&config, &outcome.records, args.record_time)?;
    fs::write(args.out.join(CURVE_FILE), curve).context("writing the curve")?;
    let last = outcome.records.last().expect("a run records at least step 0");
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "files": { "checkpoint": CHECKPOINT_FILE, "curve": CURVE_FILE },
        "parameters": outcome.params.ids().map(|id| outcome.params.value(id).data().len()).sum::<usize>(),
        "updates": outcome.updates,
        "skipped_steps": outcome.skipped_steps,
        "instances": last.instances,
        "final_val_gap": last.val_gap,
        "validation": validation.as_ref().map(|v| json!({
            "instances": v.len(),
            "reference": v.reference_kind,
        })),
    });
    fs::write(args.out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")
        .context("writing the manifest")?;
    match last.val_gap {
        Some(gap) => println!(
            "trained {} steps on {} instances; final validation gap {gap:.4}%",
            config.total_steps(),
            last.instances
        ),
        None => println!("trained {} steps on {} instances", config.total_steps(), last.instances),
    }
    if outcome.skipped_steps > 0 {
        log::warn!("{} steps had no pairs and were skipped", outcome.skipped_steps);
    }
    Ok(())
}
