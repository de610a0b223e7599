//! Flags shared by `train` and `sweep`, and their resolution into a
//! training configuration.

use anyhow::Result;
use bopo_core::env::fjsp::Flavor;
use bopo_core::losses::Loss;
use bopo_core::trainer::{EvalMode, ModelConfig, Problem, Shape, TrainConfig};

use crate::usage;

#[derive(clap::Args, Debug, Clone, Default)]
pub struct ModelOpts {
    /// Embedding width for routing; recurrent and query width for scheduling.
    #[arg(long)]
    pub width: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Encoder layers (routing only).
    #[arg(long)]
    pub layers: Option<usize>,
    /// Feed-forward width (routing only); defaults to four times the width.
    #[arg(long)]
    pub ff_width: Option<usize>,
    /// Graph-attention output width (scheduling only).
    #[arg(long)]
    pub gat_width: Option<usize>,
    /// Context projection width (scheduling only).
    #[arg(long)]
    pub context_width: Option<usize>,
}

impl ModelOpts {
    pub fn apply(&self, problem: Problem, model: ModelConfig) -> Result<ModelConfig> {
        match model {
            ModelConfig::Tsp(mut c) => {
                if self.gat_width.is_some() || self.context_width.is_some() {
                    return usage("--gat-width and --context-width apply to scheduling models only");
                }
                if let Some(w) = self.width {
                    c.width = w;
                    c.ff_width = 4 * w;
                }
                c.heads = self.heads.unwrap_or(c.heads);
                c.layers = self.layers.unwrap_or(c.layers);
                c.ff_width = self.ff_width.unwrap_or(c.ff_width);
                Ok(ModelConfig::Tsp(c))
            }
            ModelConfig::Mgl(mut c) => {
                if self.layers.is_some() || self.ff_width.is_some() {
                    return usage(format!("--layers and --ff-width do not apply to {problem} models"));
                }
                c.model_width = self.width.unwrap_or(c.model_width);
                c.heads = self.heads.unwrap_or(c.heads);
                c.gat_width = self.gat_width.unwrap_or(c.gat_width);
                c.context_width = self.context_width.unwrap_or(c.context_width);
                Ok(ModelConfig::Mgl(c))
            }
        }
    }
}

#[derive(clap::Args, Debug, Clone)]
pub struct RunOpts {
    /// Training shapes, comma separated: `20` for routing, `6x6` for scheduling.
    #[arg(long, value_delimiter = ',')]
    pub shapes: Option<Vec<Shape>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Steps per epoch.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Instances per step.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Candidate distribution of generated flexible instances.
    #[arg(long)]
    pub flavor: Option<Flavor>,
    /// Size of the fixed scheduling training set.
    #[arg(long)]
    pub dataset_size: Option<usize>,
    /// Steps between validation records.
    #[arg(long)]
    pub validate_every: Option<usize>,
    /// Validation instances per shape; 0 disables validation.
    #[arg(long)]
    pub val_size: Option<usize>,
    /// Validation decoding: greedy, sample:N, multistart or multistart_aug8.
    #[arg(long)]
    pub val_mode: Option<EvalMode>,
    #[arg(long)]
    pub val_seed: Option<u64>,
    /// Steps between reference-policy refreshes (dpo only).
    #[arg(long)]
    pub ref_refresh: Option<usize>,
    #[command(flatten)]
    pub model: ModelOpts,
}

impl RunOpts {
    pub fn apply(&self, config: &mut TrainConfig) -> Result<()> {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut config.shapes, &self.shapes);
        set(&mut config.epochs, &self.epochs);
        set(&mut config.steps_per_epoch, &self.steps);
        set(&mut config.batch, &self.batch);
        set(&mut config.lr, &self.lr);
        set(&mut config.seed, &self.seed);
        set(&mut config.flavor, &self.flavor);
        set(&mut config.dataset_size, &self.dataset_size);
        set(&mut config.validate_every, &self.validate_every);
        set(&mut config.validation_size, &self.val_size);
        set(&mut config.validation_mode, &self.val_mode);
        set(&mut config.validation_seed, &self.val_seed);
        set(&mut config.reference_refresh, &self.ref_refresh);
        config.model = self.model.apply(config.problem, config.model)?;
        Ok(())
    }
}

/// Loss from its name plus the optional temperature and margin, which are
/// accepted only by the losses that use them.
pub fn resolve_loss(name: &str, beta: Option<f64>, gamma: Option<f64>) -> Result<Loss> {
    let loss: Loss = match name.parse() {
        Ok(l) => l,
        Err(e) => return usage(e.to_string()),
    };
    match loss {
        Loss::Dpo { beta: b } => {
            if gamma.is_some() {
                return usage("--gamma applies to simpo only");
            }
            Ok(Loss::Dpo { beta: beta.unwrap_or(b) })
        }
        Loss::Simpo { beta: b, gamma: g } => Ok(Loss::Simpo {
            beta: beta.unwrap_or(b),
            gamma: gamma.unwrap_or(g),
        }),
        other => {
            if beta.is_some() || gamma.is_some() {
                return usage(format!("--beta and --gamma do not apply to loss {other}"));
            }
            Ok(other)
        }
    }
}

/// Rejects configurations the trainer would refuse, as usage errors.
pub fn check_config(config: &TrainConfig) -> Result<()> {
    match config.check() {
        Ok(()) => Ok(()),
        Err(e) => usage(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_hyperparameters_are_checked_against_the_loss() {
        assert!(resolve_loss("bopo", None, Some(1.0)).is_err());
        assert!(resolve_loss("bopo", Some(0.1), None).is_err());
        assert!(resolve_loss("dpo", None, Some(1.0)).is_err());
        assert_eq!(resolve_loss("dpo", Some(0.5), None).unwrap(), Loss::Dpo { beta: 0.5 });
        assert_eq!(
            resolve_loss("simpo", None, Some(0.5)).unwrap(),
            Loss::Simpo { beta: 2.0, gamma: 0.5 }
        );
        assert!(resolve_loss("nope", None, None).is_err());
    }

    #[test]
    fn model_flags_follow_the_model_kind() {
        let tsp = ModelOpts {
            width: Some(32),
            ..Default::default()
        };
        match tsp.apply(Problem::Tsp, ModelConfig::default_for(Problem::Tsp)).unwrap() {
            ModelConfig::Tsp(c) => assert_eq!((c.width, c.ff_width), (32, 128)),
            other => panic!("unexpected {other:?}"),
        }
        let bad = ModelOpts {
            layers: Some(2),
            ..Default::default()
        };
        assert!(bad.apply(Problem::Jsp, ModelConfig::default_for(Problem::Jsp)).is_err());
    }
}
