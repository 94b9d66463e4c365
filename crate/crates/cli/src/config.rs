//! Experiment configuration: a JSON file merged with command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rffs::data::DEFAULT_N_TARGET;
use rffs::graph::HierarchyConfig;
use rffs::layers::{Aggregation, DAGFusionConfig};
use rffs::model::ModelConfig;
use rffs::tensor::LossReduction;
use rffs::train::{LossWeights, TrainConfig};
use serde::{Deserialize, Serialize};

/// Every key a run consumes. Missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: Option<u64>,
    pub loss_weights: LossWeights,
    pub loss_reduction: LossReduction,
    pub mrfa: bool,
    pub n_target: usize,
    pub num_classes: Option<usize>,
    pub class_names: Option<Vec<String>>,
    /// Column schema of the data files, e.g. `"x y z intensity label"`.
    pub columns: Option<String>,
    pub k: usize,
    pub ratios: Vec<usize>,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub delta: usize,
    pub fusion_k: usize,
    pub branch_channels: usize,
    pub fusion_channels: usize,
    pub dense: bool,
    pub aggregation: Aggregation,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::new(3, 2);
        let train = TrainConfig::default();
        Self {
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            weight_decay: train.weight_decay,
            seed: None,
            loss_weights: train.loss_weights,
            loss_reduction: train.loss_reduction,
            mrfa: true,
            n_target: DEFAULT_N_TARGET,
            num_classes: None,
            class_names: None,
            columns: None,
            k: model.hierarchy.k,
            ratios: model.hierarchy.ratios,
            encoder_channels: model.encoder_channels,
            decoder_channels: model.decoder_channels,
            dilations: model.fusion.dilation_rates,
            delta: model.fusion.step,
            fusion_k: model.fusion.k,
            branch_channels: model.fusion.branch_channels,
            fusion_channels: model.fusion.out_channels,
            dense: model.fusion.dense_connections,
            aggregation: model.fusion.aggregation,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn levels(&self) -> usize {
        self.ratios.len() + 1
    }

    /// Seed precedence: explicit value, then `RFFS_SEED`, then 0.
    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("RFFS_SEED") {
            Ok(v) => v.trim().parse().with_context(|| format!("RFFS_SEED={v:?} is not an integer")),
            Err(_) => Ok(0),
        }
    }

    pub fn model_config(&self, in_channels: usize, num_classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            in_channels,
            num_classes,
            hierarchy: HierarchyConfig {
                k: self.k,
                ratios: self.ratios.clone(),
                seed,
            },
            encoder_channels: self.encoder_channels.clone(),
            fusion: DAGFusionConfig {
                dilation_rates: self.dilations.clone(),
                branch_channels: self.branch_channels,
                dense_connections: self.dense,
                aggregation: self.aggregation,
                k: self.fusion_k,
                step: self.delta,
                out_channels: self.fusion_channels,
            },
            decoder_channels: self.decoder_channels.clone(),
        }
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let levels = self.levels();
        if self.loss_weights.0.len() != levels {
            bail!(
                "loss weights must have exactly {levels} values (one per level), got {}",
                self.loss_weights.0.len()
            );
        }
        let loss_weights = if self.mrfa {
            self.loss_weights.clone()
        } else {
            LossWeights::finest_only(levels)
        };
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            seed,
            loss_weights,
            loss_reduction: self.loss_reduction,
        })
    }
}

/// Parses `--loss-weights`: a preset name or exactly `levels` numbers.
pub fn parse_loss_weights(s: &str, levels: usize) -> Result<LossWeights> {
    if let Some(p) = LossWeights::preset(s) {
        if p.0.len() != levels {
            bail!("preset '{s}' has {} values, expected {levels}", p.0.len());
        }
        return Ok(p);
    }
    let count = s.split(',').count();
    if count != levels {
        bail!("--loss-weights expects exactly {levels} comma-separated values (λ0..λ{}), got {count}: '{s}'", levels - 1);
    }
    Ok(s.parse::<LossWeights>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.lr, c.weight_decay, c.batch_size), (0.002, 0.01, 16));
        assert_eq!((c.k, c.delta, c.n_target), (32, 4, 4096));
        assert_eq!(c.dilations, [1, 2, 4, 8]);
        assert_eq!(c.loss_weights.0, [1.0, 0.3, 0.3, 0.3]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"epochs": 3, "learning_rate": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let ok: RunConfig = serde_json::from_str(r#"{"epochs": 3, "aggregation": "add"}"#).unwrap();
        assert_eq!(ok.epochs, 3);
        assert_eq!(ok.aggregation, Aggregation::Add);
    }

    #[test]
    fn no_mrfa_supervises_finest_only() {
        let c = RunConfig {
            mrfa: false,
            ..RunConfig::default()
        };
        assert_eq!(c.train_config(0).unwrap().loss_weights.0, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn loss_weight_count_checked() {
        let err = parse_loss_weights("1,0.5", 4).unwrap_err().to_string();
        assert!(err.contains("exactly 4"), "{err}");
        assert_eq!(parse_loss_weights("1,0,0,0.5", 4).unwrap().0, [1.0, 0.0, 0.0, 0.5]);
        assert_eq!(parse_loss_weights("lasdu", 4).unwrap().0.len(), 4);
    }
}
