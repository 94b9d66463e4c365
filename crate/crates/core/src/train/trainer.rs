//! The optimisation loop, checkpoint integration and inference.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{mrfa_loss, LossWeights};
use crate::error::{Error, Result};
use crate::metrics::{per_class_metrics, ConfusionMatrix};
use crate::model::{ModelConfig, Network, PreparedBlock};
use crate::tensor::{
    adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Checkpoint, LossReduction, ParamStore, Tape,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub loss_reduction: LossReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 16,
            lr: 0.002,
            weight_decay: 0.01,
            seed: 0,
            loss_weights: LossWeights::default(),
            loss_reduction: LossReduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, levels: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("lr must be positive and weight_decay nonnegative"));
        }
        self.loss_weights.validate()?;
        if self.loss_weights.0.len() != levels {
            return Err(Error::invalid(format!(
                "expected {levels} loss weights, got {}",
                self.loss_weights.0.len()
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// One line of the metrics log. Loss and scores are measured on the
/// forward passes of the epoch, before each batch's update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub per_level_losses: Vec<f64>,
    pub oa: f64,
    pub mf1: f64,
    pub miou: f64,
}

/// Loss and predictions of one optimizer step.
#[derive(Clone, Debug)]
pub struct StepStats {
    pub total_loss: f64,
    pub per_level_losses: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    train: TrainConfig,
    epochs_done: usize,
}

struct BlockPass {
    grads: Vec<Vec<f32>>,
    total: f64,
    levels: Vec<f64>,
    pred: Vec<usize>,
}

/// Owns the network, its parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub network: Network,
    pub params: ParamStore<f32>,
    pub optimizer: AdamState<f32>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate(model.levels())?;
        let mut params = ParamStore::new();
        let network = Network::new(model, &mut params, config.seed)?;
        let optimizer = AdamState::new(config.adam(), &params);
        Ok(Self {
            network,
            params,
            optimizer,
            config,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &ModelConfig {
        &self.network.config
    }

    fn block_pass(&self, block: &PreparedBlock<f32>, batch_id: usize) -> Result<BlockPass> {
        let labels = block.labels().ok_or_else(|| Error::invalid("labels required for training"))?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let logits = self.network.forward(&mut tape, &vars, block)?;
        let pred = tape.value(logits[0]).argmax_rows();
        let loss = mrfa_loss(
            &mut tape,
            &logits,
            &labels,
            &self.config.loss_weights,
            self.config.loss_reduction,
        )
        .map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} in batch {batch_id}")),
            e => e,
        })?;
        let (total, levels) = loss.values(&tape);
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("loss in batch {batch_id}")));
        }
        let mut g = tape.backward(loss.total)?;
        let grads = vars.vars().iter().map(|&v| g.take(v).expect("parameter gradient")).collect();
        Ok(BlockPass {
            grads,
            total,
            levels,
            pred,
        })
    }

    /// Forward and backward on every block of the batch (in parallel, merged
    /// in batch order), then one Adam update with the batch-mean gradient.
    pub fn step(&mut self, batch: &[&PreparedBlock<f32>], batch_id: usize) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let passes = batch
            .par_iter()
            .map(|b| self.block_pass(b, batch_id))
            .collect::<Result<Vec<_>>>()?;
        let inv = 1.0 / batch.len() as f32;
        let mut grads = passes[0].grads.clone();
        for p in &passes[1..] {
            for (acc, g) in grads.iter_mut().zip(&p.grads) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        if batch.len() > 1 {
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
        }
        adam_step(&mut self.params, &grads, &mut self.optimizer)?;

        let nb = batch.len() as f64;
        let mut confusion = ConfusionMatrix::new(self.model().num_classes);
        let mut levels = vec![0.0; passes[0].levels.len()];
        for (p, b) in passes.iter().zip(batch) {
            confusion.accumulate(b.labels().unwrap()[0], &p.pred)?;
            for (l, v) in levels.iter_mut().zip(&p.levels) {
                *l += v / nb;
            }
        }
        Ok(StepStats {
            total_loss: passes.iter().map(|p| p.total).sum::<f64>() / nb,
            per_level_losses: levels,
            confusion,
        })
    }

    /// Batch order of an epoch, a function of the seed and epoch only.
    pub fn epoch_order(&self, epoch: usize, blocks: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..blocks).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn run_epoch(&mut self, blocks: &[PreparedBlock<f32>]) -> Result<EpochRecord> {
        if blocks.is_empty() {
            return Err(Error::invalid("no training blocks"));
        }
        let epoch = self.epoch + 1;
        let order = self.epoch_order(epoch, blocks.len());
        let mut confusion = ConfusionMatrix::new(self.model().num_classes);
        let mut total = 0.0;
        let mut levels = vec![0.0; self.model().levels()];
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&PreparedBlock<f32>> = chunk.iter().map(|&i| &blocks[i]).collect();
            let stats = self.step(&batch, b)?;
            let w = chunk.len() as f64 / blocks.len() as f64;
            total += w * stats.total_loss;
            for (l, v) in levels.iter_mut().zip(&stats.per_level_losses) {
                *l += w * v;
            }
            confusion.merge(&stats.confusion)?;
        }
        self.epoch = epoch;
        let report = per_class_metrics(&confusion, None);
        Ok(EpochRecord {
            epoch,
            total_loss: total,
            per_level_losses: levels,
            oa: report.oa,
            mf1: report.mf1,
            miou: report.miou,
        })
    }

    /// Runs the remaining epochs up to `config.epochs`, calling `on_epoch`
    /// after each.
    pub fn train(
        &mut self,
        blocks: &[PreparedBlock<f32>],
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let rec = self.run_epoch(blocks)?;
            on_epoch(self, &rec)?;
            log.push(rec);
        }
        Ok(log)
    }

    /// Trains, rewriting the checkpoint and appending a JSON line to the
    /// metrics log after every epoch.
    pub fn train_to_files(
        &mut self,
        blocks: &[PreparedBlock<f32>],
        checkpoint: &Path,
        metrics_log: &Path,
    ) -> Result<Vec<EpochRecord>> {
        if self.epoch == 0 {
            std::fs::write(metrics_log, "")?;
        }
        self.train(blocks, |t, rec| {
            save_checkpoint(checkpoint, &t.checkpoint())?;
            let mut f = std::fs::OpenOptions::new().append(true).create(true).open(metrics_log)?;
            writeln!(f, "{}", serde_json::to_string(rec)?)?;
            Ok(())
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        let meta = CheckpointMeta {
            model: self.model().clone(),
            train: self.config.clone(),
            epochs_done: self.epoch,
        };
        Checkpoint {
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
            meta: serde_json::to_value(meta).expect("metadata serializes"),
        }
    }

    /// Restores a trainer. `epochs`, when given, replaces the stored epoch
    /// budget so training can be extended.
    pub fn from_checkpoint(ckpt: Checkpoint<f32>, epochs: Option<usize>) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("missing training metadata: {e}")))?;
        let (network, params) = restore_network(&ckpt, Some(&meta.model))?;
        let mut config = meta.train;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let optimizer = ckpt
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        Ok(Self {
            network,
            params,
            optimizer,
            config,
            epoch: meta.epochs_done,
        })
    }

    pub fn load(path: impl AsRef<Path>, epochs: Option<usize>) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(path)?, epochs)
    }
}

/// The architecture recorded in a checkpoint.
pub fn checkpoint_model(ckpt: &Checkpoint<f32>) -> Result<ModelConfig> {
    let model = ckpt
        .meta
        .get("model")
        .ok_or_else(|| Error::Checkpoint("checkpoint metadata has no model config".into()))?;
    serde_json::from_value(model.clone()).map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))
}

/// Rebuilds the network for a checkpoint and checks that every parameter
/// name and shape matches. With `expected`, the stored architecture must
/// also equal it.
pub fn restore_network(ckpt: &Checkpoint<f32>, expected: Option<&ModelConfig>) -> Result<(Network, ParamStore<f32>)> {
    let stored = checkpoint_model(ckpt)?;
    if let Some(e) = expected {
        if *e != stored {
            return Err(Error::Checkpoint(format!(
                "checkpoint/architecture mismatch: checkpoint has {}, config has {}",
                serde_json::to_string(&stored)?,
                serde_json::to_string(e)?
            )));
        }
    }
    let mut params = ParamStore::new();
    let network = Network::new(stored, &mut params, 0)?;
    params
        .assign(&ckpt.params)
        .map_err(|e| Error::Checkpoint(format!("checkpoint/architecture mismatch: {e}")))?;
    Ok((network, params))
}

/// Full-resolution class ids for a prepared block.
pub fn predict(ckpt: &Checkpoint<f32>, expected: Option<&ModelConfig>, block: &PreparedBlock<f32>) -> Result<Vec<usize>> {
    let (network, params) = restore_network(ckpt, expected)?;
    network.predict(&params, block)
}
