//! Multi-resolution loss, the training loop and block preparation.

mod loss;
mod pipeline;
mod trainer;

pub use loss::{bce_from_scores, mrfa_loss, LossWeights, MrfaLoss, LOSS_PRESETS};
pub use pipeline::{label_by_nearest, prepare_cloud_block, prepare_cloud_blocks, BlockSample};
pub use trainer::{
    checkpoint_model, predict, restore_network, EpochRecord, StepStats, TrainConfig, Trainer,
};
