//! Masked pretraining, supervised fine-tuning and their building blocks.

mod freeze;
mod loss;
mod mask;
mod optim;
mod trainer;

pub use freeze::{shared_fraction, FreezePolicy};
pub use loss::{
    class_weights, loss_mse_position, loss_sce, loss_snr_mse, loss_wce, masked_reconstruction_loss, mwm_loss, sce_on_logits, snr_weight,
    snr_weight_raw, softmax, wce_on_logits, weighted_sq_error, TaskLoss, PROB_FLOOR, SNR_WEIGHT_FLOOR,
};
pub use mask::{masked_count, sample_mask, MaskPlan};
pub use optim::{is_decayed, layer_id, layer_scale, Adam, Moments, OptimConfig, Schedule};
pub use trainer::{finetune_epoch, pretrain_epoch, EpochMetrics, Example, Target, TrainState};
