use serde::{Deserialize, Serialize};

use super::loss::{sce_on_logits, wce_on_logits, weighted_sq_error, TaskLoss};
use super::mask::{sample_mask, MaskPlan};
use super::optim::{layer_scale, Adam, OptimConfig, Schedule};
use super::FreezePolicy;
use crate::error::{Error, Result};
use crate::model::VitModel;
use crate::tensor::{RngState, Tape, Tensor, Var};

/// Supervision attached to one fine-tuning input.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Position([f64; 3]),
    Grid { grid: Tensor, snr_db: f64 },
}

/// A patchified input with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub patches: Tensor,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean of the per-batch losses.
    pub loss: f64,
    /// Learning rate at the last update of the epoch.
    pub lr: f64,
    pub steps: usize,
}

/// Optimizer, schedule and step counter of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub adam: Adam,
    pub schedule: Schedule,
    pub step: usize,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(cfg: &OptimConfig, dataset_len: usize) -> Self {
        let steps_per_epoch = dataset_len.div_ceil(cfg.batch_size).max(1);
        Self {
            adam: Adam::new(cfg),
            schedule: cfg.schedule(steps_per_epoch),
            step: 0,
            epoch: 0,
        }
    }
}

/// Runs `build` for every sample of a batch and accumulates parameter
/// gradients in sample order. Work fans out over [`crate::worker_threads`];
/// the reduction order does not depend on the worker count.
fn accumulate<F>(model: &mut VitModel, count: usize, build: F) -> Result<f64>
where
    F: Fn(&VitModel, usize) -> Result<Option<(Tape, Var)>> + Sync,
{
    let threads = crate::worker_threads().min(count).max(1);
    let mut total = 0.0;
    if threads == 1 {
        for i in 0..count {
            let Some((tape, loss)) = build(model, i)? else { continue };
            total += tape.value(loss).data()[0];
            tape.backward(loss, &mut model.params)?;
        }
        return Ok(total);
    }
    let mut start = 0;
    while start < count {
        let end = (start + threads).min(count);
        let shared: &VitModel = model;
        let build = &build;
        let results: Vec<Result<Option<(f64, Vec<(String, Vec<f64>)>)>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (start..end)
                .map(|i| {
                    s.spawn(move || -> Result<Option<(f64, Vec<(String, Vec<f64>)>)>> {
                        let Some((tape, loss)) = build(shared, i)? else { return Ok(None) };
                        let grads = tape.param_gradients(loss)?;
                        Ok(Some((tape.value(loss).data()[0], grads)))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("worker panicked".into()))))
                .collect()
        });
        for r in results {
            let Some((loss, grads)) = r? else { continue };
            total += loss;
            for (name, g) in grads {
                model.params.accumulate_grad(&name, &g)?;
            }
        }
        start = end;
    }
    Ok(total)
}

fn apply_update(model: &mut VitModel, state: &mut TrainState, layer_decay: f64, loss: f64) -> Result<f64> {
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("loss {loss} at step {}", state.step)));
    }
    let lr = state.schedule.lr_at(state.step);
    let blocks = model.config.encoder.blocks;
    state.adam.step(&mut model.params, lr, |name| {
        if layer_decay < 1.0 {
            layer_scale(name, blocks, layer_decay)
        } else {
            1.0
        }
    })?;
    model.params.zero_grad();
    state.step += 1;
    Ok(lr)
}

fn epoch_order(n: usize, rng: &mut RngState) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order
}

/// One pass of masked reconstruction over `data` (patchified inputs).
pub fn pretrain_epoch(
    data: &[Tensor],
    model: &mut VitModel,
    state: &mut TrainState,
    cfg: &OptimConfig,
    rng: &mut RngState,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty pretraining set".into()));
    }
    if !model.parts.decoder {
        return Err(Error::InvalidArgument("pretraining needs a decoder".into()));
    }
    let n = model.config.num_patches();
    let order = epoch_order(data.len(), rng);
    let mut losses = Vec::new();
    let mut lr = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let plans: Vec<MaskPlan> = batch
            .iter()
            .map(|_| sample_mask(n, cfg.mask_ratio, rng))
            .collect::<Result<_>>()?;
        let m = batch.len();
        let loss = accumulate(model, m, |model, i| {
            let patches = &data[batch[i]];
            let plan = &plans[i];
            let mut tape = Tape::new();
            let Some(recon) = model.pretrain_forward(&mut tape, patches, plan)? else {
                return Ok(None);
            };
            let target = masked_rows(patches, &plan.masked);
            let weight = 1.0 / (m * plan.masked.len()) as f64;
            let loss = weighted_sq_error(&mut tape, recon, &target, weight)?;
            Ok(Some((tape, loss)))
        })?;
        lr = apply_update(model, state, 1.0, loss)?;
        losses.push(loss);
    }
    state.epoch += 1;
    Ok(EpochMetrics {
        epoch: state.epoch,
        loss: losses.iter().sum::<f64>() / losses.len() as f64,
        lr,
        steps: losses.len(),
    })
}

fn masked_rows(patches: &Tensor, rows: &[usize]) -> Tensor {
    let w = patches.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * w);
    for &r in rows {
        data.extend_from_slice(patches.row(r));
    }
    Tensor::new(vec![rows.len(), w], data).expect("row selection")
}

/// Per-sample loss of `model` on `ex`, scaled by `weight`.
pub(crate) fn example_loss(model: &VitModel, tape: &mut Tape, ex: &Example, loss: &TaskLoss, weight: f64) -> Result<Var> {
    let pred = model.predict(tape, &ex.patches)?;
    match (loss, &ex.target) {
        (TaskLoss::Sce { theta }, Target::Class(y)) => sce_on_logits(tape, pred, &[*y], *theta, weight),
        (TaskLoss::Wce { beta }, Target::Class(y)) => wce_on_logits(tape, pred, &[*y], beta, weight),
        (TaskLoss::PositionMse, Target::Position(p)) => {
            weighted_sq_error(tape, pred, &Tensor::new(vec![1, 3], p.to_vec())?, weight)
        }
        (TaskLoss::SnrMse { floor }, Target::Grid { grid, snr_db }) => {
            weighted_sq_error(tape, pred, grid, weight * super::snr_weight(*snr_db, *floor))
        }
        (l, t) => Err(Error::InvalidArgument(format!("loss {l:?} cannot supervise target {t:?}"))),
    }
}

/// One supervised pass. Only tensors permitted by `policy` change.
pub fn finetune_epoch(
    data: &[Example],
    model: &mut VitModel,
    policy: &FreezePolicy,
    loss: &TaskLoss,
    state: &mut TrainState,
    cfg: &OptimConfig,
    rng: &mut RngState,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty fine-tuning set".into()));
    }
    if model.task().is_none() {
        return Err(Error::InvalidArgument("fine-tuning needs a task head".into()));
    }
    policy.apply(model)?;
    let order = epoch_order(data.len(), rng);
    let mut losses = Vec::new();
    let mut lr = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let weight = 1.0 / batch.len() as f64;
        let total = accumulate(model, batch.len(), |model, i| {
            let mut tape = Tape::new();
            let l = example_loss(model, &mut tape, &data[batch[i]], loss, weight)?;
            Ok(Some((tape, l)))
        })?;
        lr = apply_update(model, state, cfg.layer_decay, total)?;
        losses.push(total);
    }
    state.epoch += 1;
    Ok(EpochMetrics {
        epoch: state.epoch,
        loss: losses.iter().sum::<f64>() / losses.len() as f64,
        lr,
        steps: losses.len(),
    })
}
