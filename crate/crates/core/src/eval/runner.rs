//! Stage orchestration: data, training loops, checkpoints and reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointExtras};
use super::config::{ExperimentConfig, Generator, Split, Stage};
use super::data::{
    chanest_baselines, load_samples, select, split_indices, to_examples, STREAM_INIT, STREAM_TRAIN,
};
use super::metrics::{
    argmax_rows, classification_metrics, convergence_epoch, grid_mse, mse_vs_snr, positioning_metrics,
    ClassificationReport, MseTable, PositioningReport,
};
use crate::error::{Error, Result};
use crate::model::{Components, Task, VitModel};
use crate::signal::{write_archive, FittedPipeline, GridSample, Pipeline};
use crate::tensor::{RngState, Tensor};
use crate::train::{finetune_epoch, pretrain_epoch, shared_fraction, EpochMetrics, Example, FreezePolicy, Target, TrainState};

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_metric: Option<f64>,
}

/// Scores of one model on one set of examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metric: String,
    pub value: f64,
    pub higher_is_better: bool,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positioning: Option<PositioningReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_table: Option<MseTable>,
    /// Lowest SNR bin where LS beats the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossover_snr_db: Option<f64>,
    /// Current value minus the value stored in the checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reproduced_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub convergence_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_eval: Option<Evaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub total_params: usize,
    pub trainable_params: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub stage: Stage,
    pub seed: u64,
    #[serde(default)]
    pub runs: Vec<RunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Evaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive: Option<PathBuf>,
    pub samples: usize,
}

/// Process exit status for a failed run: 2 for configuration problems,
/// 3 for numeric divergence, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnknownParameter(_) | Error::CheckpointShape { .. } => 2,
        Error::Diverged(_) | Error::NonFinite(_) => 3,
        _ => 1,
    }
}

/// Validates `cfg`, runs its stage and writes every artifact under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricReport> {
    cfg.validate()?;
    create_dir(&cfg.out_dir)?;
    let resolved = cfg.out_dir.join("config.toml");
    fs::write(&resolved, cfg.to_toml_string()?).map_err(|e| Error::io(&resolved, e))?;
    let report = match cfg.stage {
        Stage::Pretrain => run_pretrain(cfg)?,
        Stage::Finetune => run_finetune(cfg)?,
        Stage::Evaluate => run_evaluate(cfg)?,
        Stage::Simulate => run_simulate(cfg)?,
    };
    let path = cfg.out_dir.join(REPORT_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn with_last_good(err: Error, last: &Option<PathBuf>) -> Error {
    let where_ = last.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string());
    match err {
        Error::Diverged(m) | Error::NonFinite(m) => Error::Diverged(format!("{m}; last good checkpoint: {where_}")),
        other => other,
    }
}

struct MetricsLog {
    file: fs::File,
    path: PathBuf,
}

impl MetricsLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { file, path })
    }

    fn push(&mut self, rec: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(rec)?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

fn write_epochs_csv(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "lr", "steps", "val_metric"])?;
    for e in epochs {
        w.write_record([
            e.epoch.to_string(),
            e.loss.to_string(),
            e.lr.to_string(),
            e.steps.to_string(),
            e.val_metric.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn record(m: &EpochMetrics, val_metric: Option<f64>) -> EpochRecord {
    EpochRecord {
        epoch: m.epoch,
        loss: m.loss,
        lr: m.lr,
        steps: m.steps,
        val_metric,
    }
}

fn checkpoint_due(epoch: usize, every: usize, last: usize) -> bool {
    epoch % every == 0 || epoch == last
}

fn run_pretrain(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let (samples, _) = load_samples(&cfg.data, cfg.seed)?;
    let pipeline = Pipeline::pretrain(cfg.model.image_size).fit(&samples)?;
    let rng = RngState::new(cfg.seed);
    let mut model = VitModel::new(cfg.model.clone(), &mut rng.split(STREAM_INIT))?;
    let data: Vec<Tensor> = pipeline
        .apply_all(&samples)?
        .iter()
        .map(|s| {
            if s.channels() != cfg.model.channels {
                return Err(Error::Config(format!(
                    "samples have {} channels, model expects {}",
                    s.channels(),
                    cfg.model.channels
                )));
            }
            Ok(model.patchify(&s.data)?.patches)
        })
        .collect::<Result<_>>()?;
    let mut state = TrainState::new(&cfg.optim, data.len());
    let mut train_rng = rng.split(STREAM_TRAIN);
    let mut log = MetricsLog::create(cfg.out_dir.join(METRICS_FILE))?;
    let ckpt_root = cfg.out_dir.join("checkpoints");
    let mut last_good: Option<PathBuf> = None;
    let mut epochs = Vec::new();
    for epoch in 1..=cfg.optim.epochs {
        let m = pretrain_epoch(&data, &mut model, &mut state, &cfg.optim, &mut train_rng)
            .map_err(|e| with_last_good(e, &last_good))?;
        let rec = record(&m, None);
        log.push(&rec)?;
        log::info!("pretrain epoch {epoch}: loss {:.6e}", m.loss);
        epochs.push(rec);
        if checkpoint_due(epoch, cfg.checkpoint_every, cfg.optim.epochs) {
            let dir = ckpt_root.join(format!("epoch-{epoch:04}"));
            save_checkpoint(&dir, &model, CheckpointExtras {
                adam: Some(&state.adam),
                epoch,
                step: state.step,
                pipeline: Some(&pipeline),
                metrics: Some(serde_json::json!({ "metric": "train_loss", "value": m.loss })),
            })?;
            last_good = Some(dir);
        }
    }
    write_epochs_csv(&cfg.out_dir.join("epochs.csv"), &epochs)?;
    let losses: Vec<f64> = epochs.iter().map(|e| e.loss).collect();
    let run = RunReport {
        seed: cfg.seed,
        convergence_epoch: convergence_epoch(&losses, false),
        epochs,
        final_eval: None,
        checkpoint: last_good,
        total_params: model.params.total(),
        trainable_params: model.params.trainable(),
        shared_fraction: None,
    };
    Ok(MetricReport {
        stage: Stage::Pretrain,
        seed: cfg.seed,
        summary: losses.last().map(|&l| Summary {
            metric: "train_loss".into(),
            mean: l,
            std: 0.0,
            values: vec![l],
        }),
        runs: vec![run],
        evaluation: None,
        archive: None,
        samples: samples.len(),
    })
}

fn pipeline_for(task: Task, image_size: usize) -> Pipeline {
    match task {
        Task::Chanest { .. } => Pipeline::chanest(image_size),
        _ => Pipeline::finetune(image_size),
    }
}

/// Fine-tuning model: the checkpoint's encoder when given, otherwise a fresh one.
fn finetune_model(cfg: &ExperimentConfig, rng: &mut RngState) -> Result<VitModel> {
    let task = cfg.finetune.task;
    let lora = match &cfg.finetune.policy {
        FreezePolicy::Lora { lora } => Some(*lora),
        _ => None,
    };
    match &cfg.finetune.init_checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.meta.parts.task.is_some() || ck.meta.parts.lora.is_some() {
                return Err(Error::Config(format!(
                    "{} is a fine-tuned checkpoint, expected a pretrained backbone",
                    path.display()
                )));
            }
            if ck.meta.model != cfg.model {
                log::warn!("using the architecture stored in {}", path.display());
            }
            ck.model()?.into_finetune(task, lora, rng)
        }
        None => {
            let parts = Components {
                decoder: false,
                lora,
                task: Some(task),
            };
            VitModel::with_parts(cfg.model.clone(), parts, rng)
        }
    }
}

fn run_finetune(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let (samples, _) = load_samples(&cfg.data, cfg.seed)?;
    let (train_idx, val_idx) = split_indices(samples.len(), cfg.data.val_fraction, cfg.seed);
    let train_raw = select(&samples, &train_idx);
    let val_raw = select(&samples, &val_idx);
    let task = cfg.finetune.task;
    let mut runs = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let seed = cfg.seed + r as u64;
        let rng = RngState::new(seed);
        let mut model = finetune_model(cfg, &mut rng.split(STREAM_INIT))?;
        let pipeline = pipeline_for(task, model.config.image_size).fit(&train_raw)?;
        let train = to_examples(&pipeline.apply_all(&train_raw)?, &model, task)?;
        let val = to_examples(&pipeline.apply_all(&val_raw)?, &model, task)?;
        cfg.finetune.policy.apply(&mut model)?;
        let run_dir = cfg.out_dir.join(format!("run{r}"));
        create_dir(&run_dir)?;
        let mut log = MetricsLog::create(run_dir.join(METRICS_FILE))?;
        let mut state = TrainState::new(&cfg.optim, train.len());
        let mut train_rng = rng.split(STREAM_TRAIN);
        let mut last_good: Option<PathBuf> = None;
        let mut epochs = Vec::new();
        let mut final_eval = None;
        for epoch in 1..=cfg.optim.epochs {
            let m = finetune_epoch(
                &train,
                &mut model,
                &cfg.finetune.policy,
                &cfg.finetune.loss,
                &mut state,
                &cfg.optim,
                &mut train_rng,
            )
            .map_err(|e| with_last_good(e, &last_good))?;
            let (ev, outputs) = evaluate_examples(&model, &val)?;
            let rec = record(&m, Some(ev.value));
            log.push(&rec)?;
            log::info!("run {r} epoch {epoch}: loss {:.6e}, {} {:.6}", m.loss, ev.metric, ev.value);
            epochs.push(rec);
            if checkpoint_due(epoch, cfg.checkpoint_every, cfg.optim.epochs) {
                let dir = run_dir.join("checkpoints").join(format!("epoch-{epoch:04}"));
                save_checkpoint(&dir, &model, CheckpointExtras {
                    adam: Some(&state.adam),
                    epoch,
                    step: state.step,
                    pipeline: Some(&pipeline),
                    metrics: Some(serde_json::json!({ "metric": ev.metric, "value": ev.value })),
                })?;
                last_good = Some(dir);
            }
            if epoch == cfg.optim.epochs {
                if cfg.dump_preds {
                    dump_predictions(&run_dir.join("predictions.csv"), &val_raw, &val, &outputs)?;
                }
                write_eval_tables(&run_dir, &ev)?;
                final_eval = Some(ev);
            }
        }
        write_epochs_csv(&run_dir.join("epochs.csv"), &epochs)?;
        let higher = final_eval.as_ref().is_some_and(|e| e.higher_is_better);
        let vals: Vec<f64> = epochs.iter().filter_map(|e| e.val_metric).collect();
        runs.push(RunReport {
            seed,
            convergence_epoch: convergence_epoch(&vals, higher),
            epochs,
            final_eval,
            checkpoint: last_good,
            total_params: model.params.total(),
            trainable_params: model.params.trainable(),
            shared_fraction: Some(shared_fraction(&model.params)),
        });
    }
    let summary = summarize(&runs);
    Ok(MetricReport {
        stage: Stage::Finetune,
        seed: cfg.seed,
        runs,
        summary,
        evaluation: None,
        archive: None,
        samples: samples.len(),
    })
}

fn summarize(runs: &[RunReport]) -> Option<Summary> {
    let evals: Vec<&Evaluation> = runs.iter().filter_map(|r| r.final_eval.as_ref()).collect();
    let first = evals.first()?;
    let values: Vec<f64> = evals.iter().map(|e| e.value).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Some(Summary {
        metric: first.metric.clone(),
        mean,
        std,
        values,
    })
}

/// Scores `model` on `examples` and returns the raw outputs in example order.
pub fn evaluate_examples(model: &VitModel, examples: &[Example]) -> Result<(Evaluation, Vec<Tensor>)> {
    let task = model
        .task()
        .ok_or_else(|| Error::Config("model has no task head".into()))?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    let outputs: Vec<Tensor> = crate::parallel_map(examples.len(), |i| model.infer(&examples[i].patches))
        .into_iter()
        .collect::<Result<_>>()?;
    let base = |metric: &str, value: f64, higher: bool| Evaluation {
        metric: metric.into(),
        value,
        higher_is_better: higher,
        samples: examples.len(),
        classification: None,
        positioning: None,
        mse_table: None,
        crossover_snr_db: None,
        reproduced_delta: None,
    };
    let ev = match task {
        Task::Positioning => {
            let mut preds = Vec::with_capacity(outputs.len());
            let mut targets = Vec::with_capacity(outputs.len());
            for (o, ex) in outputs.iter().zip(examples) {
                let Target::Position(p) = ex.target else {
                    return Err(Error::InvalidArgument("positioning example without a position".into()));
                };
                preds.push([o.data()[0], o.data()[1], o.data()[2]]);
                targets.push(p);
            }
            let rep = positioning_metrics(&preds, &targets)?;
            Evaluation {
                positioning: Some(rep.clone()),
                ..base("mean_error_m", rep.mean_error, false)
            }
        }
        Task::Chanest { .. } => {
            let mut targets = Vec::with_capacity(outputs.len());
            let mut snrs = Vec::with_capacity(outputs.len());
            for ex in examples {
                let Target::Grid { grid, snr_db } = &ex.target else {
                    return Err(Error::InvalidArgument("channel example without a target grid".into()));
                };
                targets.push(grid.clone());
                snrs.push(*snr_db);
            }
            let mut total = 0.0;
            for (o, t) in outputs.iter().zip(&targets) {
                total += grid_mse(o, t)?;
            }
            let lo = snrs.iter().cloned().fold(f64::INFINITY, f64::min).floor();
            let hi = snrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
            let edges = if hi > lo { vec![lo, hi] } else { vec![lo, lo + 1.0] };
            let table = mse_vs_snr(&[("model", &outputs)], &targets, &snrs, &edges)?;
            Evaluation {
                mse_table: Some(table),
                ..base("mse", total / outputs.len() as f64, false)
            }
        }
        _ => {
            let classes = task.num_classes().unwrap_or(0);
            let logits: Vec<f64> = outputs.iter().flat_map(|o| o.data().iter().copied()).collect();
            let preds = argmax_rows(&Tensor::new(vec![outputs.len(), classes], logits)?)?;
            let labels: Vec<usize> = examples
                .iter()
                .map(|e| match e.target {
                    Target::Class(y) => Ok(y),
                    _ => Err(Error::InvalidArgument("classification example without a label".into())),
                })
                .collect::<Result<_>>()?;
            let rep = classification_metrics(&preds, &labels, classes)?;
            Evaluation {
                classification: Some(rep.clone()),
                ..base("mean_per_class_accuracy", rep.mean_per_class_accuracy, true)
            }
        }
    };
    Ok((ev, outputs))
}

fn run_evaluate(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let path = cfg.evaluate.checkpoint.as_ref().expect("validated");
    let ck = load_checkpoint(path)?;
    let model = ck.model()?;
    let task = model
        .task()
        .ok_or_else(|| Error::Config(format!("{} has no task head", path.display())))?;
    let pipeline: FittedPipeline = ck
        .meta
        .pipeline
        .clone()
        .ok_or_else(|| Error::Config(format!("{} carries no fitted pre-processing", path.display())))?;
    let (samples, generator) = load_samples(&cfg.data, cfg.seed)?;
    let raw = match cfg.evaluate.split {
        Split::All => samples.clone(),
        Split::Val => select(&samples, &split_indices(samples.len(), cfg.data.val_fraction, cfg.seed).1),
    };
    let examples = to_examples(&pipeline.apply_all(&raw)?, &model, task)?;
    let (mut ev, outputs) = evaluate_examples(&model, &examples)?;
    if let Task::Chanest { .. } = task {
        let Some(Generator::Chanest { config: ofdm }) = generator else {
            return Err(Error::Config("channel baselines need the OFDM generator settings".into()));
        };
        let (ls, lmmse) = chanest_baselines(&raw, &ofdm, cfg.evaluate.covariance_draws, &RngState::new(cfg.seed))?;
        let targets: Vec<Tensor> = examples
            .iter()
            .map(|e| match &e.target {
                Target::Grid { grid, .. } => grid.clone(),
                _ => unreachable!("channel examples carry grids"),
            })
            .collect();
        let snrs: Vec<f64> = raw.iter().map(|s| s.snr_db.unwrap_or(f64::NAN)).collect();
        let table = mse_vs_snr(
            &[("ls", &ls), ("lmmse", &lmmse), ("model", &outputs)],
            &targets,
            &snrs,
            &cfg.evaluate.snr_edges_db,
        )?;
        ev.crossover_snr_db = table.crossover("ls", "model");
        ev.mse_table = Some(table);
    }
    if let Some(stored) = ck.meta.metrics.as_ref().and_then(|m| m.get("value")).and_then(|v| v.as_f64()) {
        ev.reproduced_delta = Some(ev.value - stored);
    }
    if cfg.dump_preds {
        dump_predictions(&cfg.out_dir.join("predictions.csv"), &raw, &examples, &outputs)?;
    }
    write_eval_tables(&cfg.out_dir, &ev)?;
    Ok(MetricReport {
        stage: Stage::Evaluate,
        seed: cfg.seed,
        runs: Vec::new(),
        summary: None,
        evaluation: Some(ev),
        archive: None,
        samples: raw.len(),
    })
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let (samples, generator) = load_samples(&cfg.data, cfg.seed)?;
    let dir = cfg.out_dir.join("archive");
    let meta = serde_json::json!({
        "generator": generator,
        "seed": cfg.seed,
        "count": samples.len(),
    });
    write_archive(&dir, &samples, meta, cfg.archive_dtype)?;
    Ok(MetricReport {
        stage: Stage::Simulate,
        seed: cfg.seed,
        runs: Vec::new(),
        summary: None,
        evaluation: None,
        archive: Some(dir),
        samples: samples.len(),
    })
}

fn write_eval_tables(dir: &Path, ev: &Evaluation) -> Result<()> {
    if let Some(c) = &ev.classification {
        let path = dir.join("confusion.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let classes = c.confusion.len();
        let mut header = vec!["true".to_string()];
        header.extend((0..classes).map(|j| format!("pred_{j}")));
        w.write_record(&header)?;
        for (i, row) in c.confusion.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(p) = &ev.positioning {
        let path = dir.join("position_errors.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (i, c) in p.histogram.counts.iter().enumerate() {
            w.write_record([
                p.histogram.edges[i].to_string(),
                p.histogram.edges[i + 1].to_string(),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(t) = &ev.mse_table {
        t.write_csv(&dir.join("mse_vs_snr.csv"))?;
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// One row per sample: id, SNR, target and raw model output, at full precision.
fn dump_predictions(path: &Path, raw: &[GridSample], examples: &[Example], outputs: &[Tensor]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "snr_db", "target", "output"])?;
    for ((s, ex), o) in raw.iter().zip(examples).zip(outputs) {
        let target = match &ex.target {
            Target::Class(y) => y.to_string(),
            Target::Position(p) => join(p),
            Target::Grid { grid, .. } => join(grid.data()),
        };
        w.write_record([
            s.sample_id.clone(),
            s.snr_db.map_or(String::new(), |v| v.to_string()),
            target,
            join(o.data()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
