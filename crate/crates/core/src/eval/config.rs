//! Experiment description read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Task};
use crate::signal::Dtype;
use crate::sim::{ActivityConfig, OfdmConfig, PositioningConfig, SpectrogramConfig, ACTIVITY_CLASSES, NUM_SCENE_CLASSES};
use crate::train::{FreezePolicy, OptimConfig, TaskLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
    Evaluate,
    Simulate,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Evaluate => "evaluate",
            Stage::Simulate => "simulate",
        }
    }
}

/// Synthetic source of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Generator {
    /// Scenes from the spectrogram catalog; label `i` is `classes[i]`.
    Spectrogram {
        classes: Vec<usize>,
        snr_db: [f64; 2],
        #[serde(default)]
        config: SpectrogramConfig,
    },
    Activity {
        #[serde(default)]
        config: ActivityConfig,
    },
    Positioning {
        #[serde(default)]
        config: PositioningConfig,
    },
    /// Pilot grids packed for channel estimation with the true channel as target.
    Chanest {
        #[serde(default)]
        config: OfdmConfig,
    },
}

impl Generator {
    /// Channel count of the generated grids.
    pub fn channels(&self) -> usize {
        match self {
            Generator::Spectrogram { .. } => 1,
            Generator::Activity { config } => config.antennas,
            Generator::Positioning { config } => config.stations.len(),
            Generator::Chanest { .. } => 4,
        }
    }

    /// Whether samples from this generator carry what `task` trains on.
    pub fn supports(&self, task: &Task) -> bool {
        match (self, task) {
            (Generator::Spectrogram { classes, .. }, Task::RfClass) => classes.len() == NUM_SCENE_CLASSES,
            (Generator::Spectrogram { classes, .. }, Task::Classify { classes: c }) => classes.len() == *c,
            (Generator::Activity { .. }, Task::Sensing) => true,
            (Generator::Activity { .. }, Task::Classify { classes }) => *classes == ACTIVITY_CLASSES,
            (Generator::Positioning { .. }, Task::Positioning) => true,
            (Generator::Chanest { config }, Task::Chanest { height, width, channels }) => {
                [*height, *width, *channels] == [config.n_rx_antennas * config.n_symbols, config.n_subcarriers, 2]
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    /// Sample archive directory; takes precedence over `generator`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub archive: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
    /// Number of generated samples.
    pub count: usize,
    /// Held-out share used for validation during fine-tuning.
    pub val_fraction: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            archive: None,
            generator: Some(Generator::Spectrogram {
                classes: (0..NUM_SCENE_CLASSES).collect(),
                snr_db: [0.0, 20.0],
                config: SpectrogramConfig::default(),
            }),
            count: 256,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSpec {
    pub task: Task,
    pub loss: TaskLoss,
    pub policy: FreezePolicy,
    /// Pretrained backbone; a randomly initialised encoder when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for FinetuneSpec {
    fn default() -> Self {
        Self {
            task: Task::Sensing,
            loss: TaskLoss::Sce { theta: 0.1 },
            policy: FreezePolicy::LastN { n: 2 },
            init_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// The validation share, split exactly as during fine-tuning.
    Val,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    /// Edges of the SNR bins of the channel-estimation table.
    pub snr_edges_db: Vec<f64>,
    /// Simulator draws used to estimate the LMMSE covariances.
    pub covariance_draws: usize,
}

impl Default for EvaluateSpec {
    fn default() -> Self {
        Self {
            checkpoint: None,
            split: Split::Val,
            snr_edges_db: (0..=6).map(|i| -10.0 + 5.0 * i as f64).collect(),
            covariance_draws: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub stage: Stage,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Independent fine-tuning runs with seeds `seed, seed+1, …`.
    pub runs: usize,
    /// Checkpoint period in epochs; the final epoch is always saved.
    pub checkpoint_every: usize,
    /// Write per-sample predictions next to the report.
    pub dump_preds: bool,
    /// Precision of simulated archives.
    pub archive_dtype: Dtype,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataSpec,
    pub finetune: FinetuneSpec,
    pub evaluate: EvaluateSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            runs: 3,
            checkpoint_every: 10,
            dump_preds: false,
            archive_dtype: Dtype::F32,
            model: ModelConfig::default(),
            optim: OptimConfig::pretrain(),
            data: DataSpec::default(),
            finetune: FinetuneSpec::default(),
            evaluate: EvaluateSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full-scale defaults for `stage`; fine-tuning uses its own optimizer settings.
    /// Three-channel CSI activity data matches the default model and task.
    pub fn template(stage: Stage) -> Self {
        let optim = match stage {
            Stage::Finetune => OptimConfig::finetune(),
            _ => OptimConfig::pretrain(),
        };
        Self {
            stage,
            optim,
            data: DataSpec {
                generator: Some(Generator::Activity {
                    config: ActivityConfig::default(),
                }),
                ..DataSpec::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.data.val_fraction)));
        }
        match (&self.data.archive, &self.data.generator) {
            (Some(p), _) => require_path(p, "data.archive")?,
            (None, Some(g)) => {
                validate_generator(g)?;
                if self.data.count == 0 {
                    return Err(Error::Config("data.count must be positive".into()));
                }
                if matches!(self.stage, Stage::Pretrain | Stage::Finetune) && g.channels() != self.model.channels {
                    return Err(Error::Config(format!(
                        "generator `{}` yields {} channels, model.channels is {}",
                        g.prefix(),
                        g.channels(),
                        self.model.channels
                    )));
                }
                if self.stage == Stage::Finetune && !g.supports(&self.finetune.task) {
                    return Err(Error::Config(format!(
                        "generator `{}` does not provide targets for task {:?}",
                        g.prefix(),
                        self.finetune.task
                    )));
                }
            }
            (None, None) => return Err(Error::Config("data needs an archive or a generator".into())),
        }
        match self.stage {
            Stage::Pretrain => {}
            Stage::Finetune => {
                if self.runs == 0 {
                    return Err(Error::Config("runs must be at least 1".into()));
                }
                if let Some(p) = &self.finetune.init_checkpoint {
                    require_path(p, "finetune.init_checkpoint")?;
                }
                if let FreezePolicy::Lora { lora } = &self.finetune.policy {
                    lora.validate()?;
                }
                if self.data.val_fraction == 0.0 {
                    return Err(Error::Config("fine-tuning needs a validation share".into()));
                }
            }
            Stage::Evaluate => match &self.evaluate.checkpoint {
                Some(p) => require_path(p, "evaluate.checkpoint")?,
                None => return Err(Error::Config("evaluate.checkpoint is required".into())),
            },
            Stage::Simulate => {
                if self.data.generator.is_none() {
                    return Err(Error::Config("simulate needs data.generator".into()));
                }
            }
        }
        Ok(())
    }
}

fn require_path(p: &Path, key: &str) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{key}: {} does not exist", p.display())))
    }
}

fn validate_generator(g: &Generator) -> Result<()> {
    match g {
        Generator::Spectrogram { classes, snr_db, config } => {
            config.validate()?;
            if classes.is_empty() || classes.iter().any(|&c| c >= NUM_SCENE_CLASSES) {
                return Err(Error::Config(format!("spectrogram classes must be in 0..{NUM_SCENE_CLASSES}")));
            }
            if !(snr_db[0] <= snr_db[1]) {
                return Err(Error::Config("spectrogram SNR range is reversed".into()));
            }
        }
        Generator::Activity { config } => {
            if config.subcarriers == 0 || config.time_steps == 0 || config.antennas == 0 {
                return Err(Error::Config(format!("activity grid sizes must be positive ({ACTIVITY_CLASSES} classes)")));
            }
        }
        Generator::Positioning { config } => {
            if config.stations.is_empty() {
                return Err(Error::Config("positioning needs at least one station".into()));
            }
        }
        Generator::Chanest { config } => config.validate()?,
    }
    Ok(())
}
