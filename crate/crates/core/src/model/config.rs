use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Final embedding of the class token.
    Token,
    /// Mean over patch tokens, class token excluded.
    Avg,
}

/// Divisor inside the attention softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `√(D / heads)`
    PerHead,
    /// `√D`
    ModelDim,
}

/// Depth and widths of one transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub blocks: usize,
    pub dim: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl TowerConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Element count of one block, biases and both layer norms included.
    pub fn block_params(&self) -> usize {
        let (d, h) = (self.dim, self.hidden);
        4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("{name}: dim, hidden and heads must be positive")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "{name}: dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Side length of the square input grid after pre-processing.
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub encoder: TowerConfig,
    pub decoder: TowerConfig,
    pub pooling: Pooling,
    pub attention_scale: AttentionScale,
    pub ln_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            encoder: TowerConfig {
                blocks: 12,
                dim: 512,
                hidden: 2048,
                heads: 8,
            },
            decoder: TowerConfig {
                blocks: 8,
                dim: 256,
                hidden: 1024,
                heads: 16,
            },
            pooling: Pooling::Avg,
            attention_scale: AttentionScale::PerHead,
            ln_eps: 1e-6,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "patch size {} must divide image size {}",
                self.patch_size, self.image_size
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        self.encoder.validate("encoder")?;
        self.decoder.validate("decoder")?;
        for (name, d) in [("encoder", self.encoder.dim), ("decoder", self.decoder.dim)] {
            if d % 4 != 0 {
                return Err(Error::Config(format!("{name} dim {d} must be divisible by 4")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Patch embedding, class token and all encoder blocks.
    pub fn encoder_params(&self) -> usize {
        let d = self.encoder.dim;
        self.patch_dim() * d + d + d + self.encoder.blocks * self.encoder.block_params()
    }

    /// Decoder embedding, mask token, decoder blocks and reconstruction layer.
    pub fn decoder_params(&self) -> usize {
        let (de, dd) = (self.encoder.dim, self.decoder.dim);
        de * dd + dd + dd + self.decoder.blocks * self.decoder.block_params() + dd * self.patch_dim() + self.patch_dim()
    }
}

/// Low-rank adapters on the query and value projections of every encoder block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl LoraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("LoRA rank must be at least 1".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("LoRA alpha must be finite".into()));
        }
        Ok(())
    }

    /// `A_q, B_q, A_v, B_v` in every block.
    pub fn param_count(&self, dim: usize, blocks: usize) -> usize {
        4 * dim * self.rank * blocks
    }
}

/// Fine-tuning target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    /// Six human activities from CSI.
    Sensing,
    /// Twenty RF signal classes from spectrograms.
    RfClass,
    /// Three-dimensional user position.
    Positioning,
    /// Classification with an arbitrary number of classes.
    Classify { classes: usize },
    /// Channel grid regression; output is `height × width × channels`.
    Chanest { height: usize, width: usize, channels: usize },
}

impl Task {
    /// Width of the linear head, or the per-token projection width for
    /// channel estimation.
    pub fn output_dim(&self) -> usize {
        match *self {
            Task::Sensing => 6,
            Task::RfClass => 20,
            Task::Positioning => 3,
            Task::Classify { classes } => classes,
            Task::Chanest { channels, .. } => channels,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match *self {
            Task::Sensing | Task::RfClass | Task::Classify { .. } => Some(self.output_dim()),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Result<Task> {
        match name {
            "sensing" => Ok(Task::Sensing),
            "rfclass" => Ok(Task::RfClass),
            "positioning" => Ok(Task::Positioning),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        assert_eq!(ModelConfig::default().num_patches(), 196);
        assert_eq!(ModelConfig::default().patch_dim(), 768);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut c = ModelConfig::default();
        c.encoder.heads = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_task_rejected() {
        assert!(Task::parse("weather").is_err());
        assert_eq!(Task::parse("positioning").unwrap().output_dim(), 3);
    }
}
