use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LoraConfig, VitModel};
use crate::tensor::ParameterStore;

/// Which tensors a fine-tuning run may update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FreezePolicy {
    /// Every tensor trains.
    Full,
    /// Only the task head trains.
    HeadOnly,
    /// The final `n` encoder blocks and the head train.
    LastN { n: usize },
    /// Only LoRA adapters and the head train.
    Lora { lora: LoraConfig },
}

fn block_index(name: &str) -> Option<usize> {
    name.strip_prefix("encoder.block")?.split('.').next()?.parse().ok()
}

impl FreezePolicy {
    pub fn allows(&self, name: &str, blocks: usize) -> bool {
        let head = name.starts_with("head.");
        match self {
            FreezePolicy::Full => true,
            FreezePolicy::HeadOnly => head,
            FreezePolicy::LastN { n } => {
                head || (!name.contains(".lora.") && block_index(name).is_some_and(|i| i + n >= blocks))
            }
            FreezePolicy::Lora { .. } => head || name.contains(".lora."),
        }
    }

    /// Sets gradient tracking on every tensor of the model to match the policy.
    pub fn apply(&self, model: &mut VitModel) -> Result<()> {
        let blocks = model.config.encoder.blocks;
        match self {
            FreezePolicy::LastN { n } if *n > blocks => {
                return Err(Error::Config(format!("last {n} blocks of a {blocks}-block encoder")));
            }
            FreezePolicy::Lora { lora } if model.parts.lora.as_ref() != Some(lora) => {
                return Err(Error::Config("LoRA policy does not match the model's adapters".into()));
            }
            _ => {}
        }
        if !matches!(self, FreezePolicy::Full) && !model.params.names().any(|n| n.starts_with("head.")) {
            return Err(Error::Config("freeze policy needs a task head".into()));
        }
        for (name, t) in model.params.iter_mut() {
            t.set_requires_grad(self.allows(name, blocks));
        }
        Ok(())
    }
}

/// Fraction of encoder weights left untouched by fine-tuning.
pub fn shared_fraction(params: &ParameterStore) -> f64 {
    let backbone = params.count(|n, _| n.starts_with("encoder.") && !n.contains(".lora."));
    let frozen = params.count(|n, t| n.starts_with("encoder.") && !n.contains(".lora.") && !t.requires_grad());
    if backbone == 0 {
        0.0
    } else {
        frozen as f64 / backbone as f64
    }
}
