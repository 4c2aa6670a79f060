use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParameterStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Skip weight decay for layer norms, biases and learned tokens.
    pub decay_weights_only: bool,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Per-block learning-rate decay; 1 disables it.
    pub layer_decay: f64,
    pub mask_ratio: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl OptimConfig {
    pub fn pretrain() -> Self {
        Self {
            batch_size: 256,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            decay_weights_only: true,
            epochs: 800,
            warmup_epochs: 40,
            layer_decay: 1.0,
            mask_ratio: 0.75,
        }
    }

    pub fn finetune() -> Self {
        Self {
            epochs: 200,
            warmup_epochs: 10,
            layer_decay: 0.75,
            mask_ratio: 0.0,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warm-up epochs {} must be below total epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.layer_decay > 0.0 && self.layer_decay <= 1.0) {
            return Err(Error::Config(format!("layer decay {} outside (0, 1]", self.layer_decay)));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask ratio {} outside [0, 1)", self.mask_ratio)));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn schedule(&self, steps_per_epoch: usize) -> Schedule {
        Schedule {
            base_lr: self.lr,
            warmup_steps: self.warmup_epochs * steps_per_epoch,
            total_steps: self.epochs * steps_per_epoch,
        }
    }
}

/// Linear warm-up to `base_lr`, then cosine annealing to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return 0.0;
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Depth of a parameter for layer decay: embeddings 0, encoder block `i`
/// (zero-based name) at `i + 1`, everything else at `blocks + 1`.
pub fn layer_id(name: &str, blocks: usize) -> usize {
    if name.starts_with("encoder.patch_embed") || name == "encoder.cls_token" {
        return 0;
    }
    if let Some(rest) = name.strip_prefix("encoder.block") {
        if let Some(idx) = rest.split('.').next().and_then(|s| s.parse::<usize>().ok()) {
            return idx + 1;
        }
    }
    blocks + 1
}

/// `decay^(K − ℓ)` with the head and final block at multiplier 1.
pub fn layer_scale(name: &str, blocks: usize, decay: f64) -> f64 {
    let l = layer_id(name, blocks).min(blocks);
    decay.powi((blocks - l) as i32)
}

/// Whether decoupled weight decay applies to `name`.
pub fn is_decayed(name: &str) -> bool {
    name.ends_with(".weight") || name.ends_with(".u_qkv") || name.ends_with(".u_msa") || name.contains(".lora.")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_weights_only: bool,
    /// Number of completed updates.
    pub t: u64,
    pub moments: IndexMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: &OptimConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            decay_weights_only: cfg.decay_weights_only,
            t: 0,
            moments: IndexMap::new(),
        }
    }

    /// One update of every gradient-tracking parameter with learning rate
    /// `lr · scale(name)`. A non-finite gradient aborts before any change.
    pub fn step(&mut self, params: &mut ParameterStore, lr: f64, scale: impl Fn(&str) -> f64) -> Result<()> {
        for (name, t) in params.iter() {
            if let Some(g) = t.grad() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of `{name}` at element {i}")));
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if !p.requires_grad() {
                continue;
            }
            let lr_p = lr * scale(name);
            let wd = if !self.decay_weights_only || is_decayed(name) {
                self.weight_decay
            } else {
                0.0
            };
            let mom = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            });
            if mom.m.len() != p.numel() {
                return Err(Error::shape("adam", format!("moments of `{name}` do not match")));
            }
            update(p, mom, lr_p, wd, self.beta1, self.beta2, self.eps, bc1, bc2);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update(p: &mut Tensor, mom: &mut Moments, lr: f64, wd: f64, b1: f64, b2: f64, eps: f64, bc1: f64, bc2: f64) {
    let grad = p.grad().expect("tracked parameter has a gradient").to_vec();
    let data = p.data_mut();
    for i in 0..data.len() {
        let g = grad[i];
        mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
        mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
        let mhat = mom.m[i] / bc1;
        let vhat = mom.v[i] / bc2;
        data[i] -= lr * wd * data[i];
        data[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_junction() {
        let s = Schedule {
            base_lr: 1e-3,
            warmup_steps: 10,
            total_steps: 100,
        };
        assert_eq!(s.lr_at(0), 0.0);
        assert!((s.lr_at(10) - 1e-3).abs() < 1e-18);
        assert!(s.lr_at(100).abs() < 1e-12);
        // The ramp evaluated at the junction meets the cosine branch.
        let ramp_end = s.base_lr * s.warmup_steps as f64 / s.warmup_steps as f64;
        assert!((ramp_end - s.lr_at(10)).abs() < 1e-12 * s.base_lr);
        assert!((s.lr_at(9) - 0.9e-3).abs() < 1e-15);
    }

    #[test]
    fn layer_scale_values() {
        assert!((layer_scale("encoder.block0.msa.u_qkv", 12, 0.75) - 0.75f64.powi(11)).abs() < 1e-15);
        assert_eq!(layer_scale("encoder.block11.ln1.scale", 12, 0.75), 1.0);
        assert_eq!(layer_scale("head.weight", 12, 0.75), 1.0);
        assert_eq!(layer_scale("encoder.patch_embed.weight", 2, 0.5), 0.25);
    }

    #[test]
    fn decay_exemptions() {
        assert!(is_decayed("encoder.block0.msa.u_qkv"));
        assert!(is_decayed("head.weight"));
        assert!(!is_decayed("encoder.block0.msa.b_qkv"));
        assert!(!is_decayed("encoder.block0.ln1.scale"));
        assert!(!is_decayed("decoder.mask_token"));
    }

    fn store(v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w.weight", Tensor::full(&[1], v).with_grad());
        s
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut cfg = OptimConfig::pretrain();
        cfg.weight_decay = 0.0;
        let mut adam = Adam::new(&cfg);
        let mut s = store(0.7);
        adam.step(&mut s, 1e-2, |_| 1.0).unwrap();
        assert_eq!(s.get("w.weight").unwrap().data(), &[0.7]);
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let cfg = OptimConfig::pretrain();
        let mut adam = Adam::new(&cfg);
        let mut s = store(2.0);
        for _ in 0..3 {
            adam.step(&mut s, 0.1, |_| 1.0).unwrap();
        }
        let expected = 2.0 * (1.0 - 0.1 * 0.05f64).powi(3);
        assert!((s.get("w.weight").unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts_without_change() {
        let mut adam = Adam::new(&OptimConfig::pretrain());
        let mut s = store(1.0);
        s.get_mut("w.weight").unwrap().grad_mut().unwrap()[0] = f64::NAN;
        assert!(adam.step(&mut s, 0.1, |_| 1.0).is_err());
        assert_eq!(s.get("w.weight").unwrap().data(), &[1.0]);
        assert_eq!(adam.t, 0);
    }
}
