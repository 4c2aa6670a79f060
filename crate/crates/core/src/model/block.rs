//! Pre-norm transformer block: `Z̄ = MSA(LN(Z)) + Z`, `out = MLP(LN(Z̄)) + Z̄`.

use super::config::{AttentionScale, LoraConfig, TowerConfig};
use super::{materialize, Init, ParamSpec};
use crate::error::Result;
use crate::tensor::{ParameterStore, RngState, Tape, Tensor, Var};

/// Settings shared by every block of a stack.
#[derive(Debug, Clone, Copy)]
pub struct BlockSpec<'a> {
    pub tower: &'a TowerConfig,
    pub scale: AttentionScale,
    pub ln_eps: f64,
    pub lora: Option<&'a LoraConfig>,
}

impl BlockSpec<'_> {
    fn attention_divisor(&self) -> f64 {
        match self.scale {
            AttentionScale::PerHead => (self.tower.head_dim() as f64).sqrt(),
            AttentionScale::ModelDim => (self.tower.dim as f64).sqrt(),
        }
    }
}

/// Parameter names, shapes and initialisers of one block under `prefix`.
pub fn block_layout(prefix: &str, tower: &TowerConfig) -> Vec<ParamSpec> {
    let (d, h) = (tower.dim, tower.hidden);
    vec![
        ParamSpec::new(format!("{prefix}.ln1.scale"), &[d], Init::Ones),
        ParamSpec::new(format!("{prefix}.ln1.shift"), &[d], Init::Zeros),
        ParamSpec::new(format!("{prefix}.msa.u_qkv"), &[d, 3 * d], Init::TruncNormal),
        ParamSpec::new(format!("{prefix}.msa.b_qkv"), &[3 * d], Init::Zeros),
        ParamSpec::new(format!("{prefix}.msa.u_msa"), &[d, d], Init::TruncNormal),
        ParamSpec::new(format!("{prefix}.msa.b_msa"), &[d], Init::Zeros),
        ParamSpec::new(format!("{prefix}.ln2.scale"), &[d], Init::Ones),
        ParamSpec::new(format!("{prefix}.ln2.shift"), &[d], Init::Zeros),
        ParamSpec::new(format!("{prefix}.mlp.fc1.weight"), &[d, h], Init::TruncNormal),
        ParamSpec::new(format!("{prefix}.mlp.fc1.bias"), &[h], Init::Zeros),
        ParamSpec::new(format!("{prefix}.mlp.fc2.weight"), &[h, d], Init::TruncNormal),
        ParamSpec::new(format!("{prefix}.mlp.fc2.bias"), &[d], Init::Zeros),
    ]
}

/// `A_q, B_q, A_v, B_v` under `{prefix}.msa.lora`. `B` starts at zero so the
/// adapted block initially computes exactly what the frozen one does.
pub fn lora_layout(prefix: &str, dim: usize, lora: &LoraConfig) -> Vec<ParamSpec> {
    let mut out = Vec::with_capacity(4);
    for target in ["q", "v"] {
        out.push(ParamSpec::new(format!("{prefix}.msa.lora.a_{target}"), &[dim, lora.rank], Init::Normal(0.02)));
        out.push(ParamSpec::new(format!("{prefix}.msa.lora.b_{target}"), &[lora.rank, dim], Init::Zeros));
    }
    out
}

pub fn init_block(store: &mut ParameterStore, prefix: &str, tower: &TowerConfig, std: f64, rng: &mut RngState) {
    materialize(store, block_layout(prefix, tower), std, rng);
}

pub fn init_lora(store: &mut ParameterStore, prefix: &str, dim: usize, lora: &LoraConfig, rng: &mut RngState) {
    materialize(store, lora_layout(prefix, dim, lora), 0.0, rng);
}

/// Multi-head self-attention on an already normalised `n×D` input.
pub fn msa_forward(tape: &mut Tape, params: &ParameterStore, prefix: &str, z: Var, spec: &BlockSpec) -> Result<Var> {
    let d = spec.tower.dim;
    let heads = spec.tower.heads;
    let dh = spec.tower.head_dim();
    let u_qkv = tape.param(params, &format!("{prefix}.msa.u_qkv"))?;
    let b_qkv = tape.param(params, &format!("{prefix}.msa.b_qkv"))?;
    let qkv = tape.linear(z, u_qkv, Some(b_qkv))?;
    let mut q = tape.slice_cols(qkv, 0, d)?;
    let k = tape.slice_cols(qkv, d, d)?;
    let mut v = tape.slice_cols(qkv, 2 * d, d)?;
    if let Some(lora) = spec.lora {
        for (target, proj) in [("q", &mut q), ("v", &mut v)] {
            let a = tape.param(params, &format!("{prefix}.msa.lora.a_{target}"))?;
            let b = tape.param(params, &format!("{prefix}.msa.lora.b_{target}"))?;
            let za = tape.matmul(z, a)?;
            let za = tape.scale(za, lora.alpha);
            let delta = tape.matmul(za, b)?;
            *proj = tape.add(*proj, delta)?;
        }
    }
    let inv = 1.0 / spec.attention_divisor();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let logits = tape.scale(logits, inv);
        let attn = tape.softmax_rows(logits)?;
        outs.push(tape.matmul(attn, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let u_msa = tape.param(params, &format!("{prefix}.msa.u_msa"))?;
    let b_msa = tape.param(params, &format!("{prefix}.msa.b_msa"))?;
    tape.linear(cat, u_msa, Some(b_msa))
}

pub fn vit_block_forward(tape: &mut Tape, params: &ParameterStore, prefix: &str, z: Var, spec: &BlockSpec) -> Result<Var> {
    let g1 = tape.param(params, &format!("{prefix}.ln1.scale"))?;
    let b1 = tape.param(params, &format!("{prefix}.ln1.shift"))?;
    let n1 = tape.layer_norm(z, g1, b1, spec.ln_eps)?;
    let attn = msa_forward(tape, params, prefix, n1, spec)?;
    let zbar = tape.add(attn, z)?;

    let g2 = tape.param(params, &format!("{prefix}.ln2.scale"))?;
    let b2 = tape.param(params, &format!("{prefix}.ln2.shift"))?;
    let n2 = tape.layer_norm(zbar, g2, b2, spec.ln_eps)?;
    let w1 = tape.param(params, &format!("{prefix}.mlp.fc1.weight"))?;
    let c1 = tape.param(params, &format!("{prefix}.mlp.fc1.bias"))?;
    let hdn = tape.linear(n2, w1, Some(c1))?;
    let hdn = tape.gelu(hdn);
    let w2 = tape.param(params, &format!("{prefix}.mlp.fc2.weight"))?;
    let c2 = tape.param(params, &format!("{prefix}.mlp.fc2.bias"))?;
    let mlp = tape.linear(hdn, w2, Some(c2))?;
    tape.add(mlp, zbar)
}

/// Attention weights of head `h`, recomputed without recording gradients.
pub fn attention_weights(params: &ParameterStore, prefix: &str, z: &Tensor, spec: &BlockSpec, h: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let d = spec.tower.dim;
    let dh = spec.tower.head_dim();
    let u = tape.param(params, &format!("{prefix}.msa.u_qkv"))?;
    let b = tape.param(params, &format!("{prefix}.msa.b_qkv"))?;
    let qkv = tape.linear(zv, u, Some(b))?;
    let qh = tape.slice_cols(qkv, h * dh, dh)?;
    let kh = tape.slice_cols(qkv, d + h * dh, dh)?;
    let kt = tape.transpose(kh)?;
    let logits = tape.matmul(qh, kt)?;
    let logits = tape.scale(logits, 1.0 / spec.attention_divisor());
    let attn = tape.softmax_rows(logits)?;
    Ok(tape.value(attn).clone())
}
