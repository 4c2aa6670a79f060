//! Vision Transformer masked autoencoder with task heads and LoRA.
//!
//! All forward functions record onto a caller-owned [`Tape`]. Weight
//! matrices are stored `in × out` and applied as `x · W + b`.

mod block;
mod config;

use serde::{Deserialize, Serialize};

pub use block::{
    attention_weights, block_layout, init_block, init_lora, lora_layout, msa_forward, vit_block_forward, BlockSpec,
};
pub use config::{AttentionScale, LoraConfig, ModelConfig, Pooling, Task, TowerConfig};

use crate::error::{Error, Result};
use crate::signal::{posembed_2d, posembed_with_cls, resize_matrix, PatchSeq};
use crate::tensor::{ParameterStore, RngState, Tape, Tensor, Var};
use crate::train::MaskPlan;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Truncated Gaussian at the model's `init_std`, cut at two sigma.
    TruncNormal,
    /// Plain Gaussian with the given standard deviation.
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: String, shape: &[usize], init: Init) -> Self {
        Self {
            name,
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Draws every tensor of `layout` in order and inserts it, gradient tracking on.
pub fn materialize(store: &mut ParameterStore, layout: Vec<ParamSpec>, std: f64, rng: &mut RngState) {
    for spec in layout {
        let mut t = Tensor::zeros(&spec.shape);
        match spec.init {
            Init::Zeros => {}
            Init::Ones => t.data_mut().iter_mut().for_each(|v| *v = 1.0),
            Init::TruncNormal => t.data_mut().iter_mut().for_each(|v| *v = rng.trunc_normal(std)),
            Init::Normal(s) => t.data_mut().iter_mut().for_each(|v| *v = s * rng.normal()),
        }
        store.insert(spec.name, t.with_grad());
    }
}

/// Which optional parts a parameter store carries besides the encoder.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Components {
    pub decoder: bool,
    pub lora: Option<LoraConfig>,
    pub task: Option<Task>,
}

/// Token sequence entering the encoder, with the mask it was formed under.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub tokens: Var,
    /// `None` in fine-tuning mode, where a class token leads the sequence.
    pub plan: Option<MaskPlan>,
}

/// Parameter layout of a model with the given parts, in insertion order.
pub fn model_layout(config: &ModelConfig, parts: &Components) -> Vec<ParamSpec> {
    let d = config.encoder.dim;
    let pd = config.patch_dim();
    let mut out = vec![
        ParamSpec::new("encoder.patch_embed.weight".into(), &[pd, d], Init::TruncNormal),
        ParamSpec::new("encoder.patch_embed.bias".into(), &[d], Init::Zeros),
        ParamSpec::new("encoder.cls_token".into(), &[1, d], Init::TruncNormal),
    ];
    for i in 0..config.encoder.blocks {
        out.extend(block_layout(&format!("encoder.block{i}"), &config.encoder));
    }
    if parts.decoder {
        let dd = config.decoder.dim;
        out.push(ParamSpec::new("decoder.embed.weight".into(), &[d, dd], Init::TruncNormal));
        out.push(ParamSpec::new("decoder.embed.bias".into(), &[dd], Init::Zeros));
        out.push(ParamSpec::new("decoder.mask_token".into(), &[1, dd], Init::TruncNormal));
        for i in 0..config.decoder.blocks {
            out.extend(block_layout(&format!("decoder.block{i}"), &config.decoder));
        }
        out.push(ParamSpec::new("decoder.recon.weight".into(), &[dd, pd], Init::TruncNormal));
        out.push(ParamSpec::new("decoder.recon.bias".into(), &[pd], Init::Zeros));
    }
    if let Some(lora) = &parts.lora {
        for i in 0..config.encoder.blocks {
            out.extend(lora_layout(&format!("encoder.block{i}"), d, lora));
        }
    }
    if let Some(task) = &parts.task {
        out.extend(head_layout(config, task));
    }
    out
}

pub fn head_layout(config: &ModelConfig, task: &Task) -> Vec<ParamSpec> {
    let d = config.encoder.dim;
    match *task {
        Task::Chanest { channels, .. } => {
            let tower = head_tower(config);
            let mut out = block_layout("head.block", &tower);
            let width = config.patch_size * config.patch_size * channels;
            out.push(ParamSpec::new("head.proj.weight".into(), &[d, width], Init::TruncNormal));
            out.push(ParamSpec::new("head.proj.bias".into(), &[width], Init::Zeros));
            out
        }
        _ => vec![
            ParamSpec::new("head.weight".into(), &[d, task.output_dim()], Init::TruncNormal),
            ParamSpec::new("head.bias".into(), &[task.output_dim()], Init::Zeros),
        ],
    }
}

fn head_tower(config: &ModelConfig) -> TowerConfig {
    TowerConfig {
        blocks: 1,
        ..config.encoder
    }
}

/// Fresh parameters for `task`, drawn from `rng`.
pub fn make_task_head(config: &ModelConfig, task: &Task, rng: &mut RngState) -> ParameterStore {
    let mut store = ParameterStore::new();
    materialize(&mut store, head_layout(config, task), config.init_std, rng);
    store
}

/// Exact element count, optionally restricted by a name predicate.
pub fn param_count(params: &ParameterStore, filter: Option<&dyn Fn(&str) -> bool>) -> usize {
    match filter {
        Some(f) => params.count(|name, _| f(name)),
        None => params.total(),
    }
}

/// Fixed resampling from the model grid to a channel-estimation target.
#[derive(Debug, Clone)]
struct ChanestMap {
    out: [usize; 3],
    rows: Tensor,
    cols_t: Tensor,
    /// Gathers channel `c` of the unpatchified output into an `S×S` matrix.
    channel_index: Vec<Vec<usize>>,
    /// Interleaves the per-channel matrices into `H×W×C` order.
    interleave: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct VitModel {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub parts: Components,
    enc_pos: Tensor,
    enc_pos_cls: Tensor,
    dec_pos: Tensor,
    chanest: Option<ChanestMap>,
}

impl VitModel {
    /// Encoder and decoder for masked pretraining.
    pub fn new(config: ModelConfig, rng: &mut RngState) -> Result<Self> {
        let parts = Components {
            decoder: true,
            ..Components::default()
        };
        Self::with_parts(config, parts, rng)
    }

    pub fn with_parts(config: ModelConfig, parts: Components, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        materialize(&mut params, model_layout(&config, &parts), config.init_std, rng);
        Self::assemble(config, parts, params)
    }

    /// Wraps an existing store, checking every tensor against the layout.
    pub fn from_params(config: ModelConfig, parts: Components, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        for spec in model_layout(&config, &parts) {
            let t = params
                .get(&spec.name)
                .ok_or_else(|| Error::UnknownParameter(spec.name.clone()))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::CheckpointShape {
                    name: spec.name,
                    expected: spec.shape,
                    found: t.shape().to_vec(),
                });
            }
        }
        Self::assemble(config, parts, params)
    }

    fn assemble(config: ModelConfig, parts: Components, params: ParameterStore) -> Result<Self> {
        if let Some(lora) = &parts.lora {
            lora.validate()?;
        }
        let g = config.grid();
        let enc_pos = posembed_2d(g, g, config.encoder.dim)?;
        let enc_pos_cls = posembed_with_cls(g, g, config.encoder.dim)?;
        let dec_pos = posembed_2d(g, g, config.decoder.dim)?;
        let chanest = match parts.task {
            Some(Task::Chanest { height, width, channels }) => Some(chanest_map(&config, [height, width, channels])?),
            _ => None,
        };
        Ok(Self {
            config,
            params,
            parts,
            enc_pos,
            enc_pos_cls,
            dec_pos,
            chanest,
        })
    }

    /// Drops the decoder and adds a task head and optional adapters.
    pub fn into_finetune(mut self, task: Task, lora: Option<LoraConfig>, rng: &mut RngState) -> Result<Self> {
        let names: Vec<String> = self.params.names().filter(|n| n.starts_with("decoder.")).map(String::from).collect();
        for n in names {
            self.params.remove(&n);
        }
        if let Some(l) = &lora {
            l.validate()?;
            for i in 0..self.config.encoder.blocks {
                materialize(
                    &mut self.params,
                    lora_layout(&format!("encoder.block{i}"), self.config.encoder.dim, l),
                    0.0,
                    rng,
                );
            }
        }
        self.params.extend(make_task_head(&self.config, &task, rng));
        let parts = Components {
            decoder: false,
            lora,
            task: Some(task),
        };
        Self::assemble(self.config, parts, self.params)
    }

    pub fn task(&self) -> Option<Task> {
        self.parts.task
    }

    fn spec<'a>(&'a self, tower: &'a TowerConfig, lora: bool) -> BlockSpec<'a> {
        BlockSpec {
            tower,
            scale: self.config.attention_scale,
            ln_eps: self.config.ln_eps,
            lora: if lora { self.parts.lora.as_ref() } else { None },
        }
    }

    fn check_patches(&self, patches: &Tensor) -> Result<()> {
        let expected = [self.config.num_patches(), self.config.patch_dim()];
        if patches.shape() != expected {
            return Err(Error::shape(
                "patch_embed",
                format!("patches {:?}, model expects {expected:?}", patches.shape()),
            ));
        }
        Ok(())
    }

    /// Projects the visible patches and adds their positional rows. Masked
    /// patch contents are never placed on the tape.
    pub fn patch_embed(&self, tape: &mut Tape, patches: &Tensor, plan: &MaskPlan) -> Result<EncoderState> {
        self.check_patches(patches)?;
        if plan.len() != self.config.num_patches() {
            return Err(Error::shape("patch_embed", "mask plan length differs from patch count"));
        }
        let visible = select_rows(patches, &plan.visible);
        let pos = select_rows(&self.enc_pos, &plan.visible);
        let x = tape.constant(visible);
        let tokens = self.embed_rows(tape, x, pos)?;
        Ok(EncoderState {
            tokens,
            plan: Some(plan.clone()),
        })
    }

    fn embed_rows(&self, tape: &mut Tape, x: Var, pos: Tensor) -> Result<Var> {
        let w = tape.param(&self.params, "encoder.patch_embed.weight")?;
        let b = tape.param(&self.params, "encoder.patch_embed.bias")?;
        let e = tape.linear(x, w, Some(b))?;
        let p = tape.constant(pos);
        tape.add(e, p)
    }

    /// Prepends the class token to all projected patches.
    pub fn attach_cls(&self, tape: &mut Tape, patches: &Tensor) -> Result<EncoderState> {
        self.check_patches(patches)?;
        let x = tape.constant(patches.clone());
        let w = tape.param(&self.params, "encoder.patch_embed.weight")?;
        let b = tape.param(&self.params, "encoder.patch_embed.bias")?;
        let e = tape.linear(x, w, Some(b))?;
        let cls = tape.param(&self.params, "encoder.cls_token")?;
        let z = tape.concat_rows(&[cls, e])?;
        let pos = tape.constant(self.enc_pos_cls.clone());
        let tokens = tape.add(z, pos)?;
        Ok(EncoderState { tokens, plan: None })
    }

    /// All patches with positions, no class token.
    pub fn embed_all(&self, tape: &mut Tape, patches: &Tensor) -> Result<EncoderState> {
        self.check_patches(patches)?;
        let x = tape.constant(patches.clone());
        let tokens = self.embed_rows(tape, x, self.enc_pos.clone())?;
        Ok(EncoderState {
            tokens,
            plan: Some(MaskPlan::none(self.config.num_patches())),
        })
    }

    pub fn encode(&self, tape: &mut Tape, state: &EncoderState) -> Result<Var> {
        let spec = self.spec(&self.config.encoder, true);
        let mut z = state.tokens;
        for i in 0..self.config.encoder.blocks {
            z = vit_block_forward(tape, &self.params, &format!("encoder.block{i}"), z, &spec)?;
        }
        Ok(z)
    }

    /// Projects encoder output to the decoder width and fills masked
    /// positions with the mask token, in original grid order.
    pub fn decoder_embed(&self, tape: &mut Tape, enc: Var, plan: &MaskPlan) -> Result<Var> {
        let rows = tape.shape(enc)[0];
        if rows != plan.visible.len() || plan.len() != self.config.num_patches() {
            return Err(Error::shape(
                "decoder_embed",
                format!("{rows} encoder rows for {} visible of {}", plan.visible.len(), plan.len()),
            ));
        }
        let w = tape.param(&self.params, "decoder.embed.weight")?;
        let b = tape.param(&self.params, "decoder.embed.bias")?;
        let y = tape.linear(enc, w, Some(b))?;
        let full = if plan.masked.is_empty() {
            y
        } else {
            let token = tape.param(&self.params, "decoder.mask_token")?;
            let fill = tape.gather_rows(token, &vec![0; plan.masked.len()])?;
            let cat = tape.concat_rows(&[y, fill])?;
            tape.gather_rows(cat, &plan.restore_index())?
        };
        let pos = tape.constant(self.dec_pos.clone());
        tape.add(full, pos)
    }

    pub fn decode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let spec = self.spec(&self.config.decoder, false);
        let mut z = x;
        for i in 0..self.config.decoder.blocks {
            z = vit_block_forward(tape, &self.params, &format!("decoder.block{i}"), z, &spec)?;
        }
        Ok(z)
    }

    /// Maps decoder tokens to patch space and keeps the masked rows, in the
    /// plan's ascending masked order. `None` when nothing was masked.
    pub fn reconstruct(&self, tape: &mut Tape, dec: Var, plan: &MaskPlan) -> Result<Option<Var>> {
        let w = tape.param(&self.params, "decoder.recon.weight")?;
        let b = tape.param(&self.params, "decoder.recon.bias")?;
        let r = tape.linear(dec, w, Some(b))?;
        if plan.masked.is_empty() {
            return Ok(None);
        }
        Ok(Some(tape.gather_rows(r, &plan.masked)?))
    }

    /// Full pretraining forward; returns the reconstruction of masked patches.
    pub fn pretrain_forward(&self, tape: &mut Tape, patches: &Tensor, plan: &MaskPlan) -> Result<Option<Var>> {
        let state = self.patch_embed(tape, patches, plan)?;
        let enc = self.encode(tape, &state)?;
        let dec_in = self.decoder_embed(tape, enc, plan)?;
        let dec = self.decode(tape, dec_in)?;
        self.reconstruct(tape, dec, plan)
    }

    /// Feature row `1×D` from an encoder output that starts with a class token.
    pub fn pool(&self, tape: &mut Tape, enc: Var, mode: Pooling) -> Result<Var> {
        let n = tape.shape(enc)[0];
        match mode {
            Pooling::Token => tape.gather_rows(enc, &[0]),
            Pooling::Avg => {
                if n < 2 {
                    return Err(Error::shape("pool", "no patch tokens to average"));
                }
                let rest: Vec<usize> = (1..n).collect();
                let body = tape.gather_rows(enc, &rest)?;
                tape.mean_rows(body)
            }
        }
    }

    /// Task prediction: logits `1×C`, a position `1×3`, or a channel grid
    /// `H×W×C` for channel estimation.
    pub fn predict(&self, tape: &mut Tape, patches: &Tensor) -> Result<Var> {
        let task = self
            .parts
            .task
            .ok_or_else(|| Error::InvalidArgument("model has no task head".into()))?;
        if let Task::Chanest { .. } = task {
            let state = self.embed_all(tape, patches)?;
            let enc = self.encode(tape, &state)?;
            return self.chanest_head(tape, enc);
        }
        let state = self.attach_cls(tape, patches)?;
        let enc = self.encode(tape, &state)?;
        let feat = self.pool(tape, enc, self.config.pooling)?;
        let w = tape.param(&self.params, "head.weight")?;
        let b = tape.param(&self.params, "head.bias")?;
        tape.linear(feat, w, Some(b))
    }

    fn chanest_head(&self, tape: &mut Tape, enc: Var) -> Result<Var> {
        let map = self
            .chanest
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no channel-estimation head".into()))?;
        let tower = head_tower(&self.config);
        let spec = self.spec(&tower, false);
        let z = vit_block_forward(tape, &self.params, "head.block", enc, &spec)?;
        let w = tape.param(&self.params, "head.proj.weight")?;
        let b = tape.param(&self.params, "head.proj.bias")?;
        let tokens = tape.linear(z, w, Some(b))?;
        let s = self.config.image_size;
        let rows = tape.constant(map.rows.clone());
        let cols_t = tape.constant(map.cols_t.clone());
        let mut per_channel = Vec::with_capacity(map.out[2]);
        for index in &map.channel_index {
            let x = tape.gather(tokens, index.clone(), vec![s, s])?;
            let y = tape.matmul(rows, x)?;
            per_channel.push(tape.matmul(y, cols_t)?);
        }
        let cat = if per_channel.len() == 1 {
            per_channel[0]
        } else {
            tape.concat_cols(&per_channel)?
        };
        tape.gather(cat, map.interleave.clone(), map.out.to_vec())
    }

    /// Forward pass without gradient recording.
    pub fn infer(&self, patches: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.predict(&mut tape, patches)?;
        Ok(tape.value(out).clone())
    }

    pub fn patchify(&self, x: &Tensor) -> Result<PatchSeq> {
        crate::signal::patchify(x, self.config.patch_size)
    }
}

fn chanest_map(config: &ModelConfig, out: [usize; 3]) -> Result<ChanestMap> {
    let [h, w, c] = out;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Config(format!("channel-estimation target {out:?} is empty")));
    }
    let s = config.image_size;
    let g = config.grid();
    let p = config.patch_size;
    let rows = Tensor::new(vec![h, s], resize_matrix(s, h))?;
    let cols = Tensor::new(vec![w, s], resize_matrix(s, w))?;
    let mut cols_t = Tensor::zeros(&[s, w]);
    for i in 0..w {
        for j in 0..s {
            cols_t.data_mut()[j * w + i] = cols.get2(i, j);
        }
    }
    let grid_index = crate::signal::unpatchify_index(g, g, p, c);
    let channel_index = (0..c)
        .map(|ch| (0..s * s).map(|yx| grid_index[yx * c + ch]).collect())
        .collect();
    let mut interleave = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                interleave.push(i * (c * w) + ch * w + j);
            }
        }
    }
    Ok(ChanestMap {
        out,
        rows,
        cols_t,
        channel_index,
        interleave,
    })
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let n = t.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * n);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::new(vec![rows.len(), n], data).expect("row selection keeps width")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::sample_mask;

    pub(crate) fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            patch_size: 4,
            channels: 1,
            encoder: TowerConfig {
                blocks: 2,
                dim: 16,
                hidden: 32,
                heads: 2,
            },
            decoder: TowerConfig {
                blocks: 1,
                dim: 8,
                hidden: 16,
                heads: 2,
            },
            ..ModelConfig::default()
        }
    }

    fn patches(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = RngState::new(seed);
        let mut t = Tensor::zeros(&[cfg.num_patches(), cfg.patch_dim()]);
        t.data_mut().iter_mut().for_each(|v| *v = rng.normal());
        t
    }

    #[test]
    fn layout_counts_match_closed_form() {
        let cfg = tiny();
        let m = VitModel::new(cfg.clone(), &mut RngState::new(0)).unwrap();
        assert_eq!(m.params.total(), cfg.encoder_params() + cfg.decoder_params());
    }

    #[test]
    fn zero_input_and_projection_give_positions() {
        let cfg = tiny();
        let mut m = VitModel::new(cfg.clone(), &mut RngState::new(0)).unwrap();
        m.params.get_mut("encoder.patch_embed.weight").unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let plan = MaskPlan::none(4);
        let st = m.patch_embed(&mut tape, &Tensor::zeros(&[4, 16]), &plan).unwrap();
        assert_eq!(tape.value(st.tokens), &posembed_2d(2, 2, 16).unwrap());
    }

    #[test]
    fn decoder_embed_fills_masked_rows_with_token() {
        let cfg = tiny();
        let m = VitModel::new(cfg.clone(), &mut RngState::new(1)).unwrap();
        let plan = sample_mask(4, 0.5, &mut RngState::new(2)).unwrap();
        let mut tape = Tape::new();
        let st = m.patch_embed(&mut tape, &patches(&cfg, 3), &plan).unwrap();
        let enc = m.encode(&mut tape, &st).unwrap();
        let d = m.decoder_embed(&mut tape, enc, &plan).unwrap();
        let v = tape.value(d);
        assert_eq!(v.shape(), &[4, 8]);
        let token = m.params.get("decoder.mask_token").unwrap().data();
        for &pos in &plan.masked {
            for j in 0..8 {
                assert_eq!(v.get2(pos, j), token[j] + m.dec_pos.get2(pos, j));
            }
        }
    }

    #[test]
    fn class_token_sequence_has_extra_row() {
        let cfg = tiny();
        let m = VitModel::new(cfg.clone(), &mut RngState::new(1))
            .unwrap()
            .into_finetune(Task::Classify { classes: 4 }, None, &mut RngState::new(2))
            .unwrap();
        let mut tape = Tape::new();
        let st = m.attach_cls(&mut tape, &patches(&cfg, 0)).unwrap();
        assert_eq!(tape.shape(st.tokens), &[5, 16]);
        let cls = m.params.get("encoder.cls_token").unwrap().data();
        assert_eq!(tape.value(st.tokens).row(0), cls);
        assert!(!m.params.names().any(|n| n.starts_with("decoder.")));
    }

    #[test]
    fn pooling_modes() {
        let cfg = tiny();
        let m = VitModel::new(cfg, &mut RngState::new(0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[9.0, 9.0], &[1.0, 2.0], &[3.0, 4.0]]));
        let t = m.pool(&mut tape, x, Pooling::Token).unwrap();
        let a = m.pool(&mut tape, x, Pooling::Avg).unwrap();
        assert_eq!(tape.value(t).data(), &[9.0, 9.0]);
        assert_eq!(tape.value(a).data(), &[2.0, 3.0]);
    }

    #[test]
    fn chanest_head_emits_target_grid() {
        let cfg = ModelConfig {
            channels: 4,
            ..tiny()
        };
        let task = Task::Chanest {
            height: 6,
            width: 5,
            channels: 2,
        };
        let m = VitModel::new(cfg.clone(), &mut RngState::new(0))
            .unwrap()
            .into_finetune(task, None, &mut RngState::new(1))
            .unwrap();
        let out = m.infer(&patches(&cfg, 4)).unwrap();
        assert_eq!(out.shape(), &[6, 5, 2]);
    }

    #[test]
    fn mismatched_checkpoint_names_tensor() {
        let cfg = tiny();
        let m = VitModel::new(cfg.clone(), &mut RngState::new(0)).unwrap();
        let mut other = cfg;
        other.encoder.hidden = 24;
        let err = VitModel::from_params(other, m.parts.clone(), m.params.clone()).unwrap_err();
        assert!(err.to_string().contains("encoder.block0.mlp.fc1.weight"), "{err}");
    }
}
