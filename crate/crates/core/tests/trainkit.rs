use proptest::prelude::*;
use wavesfm::model::{AttentionScale, LoraConfig, ModelConfig, Pooling, Task, TowerConfig, VitModel};
use wavesfm::tensor::{check_gradients, ParameterStore, RngState, Tensor};
use wavesfm::train::{
    class_weights, finetune_epoch, layer_scale, loss_mse_position, loss_sce, loss_snr_mse, loss_wce,
    masked_reconstruction_loss, mwm_loss, pretrain_epoch, sample_mask, sce_on_logits, snr_weight, snr_weight_raw,
    softmax, wce_on_logits, weighted_sq_error, Adam, Example, FreezePolicy, OptimConfig, Target, TaskLoss,
    TrainState, SNR_WEIGHT_FLOOR,
};

fn tower(blocks: usize, dim: usize, heads: usize) -> TowerConfig {
    TowerConfig {
        blocks,
        dim,
        hidden: 4 * dim,
        heads,
    }
}

fn tiny(blocks: usize) -> ModelConfig {
    ModelConfig {
        image_size: 8,
        patch_size: 2,
        channels: 1,
        encoder: tower(blocks, 16, 2),
        decoder: tower(1, 16, 2),
        pooling: Pooling::Avg,
        attention_scale: AttentionScale::PerHead,
        ln_eps: 1e-6,
        init_std: 0.02,
    }
}

fn random(shape: &[usize], rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn random_probs(n: usize, c: usize, rng: &mut RngState) -> Tensor {
    softmax(&random(&[n, c], rng)).unwrap()
}

/// Eight smooth 8×8 images, patchified with P = 2.
fn smooth_patches() -> Vec<Tensor> {
    (0..8)
        .map(|k| {
            let mut img = Vec::with_capacity(64);
            for r in 0..8 {
                for c in 0..8 {
                    let phase = k as f64 * 0.8;
                    img.push(2.0 + (0.6 * r as f64 + phase).sin() * (0.4 * c as f64 - phase).cos());
                }
            }
            let t = Tensor::new(vec![8, 8, 1], img).unwrap();
            wavesfm::signal::patchify(&t, 2).unwrap().patches
        })
        .collect()
}

fn pretrain_trace(epochs: usize, lr: f64, seed: u64) -> (Vec<f64>, VitModel) {
    let data = smooth_patches();
    let mut model = VitModel::new(tiny(2), &mut RngState::new(seed)).unwrap();
    let mut opt = OptimConfig::pretrain();
    opt.batch_size = 8;
    opt.epochs = epochs;
    opt.warmup_epochs = 5.min(epochs);
    opt.lr = lr;
    let mut state = TrainState::new(&opt, data.len());
    let mut rng = RngState::new(seed + 1);
    let losses = (0..epochs)
        .map(|_| pretrain_epoch(&data, &mut model, &mut state, &opt, &mut rng).unwrap().loss)
        .collect();
    (losses, model)
}

fn labelled(model: &VitModel, count: usize, classes: usize, seed: u64) -> Vec<Example> {
    let mut rng = RngState::new(seed);
    (0..count)
        .map(|i| Example {
            patches: random(&[model.config.num_patches(), model.config.patch_dim()], &mut rng),
            target: Target::Class(i % classes),
        })
        .collect()
}

#[test]
fn every_index_is_masked_half_the_time() {
    let mut rng = RngState::new(1);
    let draws = 100_000;
    let mut hits = [0u32; 16];
    for _ in 0..draws {
        for &i in &sample_mask(16, 0.5, &mut rng).unwrap().masked {
            hits[i] += 1;
        }
    }
    for (i, &h) in hits.iter().enumerate() {
        let f = h as f64 / draws as f64;
        assert!((f - 0.5).abs() <= 0.01, "index {i} masked with frequency {f}");
    }
}

#[test]
fn mwm_loss_matches_brute_force() {
    let mut rng = RngState::new(2);
    let (m, n, d) = (3, 4, 5);
    let targets = random(&[m * n, d], &mut rng);
    let recon = random(&[m * n, d], &mut rng);
    let mut s = 0.0;
    for i in 0..m * n {
        for j in 0..d {
            let e = targets.data()[i * d + j] - recon.data()[i * d + j];
            s += e * e;
        }
    }
    let want = s / (m * n) as f64;
    assert!((mwm_loss(&targets, &recon, m).unwrap() - want).abs() < 1e-12);
    assert!(mwm_loss(&targets, &random(&[m * n, d + 1], &mut rng), m).is_err());
}

#[test]
fn pretraining_overfits_eight_samples() {
    let (losses, _) = pretrain_trace(200, 1e-2, 3);
    let first = losses[0];
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best <= 0.5 * first, "loss {first:.4} only fell to {best:.4}");
}

#[test]
fn same_seed_gives_identical_traces() {
    let (a, ma) = pretrain_trace(6, 1e-3, 4);
    let (b, mb) = pretrain_trace(6, 1e-3, 4);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ma.params.checksums(), mb.params.checksums());
    let (c, _) = pretrain_trace(6, 1e-3, 5);
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let before = VitModel::new(tiny(2), &mut RngState::new(6)).unwrap();
    let (_, after) = pretrain_trace(3, 0.0, 6);
    assert_eq!(before.params.checksums(), after.params.checksums());
}

#[test]
fn freezing_policies_touch_only_permitted_tensors() {
    let task = Task::Classify { classes: 3 };
    let lora = LoraConfig { rank: 2, alpha: 2.0 };
    let cases: Vec<(FreezePolicy, Option<LoraConfig>)> = vec![
        (FreezePolicy::HeadOnly, None),
        (FreezePolicy::LastN { n: 2 }, None),
        (FreezePolicy::Lora { lora }, Some(lora)),
        (FreezePolicy::Full, None),
    ];
    for (policy, adapters) in cases {
        let mut model = VitModel::new(tiny(4), &mut RngState::new(7))
            .unwrap()
            .into_finetune(task, adapters, &mut RngState::new(8))
            .unwrap();
        let data = labelled(&model, 10, 3, 9);
        let mut opt = OptimConfig::finetune();
        opt.batch_size = 1;
        opt.epochs = 1;
        opt.warmup_epochs = 0;
        let before = model.params.checksums();
        let mut state = TrainState::new(&opt, data.len());
        finetune_epoch(&data, &mut model, &policy, &TaskLoss::Sce { theta: 0.1 }, &mut state, &opt, &mut RngState::new(10))
            .unwrap();
        assert_eq!(state.step, 10);
        let after = model.params.checksums();
        for (name, c) in &before {
            let changed = after[name] != *c;
            assert_eq!(changed, policy.allows(name, 4), "{policy:?}: `{name}` changed = {changed}");
        }
    }
}

#[test]
fn last_two_of_twelve_blocks_train() {
    let policy = FreezePolicy::LastN { n: 2 };
    for b in 0..12 {
        let name = format!("encoder.block{b}.msa.u_qkv");
        assert_eq!(policy.allows(&name, 12), b >= 10, "block {b}");
    }
    assert!(policy.allows("head.weight", 12));
    assert!(!policy.allows("encoder.patch_embed.weight", 12));
}

#[test]
fn smoothed_cross_entropy_matches_double_loop() {
    let mut rng = RngState::new(11);
    let probs = random_probs(4, 6, &mut rng);
    let labels = [5, 0, 3, 3];
    for theta in [0.0, 0.1, 0.4] {
        let mut s = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            for c in 0..6 {
                let t = if c == y { 1.0 - theta } else { 0.0 } + theta / 6.0;
                s -= t * probs.get2(i, c).ln();
            }
        }
        assert!((loss_sce(&probs, &labels, theta).unwrap() - s / 4.0).abs() < 1e-12);
    }
}

#[test]
fn inverse_frequency_weights_by_hand() {
    // Ten samples: six of class 0, three of class 1, one of class 2.
    let labels = [0, 0, 0, 0, 0, 0, 1, 1, 1, 2];
    let beta = class_weights(&labels, 3);
    let want = [10.0 / 18.0, 10.0 / 9.0, 10.0 / 3.0];
    for c in 0..3 {
        assert!((beta[c] - want[c]).abs() < 1e-15);
    }
    let probs = random_probs(10, 3, &mut RngState::new(12));
    let by_hand: f64 = labels.iter().enumerate().map(|(i, &y)| -want[y] * probs.get2(i, y).ln()).sum::<f64>() / 10.0;
    assert!((loss_wce(&probs, &labels, &beta).unwrap() - by_hand).abs() < 1e-12);
    let doubled: Vec<f64> = beta.iter().map(|b| 2.0 * b).collect();
    assert!((loss_wce(&probs, &labels, &doubled).unwrap() - 2.0 * by_hand).abs() < 1e-12);
}

#[test]
fn position_loss_matches_brute_force() {
    let mut rng = RngState::new(13);
    let a = random(&[7, 3], &mut rng);
    let b = random(&[7, 3], &mut rng);
    let want: f64 = (0..21).map(|i| (a.data()[i] - b.data()[i]).powi(2)).sum::<f64>() / 7.0;
    assert!((loss_mse_position(&a, &b).unwrap() - want).abs() < 1e-12);
}

#[test]
fn snr_weighted_loss_matches_brute_force() {
    let mut rng = RngState::new(14);
    let snrs: [f64; 3] = [-8.0, 3.5, 17.0];
    let pred: Vec<Tensor> = (0..3).map(|_| random(&[4, 5, 2], &mut rng)).collect();
    let target: Vec<Tensor> = (0..3).map(|_| random(&[4, 5, 2], &mut rng)).collect();
    let mut s = 0.0;
    for n in 0..3 {
        let w = 10.6 * (0.226 * snrs[n]).exp() - 0.764;
        let d: f64 = pred[n].data().iter().zip(target[n].data()).map(|(p, t)| (p - t) * (p - t)).sum();
        s += w * d;
    }
    let tagged: Vec<Option<f64>> = snrs.iter().map(|&v| Some(v)).collect();
    let got = loss_snr_mse(&pred, &target, &tagged, SNR_WEIGHT_FLOOR).unwrap();
    assert!((got - s / 3.0).abs() < 1e-10 * s.abs());
    assert_eq!(loss_snr_mse(&target, &target, &tagged, SNR_WEIGHT_FLOOR).unwrap(), 0.0);
}

#[test]
fn snr_weight_curve_values() {
    assert!((snr_weight(0.0, SNR_WEIGHT_FLOOR) - 9.836).abs() < 1e-3);
    let ratio = snr_weight(20.0, SNR_WEIGHT_FLOOR) / snr_weight(0.0, SNR_WEIGHT_FLOOR);
    assert!((ratio - 98.9).abs() < 0.5, "ratio {ratio}");
    // Root of 10.6·e^{0.226 s} = 0.764.
    let root = (0.764f64 / 10.6).ln() / 0.226;
    assert!((root + 11.64).abs() < 0.01);
    assert!(snr_weight_raw(root + 1e-6) > 0.0 && snr_weight_raw(root - 1e-6) < 0.0);
    assert_eq!(snr_weight(root - 0.5, SNR_WEIGHT_FLOOR), 0.01);
    assert_eq!(snr_weight(-20.0, SNR_WEIGHT_FLOOR), 0.01);
    assert!(snr_weight(root + 1.0, SNR_WEIGHT_FLOOR) > 0.01);
}

#[test]
fn first_block_of_twelve_gets_power_eleven() {
    let s = layer_scale("encoder.block0.mlp.fc1.weight", 12, 0.75);
    assert!((s - 0.75f64.powi(11)).abs() < 1e-15);
    assert!((s - 0.0422).abs() < 1e-4);
    assert_eq!(layer_scale("encoder.block11.mlp.fc1.weight", 12, 0.75), 1.0);
    assert_eq!(layer_scale("head.weight", 12, 0.75), 1.0);
}

#[test]
fn schedule_endpoints() {
    let mut opt = OptimConfig::finetune();
    opt.lr = 3e-3;
    opt.epochs = 20;
    opt.warmup_epochs = 4;
    let s = opt.schedule(7);
    assert_eq!(s.lr_at(0), 0.0);
    assert!((s.lr_at(28) - 3e-3).abs() < 1e-18);
    assert!(s.lr_at(140).abs() < 1e-12);
}

#[test]
fn adam_matches_hand_trace_on_a_scalar() {
    let mut store = ParameterStore::new();
    store.insert("w.weight", Tensor::scalar(1.5).with_grad());
    let mut opt = OptimConfig::finetune();
    opt.weight_decay = 0.0;
    let mut adam = Adam::new(&opt);
    let grads = [0.4, -1.2, 0.05];
    let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
    let (mut w, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        store.zero_grad();
        store.accumulate_grad("w.weight", &[g]).unwrap();
        adam.step(&mut store, lr, |_| 1.0).unwrap();
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let k = t as i32 + 1;
        w -= lr * (m / (1.0 - b1.powi(k))) / ((v / (1.0 - b2.powi(k))).sqrt() + eps);
        assert!((store.get("w.weight").unwrap().data()[0] - w).abs() < 1e-15, "step {k}");
    }
}

#[test]
fn task_losses_pass_gradient_checks() {
    let mut rng = RngState::new(15);
    let logits = random(&[4, 5], &mut rng);
    let labels = [1, 4, 0, 1];
    let sce = check_gradients(&[logits.clone()], 1e-5, |t, v| sce_on_logits(t, v[0], &labels, 0.1, 0.25)).unwrap();
    assert!(sce.max_rel_error() < 1e-4, "{sce:?}");
    let beta = [0.5, 2.0, 1.0, 1.0, 3.0];
    let wce = check_gradients(&[logits], 1e-5, |t, v| wce_on_logits(t, v[0], &labels, &beta, 0.25)).unwrap();
    assert!(wce.max_rel_error() < 1e-4, "{wce:?}");
    let target = random(&[3, 4], &mut rng);
    let sq = check_gradients(&[random(&[3, 4], &mut rng)], 1e-5, |t, v| weighted_sq_error(t, v[0], &target, 0.7)).unwrap();
    assert!(sq.max_rel_error() < 1e-4, "{sq:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_plans_partition_positions(n in 1usize..300, ratio in 0.0f64..0.99, seed in any::<u64>()) {
        let plan = sample_mask(n, ratio, &mut RngState::new(seed)).unwrap();
        prop_assert_eq!(plan.masked.len(), (ratio * n as f64).floor() as usize);
        prop_assert!(plan.visible.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(plan.masked.windows(2).all(|w| w[0] < w[1]));
        let mut all: Vec<usize> = plan.visible.iter().chain(&plan.masked).cloned().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn visible_targets_never_enter_the_loss(seed in any::<u64>(), ratio in 0.1f64..0.9, by in -1e3f64..1e3) {
        let mut rng = RngState::new(seed);
        let targets = random(&[16, 6], &mut rng);
        let recon = random(&[16, 6], &mut rng);
        let plan = sample_mask(16, ratio, &mut rng).unwrap();
        let base = masked_reconstruction_loss(&recon, &targets, &plan).unwrap();
        let mut moved = targets.clone();
        for &r in &plan.visible {
            moved.data_mut()[r * 6..(r + 1) * 6].iter_mut().for_each(|v| *v += by);
        }
        prop_assert_eq!(masked_reconstruction_loss(&recon, &moved, &plan).unwrap(), base);
    }

    #[test]
    fn schedule_is_continuous_at_warmup_end(lr in 1e-5f64..1.0, warm in 1usize..20, extra in 1usize..200, spe in 1usize..9) {
        let mut opt = OptimConfig::finetune();
        opt.lr = lr;
        opt.warmup_epochs = warm;
        opt.epochs = warm + extra;
        let s = opt.schedule(spe);
        let w = warm * spe;
        // The ramp reaches lr exactly at w, where the cosine branch starts.
        prop_assert!((s.lr_at(w) - lr).abs() < 1e-12 * lr);
        prop_assert!(s.lr_at(w + 1) <= s.lr_at(w));
    }
}
