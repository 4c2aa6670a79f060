//! Task losses, each in two forms: a tape version used for training and a
//! plain version on tensors used for evaluation.

use serde::{Deserialize, Serialize};

use super::mask::MaskPlan;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default lower clamp of the SNR weight curve.
pub const SNR_WEIGHT_FLOOR: f64 = 0.01;

/// `10.6·e^{0.226·SNR} − 0.764`, clamped below.
pub fn snr_weight(snr_db: f64, floor: f64) -> f64 {
    (10.6 * (0.226 * snr_db).exp() - 0.764).max(floor)
}

/// Unclamped weight curve; negative below about −11.64 dB.
pub fn snr_weight_raw(snr_db: f64) -> f64 {
    10.6 * (0.226 * snr_db).exp() - 0.764
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskLoss {
    /// Label-smoothed cross entropy.
    Sce { theta: f64 },
    /// Class-weighted cross entropy.
    Wce { beta: Vec<f64> },
    /// Squared Euclidean error of the predicted position.
    PositionMse,
    /// Squared error of the channel grid, weighted by the sample's SNR.
    SnrMse {
        #[serde(default = "default_snr_floor")]
        floor: f64,
    },
}

fn default_snr_floor() -> f64 {
    SNR_WEIGHT_FLOOR
}

fn smoothed_targets(labels: &[usize], classes: usize, theta: f64) -> Result<Vec<f64>> {
    let mut t = vec![theta / classes as f64; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidArgument(format!("label {y} of {classes} classes")));
        }
        t[i * classes + y] += 1.0 - theta;
    }
    Ok(t)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("smoothing {theta} outside [0, 1)")));
    }
    Ok(())
}

fn check_rows(probs: &Tensor, n: usize, op: &'static str) -> Result<(usize, usize)> {
    let (rows, c) = probs.dims2()?;
    if rows != n {
        return Err(Error::shape(op, format!("{rows} rows for {n} labels")));
    }
    Ok((rows, c))
}

/// `−(1/N) Σ_i Σ_c (y(1−θ) + θ/C) · log p̂` with `log` floored at 1e-12.
pub fn loss_sce(probs: &Tensor, labels: &[usize], theta: f64) -> Result<f64> {
    check_theta(theta)?;
    let (n, c) = check_rows(probs, labels.len(), "loss_sce")?;
    let t = smoothed_targets(labels, c, theta)?;
    let s: f64 = probs.data().iter().zip(&t).map(|(&p, &w)| w * p.max(PROB_FLOOR).ln()).sum();
    Ok(-s / n as f64)
}

/// `−(1/N) Σ_i β_{y_i} · log p̂_{y_i}`.
pub fn loss_wce(probs: &Tensor, labels: &[usize], beta: &[f64]) -> Result<f64> {
    let (n, c) = check_rows(probs, labels.len(), "loss_wce")?;
    check_beta(beta, c)?;
    let mut s = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::InvalidArgument(format!("label {y} of {c} classes")));
        }
        s += beta[y] * probs.get2(i, y).max(PROB_FLOOR).ln();
    }
    Ok(-s / n as f64)
}

fn check_beta(beta: &[f64], classes: usize) -> Result<()> {
    if beta.len() != classes {
        return Err(Error::shape("loss_wce", format!("{} weights for {classes} classes", beta.len())));
    }
    if beta.iter().any(|b| !(*b >= 0.0)) {
        return Err(Error::InvalidArgument("class weights must be non-negative".into()));
    }
    Ok(())
}

/// Inverse-frequency weights `N_total / (C · N_i)`; absent classes get 0.
pub fn class_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        if y < classes {
            counts[y] += 1;
        }
    }
    counts
        .iter()
        .map(|&n| {
            if n == 0 {
                0.0
            } else {
                labels.len() as f64 / (classes * n) as f64
            }
        })
        .collect()
}

/// `(1/N) Σ ‖r̂ − r‖²` over `N×3` positions.
pub fn loss_mse_position(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss_mse_position", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let (n, _) = pred.dims2()?;
    Ok(sq_dist(pred.data(), target.data()) / n as f64)
}

/// `(1/(M·Ñ)) Σ ‖x − x̂‖²` where the inputs stack `M·Ñ` masked patches.
pub fn mwm_loss(targets: &Tensor, recon: &Tensor, batch: usize) -> Result<f64> {
    if targets.shape() != recon.shape() {
        return Err(Error::shape("mwm_loss", format!("{:?} vs {:?}", targets.shape(), recon.shape())));
    }
    let (rows, _) = targets.dims2()?;
    if batch == 0 || rows % batch != 0 {
        return Err(Error::shape("mwm_loss", format!("{rows} rows over batch {batch}")));
    }
    Ok(sq_dist(targets.data(), recon.data()) / rows as f64)
}

/// Per-sample reconstruction loss from a full `N×P²C` reconstruction:
/// only rows listed in `plan.masked` contribute, averaged over their count.
pub fn masked_reconstruction_loss(recon_all: &Tensor, targets: &Tensor, plan: &MaskPlan) -> Result<f64> {
    if recon_all.shape() != targets.shape() {
        return Err(Error::shape(
            "masked_reconstruction_loss",
            format!("{:?} vs {:?}", recon_all.shape(), targets.shape()),
        ));
    }
    let (n, _) = targets.dims2()?;
    if plan.len() != n {
        return Err(Error::shape("masked_reconstruction_loss", "mask plan length differs from row count"));
    }
    if plan.masked.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = plan.masked.iter().map(|&r| sq_dist(recon_all.row(r), targets.row(r))).sum();
    Ok(s / plan.masked.len() as f64)
}

/// `(1/N) Σ_n w(SNR_n) · ‖h_n − ĥ_n‖²`.
pub fn loss_snr_mse(pred: &[Tensor], target: &[Tensor], snr_db: &[Option<f64>], floor: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != snr_db.len() {
        return Err(Error::shape("loss_snr_mse", "batch lengths differ"));
    }
    let mut s = 0.0;
    for ((p, t), snr) in pred.iter().zip(target).zip(snr_db) {
        if p.shape() != t.shape() {
            return Err(Error::shape("loss_snr_mse", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let snr = snr.ok_or_else(|| Error::InvalidArgument("sample has no SNR".into()))?;
        s += snr_weight(snr, floor) * sq_dist(p.data(), t.data());
    }
    Ok(s / pred.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σ ‖pred − target‖² · weight` on the tape.
pub fn weighted_sq_error(tape: &mut Tape, pred: Var, target: &Tensor, weight: f64) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(Error::shape(
            "squared error",
            format!("{:?} vs {:?}", tape.shape(pred), target.shape()),
        ));
    }
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.square(diff);
    let s = tape.sum(sq);
    Ok(tape.scale(s, weight))
}

/// Label-smoothed cross entropy on logits, scaled by `weight`.
pub fn sce_on_logits(tape: &mut Tape, logits: Var, labels: &[usize], theta: f64, weight: f64) -> Result<Var> {
    check_theta(theta)?;
    let (n, c) = tape.value(logits).dims2()?;
    if n != labels.len() {
        return Err(Error::shape("sce", format!("{n} rows for {} labels", labels.len())));
    }
    let t = Tensor::new(vec![n, c], smoothed_targets(labels, c, theta)?)?;
    cross_entropy(tape, logits, t, weight)
}

/// Class-weighted cross entropy on logits, scaled by `weight`.
pub fn wce_on_logits(tape: &mut Tape, logits: Var, labels: &[usize], beta: &[f64], weight: f64) -> Result<Var> {
    let (n, c) = tape.value(logits).dims2()?;
    if n != labels.len() {
        return Err(Error::shape("wce", format!("{n} rows for {} labels", labels.len())));
    }
    check_beta(beta, c)?;
    let mut t = Tensor::zeros(&[n, c]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::InvalidArgument(format!("label {y} of {c} classes")));
        }
        t.data_mut()[i * c + y] = beta[y];
    }
    cross_entropy(tape, logits, t, weight)
}

fn cross_entropy(tape: &mut Tape, logits: Var, target_weights: Tensor, weight: f64) -> Result<Var> {
    let p = tape.softmax_rows(logits)?;
    let lp = tape.log_clamped(p, PROB_FLOOR);
    let t = tape.constant(target_weights);
    let prod = tape.mul(lp, t)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, -weight))
}

/// Row-wise softmax of a logit matrix.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, c) = logits.dims2()?;
    let mut out = logits.clone();
    for r in 0..n {
        crate::tensor::softmax_in_place(&mut out.data_mut()[r * c..(r + 1) * c]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;

    fn random_probs(n: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = RngState::new(seed);
        let mut t = Tensor::zeros(&[n, c]);
        t.data_mut().iter_mut().for_each(|v| *v = rng.normal());
        softmax(&t).unwrap()
    }

    #[test]
    fn sce_perfect_prediction_without_smoothing_is_zero() {
        let p = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(loss_sce(&p, &[0, 2], 0.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn sce_true_class_weight() {
        let t = smoothed_targets(&[2], 6, 0.1).unwrap();
        assert!((t[2] - 0.916_666_666_666_666_7).abs() < 1e-15);
        assert!((t[0] - 0.1 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn sce_matches_double_loop() {
        let p = random_probs(4, 6, 1);
        let labels = [0, 5, 2, 2];
        let theta = 0.1;
        let mut s = 0.0;
        for i in 0..4 {
            for c in 0..6 {
                let y = if labels[i] == c { 1.0 } else { 0.0 };
                s += (y * (1.0 - theta) + theta / 6.0) * p.get2(i, c).ln();
            }
        }
        assert!((loss_sce(&p, &labels, theta).unwrap() + s / 4.0).abs() < 1e-12);
    }

    #[test]
    fn wce_unit_weights_is_cross_entropy_and_linear() {
        let p = random_probs(5, 3, 2);
        let labels = [0, 1, 2, 1, 0];
        let ce = loss_sce(&p, &labels, 0.0).unwrap();
        assert!((loss_wce(&p, &labels, &[1.0; 3]).unwrap() - ce).abs() < 1e-12);
        assert!((loss_wce(&p, &labels, &[2.0; 3]).unwrap() - 2.0 * ce).abs() < 1e-12);
    }

    #[test]
    fn inverse_frequency_weights_by_hand() {
        // 6 samples: class 0 ×3, class 1 ×2, class 2 ×1.
        let w = class_weights(&[0, 0, 0, 1, 1, 2], 3);
        assert_eq!(w, vec![6.0 / 9.0, 1.0, 2.0]);
    }

    #[test]
    fn position_mse_unit_offset() {
        let a = Tensor::from_rows(&[&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]]);
        let b = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[1.0, 2.0, 2.0]]);
        assert_eq!(loss_mse_position(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_mse_position(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn mwm_single_patch() {
        let x = Tensor::from_rows(&[&[1.0, 1.0]]);
        assert_eq!(mwm_loss(&x, &Tensor::zeros(&[1, 2]), 1).unwrap(), 2.0);
    }

    #[test]
    fn snr_weight_anchor_and_clamp() {
        assert!((snr_weight(0.0, 0.01) - 9.836).abs() < 1e-3);
        assert_eq!(snr_weight(-20.0, 0.01), 0.01);
    }

    #[test]
    fn snr_mse_requires_snr() {
        let t = Tensor::zeros(&[2, 2]);
        assert!(loss_snr_mse(&[t.clone()], &[t], &[None], 0.01).is_err());
    }

    #[test]
    fn tape_losses_match_plain_versions() {
        let mut rng = RngState::new(8);
        let mut logits = Tensor::zeros(&[3, 4]);
        logits.data_mut().iter_mut().for_each(|v| *v = rng.normal());
        let labels = [3, 0, 1];
        let probs = softmax(&logits).unwrap();
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let sce = sce_on_logits(&mut tape, l, &labels, 0.1, 1.0 / 3.0).unwrap();
        let wce = wce_on_logits(&mut tape, l, &labels, &[0.5, 1.0, 2.0, 3.0], 1.0 / 3.0).unwrap();
        assert!((tape.value(sce).data()[0] - loss_sce(&probs, &labels, 0.1).unwrap()).abs() < 1e-12);
        assert!((tape.value(wce).data()[0] - loss_wce(&probs, &labels, &[0.5, 1.0, 2.0, 3.0]).unwrap()).abs() < 1e-12);
    }
}
