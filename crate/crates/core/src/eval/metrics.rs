//! Classification, positioning and channel-estimation metrics.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Mean over classes present in the labels of `diag / row sum`.
    pub mean_per_class_accuracy: f64,
    pub overall_accuracy: f64,
    /// Classes without a single labelled sample.
    pub excluded_classes: Vec<usize>,
}

pub fn classification_metrics(preds: &[usize], labels: &[usize], classes: usize) -> Result<ClassificationReport> {
    if preds.len() != labels.len() {
        return Err(Error::shape("classification_metrics", "predictions and labels differ in length"));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no samples to score".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if y >= classes || p >= classes {
            return Err(Error::InvalidArgument(format!("class index outside 0..{classes}")));
        }
        confusion[y][p] += 1;
    }
    let mut excluded = Vec::new();
    let mut acc = Vec::new();
    for (c, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total == 0 {
            excluded.push(c);
        } else {
            acc.push(row[c] as f64 / total as f64);
        }
    }
    if !excluded.is_empty() {
        log::warn!("classes {excluded:?} have no samples and are left out of the mean accuracy");
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(ClassificationReport {
        mean_per_class_accuracy: acc.iter().sum::<f64>() / acc.len() as f64,
        overall_accuracy: correct as f64 / labels.len() as f64,
        confusion,
        excluded_classes: excluded,
    })
}

/// Index of the largest logit in each row.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    let (n, c) = logits.dims2()?;
    Ok((0..n)
        .map(|r| {
            let row = &logits.data()[r * c..(r + 1) * c];
            (0..c).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[0, max]`; the top edge is inclusive.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let hi = values.iter().cloned().fold(0.0, f64::max);
        let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = ((v / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositioningReport {
    pub mean_error: f64,
    /// Population standard deviation.
    pub std_error: f64,
    pub errors: Vec<f64>,
    pub histogram: Histogram,
}

pub const HISTOGRAM_BINS: usize = 20;

pub fn positioning_metrics(preds: &[[f64; 3]], targets: &[[f64; 3]]) -> Result<PositioningReport> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::shape("positioning_metrics", "need equally many non-empty predictions and targets"));
    }
    let errors: Vec<f64> = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)).sqrt())
        .collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(PositioningReport {
        mean_error: mean,
        std_error: var.sqrt(),
        histogram: Histogram::of(&errors, HISTOGRAM_BINS),
        errors,
    })
}

/// Mean squared error per complex entry of a `(…, 2)` real/imaginary grid.
pub fn grid_mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() || target.shape().last() != Some(&2) {
        return Err(Error::shape("grid_mse", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / (target.numel() / 2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub count: usize,
    /// Estimator name to mean per-entry squared error.
    pub mse: IndexMap<String, f64>,
}

impl MseRow {
    pub fn center(&self) -> f64 {
        0.5 * (self.snr_lo + self.snr_hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseTable {
    pub columns: Vec<String>,
    pub rows: Vec<MseRow>,
}

/// Bins `[edges[i], edges[i+1])` with the last bin closed on the right.
/// Every estimator is scored against the same targets; empty bins are omitted.
pub fn mse_vs_snr(estimators: &[(&str, &[Tensor])], targets: &[Tensor], snrs: &[f64], edges: &[f64]) -> Result<MseTable> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("SNR bin edges must be strictly increasing".into()));
    }
    if snrs.len() != targets.len() || estimators.iter().any(|(_, p)| p.len() != targets.len()) {
        return Err(Error::shape("mse_vs_snr", "estimates, targets and SNRs are not aligned"));
    }
    let bins = edges.len() - 1;
    let bin_of = |s: f64| -> Option<usize> {
        if s == edges[bins] {
            return Some(bins - 1);
        }
        (0..bins).find(|&i| s >= edges[i] && s < edges[i + 1])
    };
    let mut sums = vec![vec![0.0; estimators.len()]; bins];
    let mut counts = vec![0usize; bins];
    for (i, (&snr, target)) in snrs.iter().zip(targets).enumerate() {
        let Some(b) = bin_of(snr) else { continue };
        counts[b] += 1;
        for (e, (_, preds)) in estimators.iter().enumerate() {
            sums[b][e] += grid_mse(&preds[i], target)?;
        }
    }
    let rows = (0..bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| MseRow {
            snr_lo: edges[b],
            snr_hi: edges[b + 1],
            count: counts[b],
            mse: estimators
                .iter()
                .enumerate()
                .map(|(e, (name, _))| (name.to_string(), sums[b][e] / counts[b] as f64))
                .collect(),
        })
        .collect();
    Ok(MseTable {
        columns: estimators.iter().map(|(n, _)| n.to_string()).collect(),
        rows,
    })
}

impl MseTable {
    /// Lower edge of the first bin in which `simple` has lower error than `model`.
    pub fn crossover(&self, simple: &str, model: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| matches!((r.mse.get(simple), r.mse.get(model)), (Some(a), Some(b)) if a < b))
            .map(|r| r.snr_lo)
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.mse.get(name).copied()).collect()
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["snr_lo".to_string(), "snr_hi".into(), "count".into()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.snr_lo.to_string(), r.snr_hi.to_string(), r.count.to_string()];
            rec.extend(self.columns.iter().map(|c| r.mse.get(c).map_or(String::new(), |v| v.to_string())));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// First epoch (1-based) whose metric is within 1% of the best.
pub fn convergence_epoch(values: &[f64], higher_is_better: bool) -> Option<usize> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let best = if higher_is_better {
        finite.fold(f64::NEG_INFINITY, f64::max)
    } else {
        finite.fold(f64::INFINITY, f64::min)
    };
    if !best.is_finite() {
        return None;
    }
    let tol = 0.01 * best.abs();
    values
        .iter()
        .position(|&v| if higher_is_better { v >= best - tol } else { v <= best + tol })
        .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = classification_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(r.mean_per_class_accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn constant_prediction_on_balanced_pair() {
        let r = classification_metrics(&[0; 4], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(r.mean_per_class_accuracy, 0.5);
    }

    #[test]
    fn absent_class_is_excluded() {
        let r = classification_metrics(&[0, 0], &[0, 0], 3).unwrap();
        assert_eq!(r.excluded_classes, vec![1, 2]);
        assert_eq!(r.mean_per_class_accuracy, 1.0);
    }

    #[test]
    fn unit_offset_positions() {
        let t = [[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]];
        let p = [[2.0, 2.0, 3.0], [1.0, 0.0, 0.0]];
        let r = positioning_metrics(&p, &t).unwrap();
        assert_eq!((r.mean_error, r.std_error), (1.0, 0.0));
        assert_eq!(positioning_metrics(&t, &t).unwrap().mean_error, 0.0);
        assert_eq!(r.histogram.counts.iter().sum::<usize>(), 2);
    }

    #[test]
    fn crossover_on_crafted_curves() {
        let mk = |lo: f64, ls: f64, model: f64| MseRow {
            snr_lo: lo,
            snr_hi: lo + 5.0,
            count: 1,
            mse: [("ls".to_string(), ls), ("model".to_string(), model)].into_iter().collect(),
        };
        let t = MseTable {
            columns: vec!["ls".into(), "model".into()],
            rows: vec![mk(-10.0, 5.0, 1.0), mk(-5.0, 1.0, 0.5), mk(0.0, 0.3, 0.4), mk(5.0, 0.1, 0.2)],
        };
        assert_eq!(t.crossover("ls", "model"), Some(0.0));
    }

    #[test]
    fn convergence_within_one_percent() {
        assert_eq!(convergence_epoch(&[0.5, 0.8, 0.895, 0.9, 0.7], true), Some(3));
        assert_eq!(convergence_epoch(&[3.0, 1.01, 1.0], false), Some(2));
        assert_eq!(convergence_epoch(&[], false), None);
    }
}
