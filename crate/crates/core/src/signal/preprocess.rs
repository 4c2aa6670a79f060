use serde::{Deserialize, Serialize};

use super::{bicubic_resize, GridSample, Modality};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied before `log10` so empty bins map to -12 instead of -inf.
pub const LOG_FLOOR: f64 = 1e-12;

/// `log10(max(x, floor))`. Negative inputs are rejected.
pub fn log_scale(x: &Tensor, floor: f64) -> Result<Tensor> {
    if let Some(v) = x.data().iter().find(|v| **v < 0.0 || v.is_nan()) {
        return Err(Error::InvalidArgument(format!("log_scale needs x >= 0, found {v}")));
    }
    Ok(x.map(|v| v.max(floor).log10()))
}

/// Dataset-wide statistics: a global range and per-channel moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub min: f64,
    pub max: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DatasetStats {
    /// Single deterministic pass over `H×W×C` tensors in the given order.
    pub fn compute<'a>(items: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for t in items {
            let c = *t.shape().last().ok_or_else(|| Error::shape("stats", "empty shape"))?;
            if sum.is_empty() {
                sum = vec![0.0; c];
                sum_sq = vec![0.0; c];
            } else if sum.len() != c {
                return Err(Error::shape("stats", "channel count differs across samples"));
            }
            for px in t.data().chunks(c) {
                for (ch, &v) in px.iter().enumerate() {
                    min = min.min(v);
                    max = max.max(v);
                    sum[ch] += v;
                    sum_sq[ch] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::DegenerateStats("no samples".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt())
            .collect();
        Ok(Self { min, max, mean, std })
    }

    fn check_range(&self) -> Result<()> {
        if !(self.max > self.min) {
            return Err(Error::DegenerateStats(format!("max {} <= min {}", self.max, self.min)));
        }
        Ok(())
    }

    fn check_std(&self) -> Result<()> {
        if let Some((ch, s)) = self.std.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
            return Err(Error::DegenerateStats(format!("channel {ch} has std {s}")));
        }
        Ok(())
    }
}

/// Affine map of `[stats.min, stats.max]` onto `[lo, hi]`, clamping outliers.
pub fn minmax_normalize(x: &Tensor, stats: &DatasetStats, range: [f64; 2]) -> Result<Tensor> {
    stats.check_range()?;
    let [lo, hi] = range;
    let span = stats.max - stats.min;
    Ok(x.map(|v| (lo + (v - stats.min) / span * (hi - lo)).clamp(lo.min(hi), hi.max(lo))))
}

/// Channel-wise `(x - mean_c) / std_c` over the trailing axis.
pub fn standardize(x: &Tensor, stats: &DatasetStats) -> Result<Tensor> {
    stats.check_std()?;
    channelwise(x, stats, |v, m, s| (v - m) / s)
}

pub fn unstandardize(x: &Tensor, stats: &DatasetStats) -> Result<Tensor> {
    stats.check_std()?;
    channelwise(x, stats, |v, m, s| v * s + m)
}

fn channelwise(x: &Tensor, stats: &DatasetStats, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
    let c = *x.shape().last().unwrap_or(&0);
    if c != stats.mean.len() {
        return Err(Error::shape("standardize", format!("{c} channels vs {} in stats", stats.mean.len())));
    }
    let mut out = x.clone();
    for px in out.data_mut().chunks_mut(c) {
        for (ch, v) in px.iter_mut().enumerate() {
            *v = f(*v, stats.mean[ch], stats.std[ch]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    /// Applied to spectrograms only; other modalities pass through.
    LogScale { floor: f64 },
    MinMax { lo: f64, hi: f64 },
    Resize { size: usize },
    Standardize,
}

/// Ordered pre-processing recipe; statistics are fitted per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub steps: Vec<Step>,
}

impl Pipeline {
    /// log-scale (spectrograms) → [0,1] → resize → standardize.
    pub fn pretrain(image_size: usize) -> Self {
        Self {
            steps: vec![
                Step::LogScale { floor: LOG_FLOOR },
                Step::MinMax { lo: 0.0, hi: 1.0 },
                Step::Resize { size: image_size },
                Step::Standardize,
            ],
        }
    }

    /// Sensing, RF classification and positioning: resize → [0,1] → standardize.
    pub fn finetune(image_size: usize) -> Self {
        Self {
            steps: vec![
                Step::Resize { size: image_size },
                Step::MinMax { lo: 0.0, hi: 1.0 },
                Step::Standardize,
            ],
        }
    }

    /// Channel estimation: [-1,1] → standardize → resize.
    pub fn chanest(image_size: usize) -> Self {
        Self {
            steps: vec![
                Step::MinMax { lo: -1.0, hi: 1.0 },
                Step::Standardize,
                Step::Resize { size: image_size },
            ],
        }
    }

    /// Fits every statistic on the output of the preceding steps.
    pub fn fit(&self, samples: &[GridSample]) -> Result<FittedPipeline> {
        let mut current: Vec<GridSample> = samples.to_vec();
        let mut fitted = Vec::with_capacity(self.steps.len());
        for &step in &self.steps {
            let f = match step {
                Step::LogScale { floor } => FittedStep::LogScale { floor },
                Step::Resize { size } => FittedStep::Resize { size },
                Step::MinMax { lo, hi } => FittedStep::MinMax {
                    range: [lo, hi],
                    stats: DatasetStats::compute(current.iter().map(|s| &s.data))?,
                },
                Step::Standardize => FittedStep::Standardize {
                    stats: DatasetStats::compute(current.iter().map(|s| &s.data))?,
                },
            };
            current = current
                .iter()
                .map(|s| f.apply(s))
                .collect::<Result<Vec<_>>>()?;
            fitted.push(f);
        }
        Ok(FittedPipeline { steps: fitted })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FittedStep {
    LogScale { floor: f64 },
    MinMax { range: [f64; 2], stats: DatasetStats },
    Resize { size: usize },
    Standardize { stats: DatasetStats },
}

impl FittedStep {
    pub fn apply(&self, sample: &GridSample) -> Result<GridSample> {
        let mut out = sample.clone();
        out.data = match self {
            FittedStep::LogScale { floor } if sample.modality == Modality::Spectrogram => {
                log_scale(&sample.data, *floor)?
            }
            FittedStep::LogScale { .. } => sample.data.clone(),
            FittedStep::MinMax { range, stats } => minmax_normalize(&sample.data, stats, *range)?,
            FittedStep::Resize { size } => bicubic_resize(&sample.data, (*size, *size))?,
            FittedStep::Standardize { stats } => standardize(&sample.data, stats)?,
        };
        Ok(out)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FittedStep::LogScale { .. } => "log_scale",
            FittedStep::MinMax { .. } => "minmax",
            FittedStep::Resize { .. } => "resize",
            FittedStep::Standardize { .. } => "standardize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub steps: Vec<FittedStep>,
}

impl FittedPipeline {
    pub fn apply(&self, sample: &GridSample) -> Result<GridSample> {
        let mut s = sample.clone();
        for step in &self.steps {
            s = step.apply(&s)?;
        }
        Ok(s)
    }

    pub fn apply_all(&self, samples: &[GridSample]) -> Result<Vec<GridSample>> {
        samples.iter().map(|s| self.apply(s)).collect()
    }

    pub fn step_names(&self) -> Vec<&'static str> {
        self.steps.iter().map(FittedStep::name).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;

    fn stats(min: f64, max: f64) -> DatasetStats {
        DatasetStats {
            min,
            max,
            mean: vec![0.0],
            std: vec![1.0],
        }
    }

    #[test]
    fn log_scale_values() {
        let x = Tensor::new(vec![3], vec![1.0, 10.0, 100.0]).unwrap();
        assert_eq!(log_scale(&x, LOG_FLOOR).unwrap().data(), &[0.0, 1.0, 2.0]);
        let z = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(log_scale(&z, LOG_FLOOR).unwrap().data(), &[-12.0]);
        let neg = Tensor::new(vec![1], vec![-1.0]).unwrap();
        assert!(log_scale(&neg, LOG_FLOOR).is_err());
    }

    #[test]
    fn minmax_endpoints_and_midpoints() {
        let x = Tensor::new(vec![3], vec![0.0, 5.0, 10.0]).unwrap();
        let out = minmax_normalize(&x, &stats(0.0, 10.0), [0.0, 1.0]).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
        let y = Tensor::new(vec![4], vec![-2.0, 0.0, 2.0, 9.0]).unwrap();
        let out = minmax_normalize(&y, &stats(-2.0, 2.0), [-1.0, 1.0]).unwrap();
        assert_eq!(out.data(), &[-1.0, 0.0, 1.0, 1.0]);
        assert!(minmax_normalize(&y, &stats(1.0, 1.0), [0.0, 1.0]).is_err());
    }

    #[test]
    fn standardize_mean_is_zero_and_constant_channel_errors() {
        let s = DatasetStats {
            min: 0.0,
            max: 1.0,
            mean: vec![2.0, -1.0],
            std: vec![0.5, 3.0],
        };
        let x = Tensor::new(vec![1, 1, 2], vec![2.0, -1.0]).unwrap();
        assert_eq!(standardize(&x, &s).unwrap().data(), &[0.0, 0.0]);

        let flat = Tensor::full(&[2, 2, 1], 4.0);
        let st = DatasetStats::compute([&flat]).unwrap();
        assert!(matches!(standardize(&flat, &st), Err(Error::DegenerateStats(_))));
    }

    #[test]
    fn standardized_split_has_unit_moments() {
        let mut rng = RngState::new(5);
        let data: Vec<Tensor> = (0..20)
            .map(|_| Tensor::new(vec![4, 5, 3], (0..60).map(|i| rng.normal() * (1.0 + i as f64 % 3.0) + 7.0).collect()).unwrap())
            .collect();
        let st = DatasetStats::compute(&data).unwrap();
        let out: Vec<Tensor> = data.iter().map(|t| standardize(t, &st).unwrap()).collect();
        let check = DatasetStats::compute(&out).unwrap();
        for c in 0..3 {
            assert!(check.mean[c].abs() < 1e-6);
            assert!((check.std[c] - 1.0).abs() < 1e-6);
        }
        // inverse affine recovers the input
        let back = unstandardize(&out[3], &st).unwrap();
        assert!(back.max_abs_diff(&data[3]) < 1e-6);
    }

    #[test]
    fn pipeline_orders_match_recipes() {
        let mut rng = RngState::new(1);
        let samples: Vec<GridSample> = (0..4)
            .map(|i| {
                let t = Tensor::new(vec![6, 6, 1], (0..36).map(|_| rng.uniform() * 10.0).collect()).unwrap();
                GridSample::new(t, Modality::Spectrogram, format!("s{i}")).unwrap()
            })
            .collect();
        let pre = Pipeline::pretrain(8).fit(&samples).unwrap();
        assert_eq!(pre.step_names(), ["log_scale", "minmax", "resize", "standardize"]);
        let ft = Pipeline::finetune(8).fit(&samples).unwrap();
        assert_eq!(ft.step_names(), ["resize", "minmax", "standardize"]);
        let ce = Pipeline::chanest(8).fit(&samples).unwrap();
        assert_eq!(ce.step_names(), ["minmax", "standardize", "resize"]);
        let out = pre.apply(&samples[0]).unwrap();
        assert_eq!(out.data.shape(), &[8, 8, 1]);
    }
}
