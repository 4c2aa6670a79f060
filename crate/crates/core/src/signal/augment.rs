use serde::{Deserialize, Serialize};

use super::{bicubic_resize, GridSample, Modality};
use crate::error::Result;
use crate::tensor::{RngState, Tensor};

/// Random-crop / flip augmentation applied to raw samples before the
/// pre-processing pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub target_size: usize,
    /// Crop area as a fraction of the full grid, drawn uniformly.
    pub min_area: f64,
    pub max_area: f64,
    /// Aspect-ratio bounds of the crop, drawn log-uniformly.
    pub min_aspect: f64,
    pub max_aspect: f64,
    /// Time-axis flip with probability 1/2, spectrograms only.
    pub flip_spectrogram: bool,
    /// Repeat samples of smaller corpora until they match the largest.
    pub oversample: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            enabled: false,
            target_size: 224,
            min_area: 0.7,
            max_area: 1.0,
            min_aspect: 3.0 / 4.0,
            max_aspect: 4.0 / 3.0,
            flip_spectrogram: true,
            oversample: true,
        }
    }
}

pub fn augment(sample: &GridSample, rng: &mut RngState, policy: &AugmentPolicy) -> Result<GridSample> {
    if !policy.enabled {
        return Ok(sample.clone());
    }
    let (h, w, c) = (sample.height(), sample.width(), sample.channels());
    let area = rng.uniform_in(policy.min_area, policy.max_area) * (h * w) as f64;
    let log_aspect = rng.uniform_in(policy.min_aspect.ln(), policy.max_aspect.ln());
    let aspect = log_aspect.exp();
    let ch = ((area / aspect).sqrt().round() as usize).clamp(2.min(h), h);
    let cw = ((area * aspect).sqrt().round() as usize).clamp(2.min(w), w);
    let top = rng.below(h - ch + 1);
    let left = rng.below(w - cw + 1);

    let src = sample.data.data();
    let mut crop = Vec::with_capacity(ch * cw * c);
    for r in top..top + ch {
        let off = (r * w + left) * c;
        crop.extend_from_slice(&src[off..off + cw * c]);
    }
    let mut data = bicubic_resize(&Tensor::new(vec![ch, cw, c], crop)?, (policy.target_size, policy.target_size))?;

    if policy.flip_spectrogram && sample.modality == Modality::Spectrogram && rng.bernoulli(0.5) {
        let n = policy.target_size;
        let flipped = data.clone();
        for r in 0..n {
            for col in 0..n {
                let dst = (r * n + col) * c;
                let s = (r * n + (n - 1 - col)) * c;
                data.data_mut()[dst..dst + c].copy_from_slice(&flipped.data()[s..s + c]);
            }
        }
    }
    let mut out = sample.clone();
    out.data = data;
    Ok(out)
}

/// Index list `(corpus, sample)` that oversamples each corpus to the size of
/// the largest by drawing repeats uniformly, then shuffles the union.
pub fn balance_corpora(sizes: &[usize], rng: &mut RngState) -> Vec<(usize, usize)> {
    let target = sizes.iter().copied().max().unwrap_or(0);
    let mut out = Vec::with_capacity(target * sizes.len());
    for (corpus, &n) in sizes.iter().enumerate() {
        if n == 0 {
            continue;
        }
        out.extend((0..n).map(|i| (corpus, i)));
        out.extend((n..target).map(|_| (corpus, rng.below(n))));
    }
    rng.shuffle(&mut out);
    out
}
