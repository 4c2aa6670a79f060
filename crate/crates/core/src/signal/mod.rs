//! Wireless sample representation and pre-processing: scaling, normalization,
//! resizing, patch geometry, positional codes, augmentation and the on-disk
//! sample archive.

mod archive;
mod augment;
mod patch;
mod posembed;
mod preprocess;
mod resize;

pub use archive::{read_archive, read_tensor, write_archive, write_tensor, ArchiveMeta, Dtype, ManifestEntry};
pub use augment::{augment, balance_corpora, AugmentPolicy};
pub use patch::{patchify, unpatchify, PatchSeq};
pub(crate) use patch::unpatchify_index;
pub use posembed::{posembed_2d, posembed_with_cls, sincos_1d};
pub use preprocess::{
    log_scale, minmax_normalize, standardize, unstandardize, DatasetStats, FittedPipeline, FittedStep, Pipeline,
    Step, LOG_FLOOR,
};
pub use resize::{bicubic_resize, resize_matrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Spectrogram,
    Csi,
    OfdmGrid,
}

/// One image-like wireless sample of shape `H×W×C` plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub data: Tensor,
    pub modality: Modality,
    pub label: Option<usize>,
    pub position: Option<[f64; 3]>,
    pub snr_db: Option<f64>,
    pub sample_id: String,
    /// Regression target grid, used by channel estimation.
    pub target: Option<Tensor>,
}

impl GridSample {
    pub fn new(data: Tensor, modality: Modality, sample_id: impl Into<String>) -> Result<Self> {
        if data.rank() != 3 || data.shape().iter().any(|&d| d == 0) {
            return Err(Error::shape("grid_sample", format!("expected H×W×C, got {:?}", data.shape())));
        }
        Ok(Self {
            data,
            modality,
            label: None,
            position: None,
            snr_db: None,
            sample_id: sample_id.into(),
            target: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_position(mut self, position: [f64; 3]) -> Self {
        self.position = Some(position);
        self
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = Some(snr_db);
        self
    }

    pub fn with_target(mut self, target: Tensor) -> Self {
        self.target = Some(target);
        self
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }
}
