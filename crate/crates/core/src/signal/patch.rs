use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major sequence of flattened `P×P×C` patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSeq {
    /// `N × P²·C`, patch `i` covers grid cell `(i / cols, i % cols)`.
    pub patches: Tensor,
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
    pub channels: usize,
}

impl PatchSeq {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

pub fn patchify(x: &Tensor, p: usize) -> Result<PatchSeq> {
    let &[h, w, c] = x.shape() else {
        return Err(Error::shape("patchify", format!("expected H×W×C, got {:?}", x.shape())));
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape("patchify", format!("patch {p} does not divide {h}x{w}")));
    }
    let (rows, cols) = (h / p, w / p);
    let dim = p * p * c;
    let src = x.data();
    let mut out = vec![0.0; rows * cols * dim];
    for pr in 0..rows {
        for pc in 0..cols {
            let base = (pr * cols + pc) * dim;
            for i in 0..p {
                let src_off = ((pr * p + i) * w + pc * p) * c;
                out[base + i * p * c..base + (i + 1) * p * c].copy_from_slice(&src[src_off..src_off + p * c]);
            }
        }
    }
    Ok(PatchSeq {
        patches: Tensor::new(vec![rows * cols, dim], out)?,
        rows,
        cols,
        patch_size: p,
        channels: c,
    })
}

pub fn unpatchify(seq: &PatchSeq) -> Result<Tensor> {
    let p = seq.patch_size;
    let c = seq.channels;
    let dim = seq.patch_dim();
    if seq.patches.shape() != [seq.len(), dim] {
        return Err(Error::shape(
            "unpatchify",
            format!("patches {:?} vs grid {}x{} dim {dim}", seq.patches.shape(), seq.rows, seq.cols),
        ));
    }
    let (h, w) = (seq.rows * p, seq.cols * p);
    let src = seq.patches.data();
    let mut out = vec![0.0; h * w * c];
    for pr in 0..seq.rows {
        for pc in 0..seq.cols {
            let base = (pr * seq.cols + pc) * dim;
            for i in 0..p {
                let dst_off = ((pr * p + i) * w + pc * p) * c;
                out[dst_off..dst_off + p * c].copy_from_slice(&src[base + i * p * c..base + (i + 1) * p * c]);
            }
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Flat index map from patch layout to image layout, for gathering a
/// `N × P²·C` token matrix into an `H×W×C` grid on a tape.
pub(crate) fn unpatchify_index(rows: usize, cols: usize, p: usize, c: usize) -> Vec<usize> {
    let (h, w) = (rows * p, cols * p);
    let dim = p * p * c;
    let mut index = vec![0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let patch = (y / p) * cols + x / p;
                let inner = ((y % p) * p + x % p) * c + ch;
                index[(y * w + x) * c + ch] = patch * dim + inner;
            }
        }
    }
    index
}
