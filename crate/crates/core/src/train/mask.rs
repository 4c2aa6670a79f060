use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RngState;

/// Random split of `N` patch positions into visible and masked sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Shuffled order of `0..N`; the first `N - ⌊γN⌋` entries are kept.
    pub permutation: Vec<usize>,
    pub ratio: f64,
    /// Kept positions, ascending.
    pub visible: Vec<usize>,
    /// Removed positions, ascending.
    pub masked: Vec<usize>,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// Plan with every position visible.
    pub fn none(n: usize) -> Self {
        Self {
            permutation: (0..n).collect(),
            ratio: 0.0,
            visible: (0..n).collect(),
            masked: Vec::new(),
        }
    }

    /// For every grid position, its row in `[visible; masked]` order.
    pub fn restore_index(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for (row, &pos) in self.visible.iter().chain(&self.masked).enumerate() {
            out[pos] = row;
        }
        out
    }
}

pub fn masked_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).floor() as usize
}

pub fn sample_mask(n: usize, ratio: f64, rng: &mut RngState) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let mut permutation: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut permutation);
    let keep = n - masked_count(n, ratio);
    let mut visible = permutation[..keep].to_vec();
    let mut masked = permutation[keep..].to_vec();
    visible.sort_unstable();
    masked.sort_unstable();
    Ok(MaskPlan {
        permutation,
        ratio,
        visible,
        masked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_split() {
        let plan = sample_mask(196, 0.75, &mut RngState::new(3)).unwrap();
        assert_eq!(plan.visible.len(), 49);
        assert_eq!(plan.masked.len(), 147);
        let mut all: Vec<usize> = plan.visible.iter().chain(&plan.masked).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..196).collect::<Vec<_>>());
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let plan = sample_mask(10, 0.0, &mut RngState::new(0)).unwrap();
        assert!(plan.masked.is_empty());
        assert_eq!(plan.visible, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ratio_out_of_range_rejected() {
        assert!(sample_mask(4, 1.0, &mut RngState::new(0)).is_err());
        assert!(sample_mask(4, -0.1, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn restore_index_inverts_concat_order() {
        let plan = sample_mask(12, 0.5, &mut RngState::new(9)).unwrap();
        let concat: Vec<usize> = plan.visible.iter().chain(&plan.masked).copied().collect();
        let idx = plan.restore_index();
        for pos in 0..12 {
            assert_eq!(concat[idx[pos]], pos);
        }
    }
}
