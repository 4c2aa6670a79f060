use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 1-D sine-cosine code of `pos` in `m` dims: `[sin(pos·ω_k)…, cos(pos·ω_k)…]`
/// for `k < m/2` with `ω_k = 10000^(-2k/m)`.
pub fn sincos_1d(pos: f64, m: usize) -> Vec<f64> {
    let half = m / 2;
    let mut out = vec![0.0; m];
    for k in 0..half {
        let omega = 10000f64.powf(-2.0 * k as f64 / m as f64);
        out[k] = (pos * omega).sin();
        out[half + k] = (pos * omega).cos();
    }
    out
}

/// Fixed 2-D positional table for a `rows×cols` patch grid, row-major.
/// The first `d/2` dims encode the row, the last `d/2` the column.
pub fn posembed_2d(rows: usize, cols: usize, d: usize) -> Result<Tensor> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::InvalidArgument(format!("positional dim {d} must be divisible by 4")));
    }
    let m = d / 2;
    let mut data = Vec::with_capacity(rows * cols * d);
    for r in 0..rows {
        let row_code = sincos_1d(r as f64, m);
        for c in 0..cols {
            data.extend_from_slice(&row_code);
            data.extend(sincos_1d(c as f64, m));
        }
    }
    Tensor::new(vec![rows * cols, d], data)
}

/// The 2-D table with a leading all-zero row for the class token.
pub fn posembed_with_cls(rows: usize, cols: usize, d: usize) -> Result<Tensor> {
    let grid = posembed_2d(rows, cols, d)?;
    let mut data = vec![0.0; d];
    data.extend_from_slice(grid.data());
    Tensor::new(vec![rows * cols + 1, d], data)
}
