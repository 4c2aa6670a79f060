//! Separable bicubic resampling with the Catmull-Rom kernel (a = -0.5),
//! half-pixel centers (align-corners off) and clamped edges.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four (source index, weight) taps per output position.
fn taps(len_in: usize, len_out: usize) -> Vec<[(usize, f64); 4]> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|i| {
            let src = (i as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let weights = [cubic(1.0 + t), cubic(t), cubic(1.0 - t), cubic(2.0 - t)];
            let mut out = [(0usize, 0.0); 4];
            for (k, w) in weights.into_iter().enumerate() {
                let idx = (base as i64 - 1 + k as i64).clamp(0, len_in as i64 - 1) as usize;
                out[k] = (idx, w);
            }
            out
        })
        .collect()
}

/// Dense `len_out × len_in` interpolation matrix for one axis.
pub fn resize_matrix(len_in: usize, len_out: usize) -> Vec<f64> {
    let mut m = vec![0.0; len_out * len_in];
    if len_in == len_out {
        for i in 0..len_in {
            m[i * len_in + i] = 1.0;
        }
        return m;
    }
    for (i, row) in taps(len_in, len_out).into_iter().enumerate() {
        for (j, w) in row {
            m[i * len_in + j] += w;
        }
    }
    m
}

/// Resizes an `H×W×C` tensor to `out.0 × out.1 × C`.
pub fn bicubic_resize(x: &Tensor, out: (usize, usize)) -> Result<Tensor> {
    let [h, w, c] = match x.shape() {
        &[h, w, c] => [h, w, c],
        other => return Err(Error::shape("bicubic_resize", format!("expected H×W×C, got {other:?}"))),
    };
    let (oh, ow) = out;
    if oh < 1 || ow < 1 {
        return Err(Error::InvalidArgument(format!("resize target {oh}x{ow}")));
    }
    if (oh, ow) == (h, w) {
        return Ok(x.clone());
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("resize source {h}x{w} is empty")));
    }
    let src = x.data();
    // Horizontal pass: h × ow × c.
    let mut mid = vec![0.0; h * ow * c];
    if ow == w {
        mid.copy_from_slice(src);
    } else {
        let tw = taps(w, ow);
        for r in 0..h {
            for (j, row_taps) in tw.iter().enumerate() {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for &(idx, wt) in row_taps {
                        acc += wt * src[(r * w + idx) * c + ch];
                    }
                    mid[(r * ow + j) * c + ch] = acc;
                }
            }
        }
    }
    if oh == h {
        return Tensor::new(vec![oh, ow, c], mid);
    }
    let th = taps(h, oh);
    let mut dst = vec![0.0; oh * ow * c];
    for (i, col_taps) in th.iter().enumerate() {
        for j in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(idx, wt) in col_taps {
                    acc += wt * mid[(idx * ow + j) * c + ch];
                }
                dst[(i * ow + j) * c + ch] = acc;
            }
        }
    }
    Tensor::new(vec![oh, ow, c], dst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for t in [0.0, 0.1, 0.37, 0.5, 0.99] {
            let s = cubic(1.0 + t) + cubic(t) + cubic(1.0 - t) + cubic(2.0 - t);
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let x = Tensor::full(&[7, 5, 2], 3.25);
        for target in [(14, 10), (3, 3), (7, 9)] {
            let y = bicubic_resize(&x, target).unwrap();
            assert!(y.data().iter().all(|v| (v - 3.25).abs() < 1e-12));
        }
    }

    #[test]
    fn identity_size_is_bit_equal() {
        let x = Tensor::new(vec![3, 4, 1], (0..12).map(|v| (v as f64).sqrt()).collect()).unwrap();
        assert_eq!(bicubic_resize(&x, (3, 4)).unwrap(), x);
    }

    #[test]
    fn ramp_upscale_is_exact_in_interior() {
        // f(r, c) = 2r - 0.5c + 1 sampled at pixel centers.
        let f = |r: f64, c: f64| 2.0 * r - 0.5 * c + 1.0;
        let mut data = Vec::new();
        for r in 0..8 {
            for c in 0..8 {
                data.push(f(r as f64, c as f64));
            }
        }
        let x = Tensor::new(vec![8, 8, 1], data).unwrap();
        let y = bicubic_resize(&x, (32, 32)).unwrap();
        let src = |i: usize| (i as f64 + 0.5) / 4.0 - 0.5;
        // Taps stay inside the image when 1 <= floor(src) <= 5.
        for i in 0..32 {
            for j in 0..32 {
                let (si, sj) = (src(i), src(j));
                if si.floor() < 1.0 || si.floor() > 5.0 || sj.floor() < 1.0 || sj.floor() > 5.0 {
                    continue;
                }
                assert!((y.data()[i * 32 + j] - f(si, sj)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matrix_matches_resize() {
        let x = Tensor::new(vec![5, 1, 1], vec![1.0, 4.0, -2.0, 0.5, 3.0]).unwrap();
        let y = bicubic_resize(&x, (9, 1)).unwrap();
        let m = resize_matrix(5, 9);
        for i in 0..9 {
            let v: f64 = (0..5).map(|j| m[i * 5 + j] * x.data()[j]).sum();
            assert!((v - y.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_target_rejected() {
        assert!(bicubic_resize(&Tensor::zeros(&[4, 4, 1]), (0, 4)).is_err());
    }
}
