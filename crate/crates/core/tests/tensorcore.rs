use proptest::prelude::*;
use wavesfm::tensor::{check_gradients, RngState, Tape, Tensor};

const STEP: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Weighted sum with fixed pseudo-random weights, so that every output
/// element contributes a distinct factor to the scalar.
fn weighted_sum(tape: &mut Tape, x: wavesfm::tensor::Var, seed: u64) -> wavesfm::Result<wavesfm::tensor::Var> {
    let shape = tape.shape(x).to_vec();
    let mut rng = RngState::new(seed);
    let w = tape.constant(random(&shape, &mut rng));
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = RngState::new(1);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let report = check_gradients(&[a, b], STEP, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        weighted_sum(t, c, 11)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-6, "{report:?}");
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut rng = RngState::new(2);
    let x = random(&[5, 6], &mut rng);
    let g = random(&[6], &mut rng);
    let b = random(&[6], &mut rng);
    let report = check_gradients(&[x, g, b], STEP, |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-6)?;
        weighted_sum(t, y, 12)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-5, "{report:?}");
}

#[test]
fn gelu_gradient_matches_finite_differences() {
    let mut rng = RngState::new(3);
    let x = random(&[4, 4], &mut rng);
    let report = check_gradients(&[x], STEP, |t, v| {
        let y = t.gelu(v[0]);
        weighted_sum(t, y, 13)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-6, "{report:?}");
}

#[test]
fn softmax_and_structural_ops_pass_gradcheck() {
    let mut rng = RngState::new(4);
    let x = random(&[4, 6], &mut rng);
    let y = random(&[4, 3], &mut rng);
    let report = check_gradients(&[x, y], STEP, |t, v| {
        let s = t.softmax_rows(v[0])?;
        let left = t.slice_cols(s, 1, 3)?;
        let joined = t.concat_cols(&[left, v[1]])?;
        let tr = t.transpose(joined)?;
        let stacked = t.concat_rows(&[tr, tr])?;
        let picked = t.gather_rows(stacked, &[0, 5, 5, 2])?;
        let m = t.mean_rows(picked)?;
        let sq = t.square(m);
        let out = weighted_sum(t, sq, 14)?;
        Ok(t.scale(out, 0.7))
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-4, "{report:?}");
}

#[test]
fn log_and_bias_ops_pass_gradcheck() {
    let mut rng = RngState::new(5);
    let x = random(&[3, 4], &mut rng).map(|v| v.abs() + 0.5);
    let b = random(&[4], &mut rng);
    let report = check_gradients(&[x, b], STEP, |t, v| {
        let l = t.log_clamped(v[0], 1e-12);
        let y = t.add_row(l, v[1])?;
        let z = t.sub(y, v[0])?;
        weighted_sum(t, z, 15)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-6, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_shaped_chain_passes_gradcheck(m in 1usize..=16, k in 1usize..=16, n in 1usize..=16, seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let a = random(&[m, k], &mut rng);
        let w = random(&[k, n], &mut rng);
        let g = random(&[n], &mut rng);
        let report = check_gradients(&[a, w, g.clone(), g], STEP, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.layer_norm(y, v[2], v[3], 1e-5)?;
            let y = t.gelu(y);
            let y = t.softmax_rows(y)?;
            weighted_sum(t, y, seed ^ 1)
        }).unwrap();
        prop_assert!(report.max_rel_error() < 1e-4, "{:?}", report);
    }

    #[test]
    fn softmax_rows_normalized_and_shift_invariant(rows in 1usize..8, cols in 1usize..12, shift in -50.0f64..50.0, seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let x = random(&[rows, cols], &mut rng);
        let shifted = x.map(|v| v + shift);
        let mut tape = Tape::new();
        let a = tape.constant(x);
        let b = tape.constant(shifted);
        let sa = tape.softmax_rows(a).unwrap();
        let sb = tape.softmax_rows(b).unwrap();
        for r in 0..rows {
            let row = tape.value(sa).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            for (p, q) in row.iter().zip(tape.value(sb).row(r)) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn layer_norm_constant_row_and_mean() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[&[3.0, 3.0, 3.0], &[1.0, 2.0, 6.0]]));
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
    let zero = tape.constant(Tensor::zeros(&[3]));
    let y = tape.layer_norm(x, g, zero, 1e-5).unwrap();
    assert_eq!(tape.value(y).row(0), &[0.0, 0.0, 0.0]);
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    let mean: f64 = tape.value(y).row(1).iter().sum::<f64>() / 3.0;
    assert!((mean - 0.5).abs() < 1e-12);
}
