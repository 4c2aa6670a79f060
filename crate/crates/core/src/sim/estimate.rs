//! Classical pilot-based channel estimators.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::ofdm::{ChannelModel, CsiGrid};
use crate::error::{Error, Result};
use crate::tensor::RngState;

/// Added to the diagonal before every inversion.
pub const REGULARIZATION: f64 = 1e-9;

/// `Ĥ = rx / tx` at each pilot symbol, per antenna and subcarrier.
pub fn ls_estimate(tx_pilots: &CsiGrid, rx: &CsiGrid) -> Result<CsiGrid> {
    if tx_pilots.symbols != rx.symbols || tx_pilots.subcarriers != rx.subcarriers || tx_pilots.antennas != 1 {
        return Err(Error::shape("ls_estimate", "pilot grid does not match received grid"));
    }
    if tx_pilots.data.iter().any(|p| p.norm_sqr() == 0.0) {
        return Err(Error::InvalidArgument("zero pilot".into()));
    }
    let mut out = rx.clone();
    for a in 0..rx.antennas {
        for s in 0..rx.symbols {
            for k in 0..rx.subcarriers {
                out.set(a, s, k, rx.get(a, s, k) / tx_pilots.get(0, s, k));
            }
        }
    }
    Ok(out)
}

/// Linear interpolation over symbol index between pilot symbols, linear
/// extrapolation outside them; a single pilot is held constant.
pub fn interpolate_pilots(pilot_csi: &CsiGrid, pilot_symbols: &[usize], n_symbols: usize) -> Result<CsiGrid> {
    if pilot_symbols.is_empty() || pilot_symbols.len() != pilot_csi.symbols {
        return Err(Error::shape("interpolate_pilots", "pilot index list does not match the grid"));
    }
    if pilot_symbols.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("pilot symbols must be strictly increasing".into()));
    }
    let mut out = CsiGrid::zeros(pilot_csi.antennas, n_symbols, pilot_csi.subcarriers);
    for s in 0..n_symbols {
        // Segment whose endpoints bracket s (or the nearest one for extrapolation).
        let (i0, i1) = if pilot_symbols.len() == 1 {
            (0, 0)
        } else {
            let seg = pilot_symbols.windows(2).position(|w| s <= w[1]).unwrap_or(pilot_symbols.len() - 2);
            (seg, seg + 1)
        };
        let (p0, p1) = (pilot_symbols[i0] as f64, pilot_symbols[i1] as f64);
        let t = if i0 == i1 { 0.0 } else { (s as f64 - p0) / (p1 - p0) };
        for a in 0..pilot_csi.antennas {
            for k in 0..pilot_csi.subcarriers {
                let v = pilot_csi.get(a, i0, k) * (1.0 - t) + pilot_csi.get(a, i1, k) * t;
                out.set(a, s, k, v);
            }
        }
    }
    Ok(out)
}

/// Second-order channel statistics across subcarriers and symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    pub freq: DMatrix<Complex64>,
    pub time: DMatrix<Complex64>,
}

impl Covariances {
    pub fn identity(subcarriers: usize, symbols: usize) -> Self {
        Self {
            freq: DMatrix::identity(subcarriers, subcarriers),
            time: DMatrix::identity(symbols, symbols),
        }
    }
}

/// Sample covariances from `draws` simulated channels, averaged over
/// antennas and symbols (frequency) or antennas and subcarriers (time).
pub fn estimate_covariances(model: &ChannelModel, draws: usize, rng: &mut RngState) -> Covariances {
    let cfg = &model.cfg;
    let (a_n, s_n, k_n) = (cfg.n_rx_antennas, cfg.n_symbols, cfg.n_subcarriers);
    let mut rf = DMatrix::<Complex64>::zeros(k_n, k_n);
    let mut rt = DMatrix::<Complex64>::zeros(s_n, s_n);
    for _ in 0..draws {
        let h = model.draw_channel(rng);
        for a in 0..a_n {
            for s in 0..s_n {
                let base = h.idx(a, s, 0);
                let row = &h.data[base..base + k_n];
                for i in 0..k_n {
                    for j in 0..k_n {
                        rf[(i, j)] += row[i] * row[j].conj();
                    }
                }
            }
            for k in 0..k_n {
                for i in 0..s_n {
                    let hi = h.get(a, i, k);
                    for j in 0..s_n {
                        rt[(i, j)] += hi * h.get(a, j, k).conj();
                    }
                }
            }
        }
    }
    let nf = (draws * a_n * s_n).max(1) as f64;
    let nt = (draws * a_n * k_n).max(1) as f64;
    Covariances {
        freq: rf.map(|v| v / nf),
        time: rt.map(|v| v / nt),
    }
}

fn regularized_inverse(m: DMatrix<Complex64>, extra: f64) -> Result<DMatrix<Complex64>> {
    let n = m.nrows();
    let shifted = m + DMatrix::<Complex64>::identity(n, n).map(|v| v * (extra + REGULARIZATION));
    shifted
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("covariance system is singular".into()))
}

/// Precomputed frequency smoother and time interpolator for one noise level.
#[derive(Debug, Clone)]
pub struct LmmseFilter {
    freq: DMatrix<Complex64>,
    time: DMatrix<Complex64>,
    pilot_symbols: Vec<usize>,
}

impl LmmseFilter {
    /// `noise_var` is the per-element LS error variance `σ²/|p|²`.
    pub fn new(cov: &Covariances, pilot_symbols: &[usize], noise_var: f64) -> Result<Self> {
        let k_n = cov.freq.nrows();
        let s_n = cov.time.nrows();
        if pilot_symbols.iter().any(|&p| p >= s_n) || pilot_symbols.is_empty() {
            return Err(Error::shape("lmmse", "pilot symbols outside the time covariance"));
        }
        let freq = &cov.freq * regularized_inverse(cov.freq.clone(), noise_var)?;
        // Residual error variance per element after frequency smoothing.
        let residual = ((&cov.freq - &freq * &cov.freq).trace().re / k_n as f64).max(0.0);
        let p_n = pilot_symbols.len();
        let rpp = DMatrix::from_fn(p_n, p_n, |i, j| cov.time[(pilot_symbols[i], pilot_symbols[j])]);
        let rsp = DMatrix::from_fn(s_n, p_n, |s, j| cov.time[(s, pilot_symbols[j])]);
        let time = rsp * regularized_inverse(rpp, residual)?;
        Ok(Self {
            freq,
            time,
            pilot_symbols: pilot_symbols.to_vec(),
        })
    }

    pub fn apply(&self, ls: &CsiGrid) -> Result<CsiGrid> {
        let k_n = self.freq.nrows();
        let s_n = self.time.nrows();
        if ls.subcarriers != k_n || ls.symbols != self.pilot_symbols.len() {
            return Err(Error::shape("lmmse", "LS grid does not match the filter"));
        }
        let mut smoothed = ls.clone();
        for a in 0..ls.antennas {
            for i in 0..ls.symbols {
                let base = ls.idx(a, i, 0);
                let x = nalgebra::DVector::from_column_slice(&ls.data[base..base + k_n]);
                let y = &self.freq * x;
                smoothed.data[base..base + k_n].copy_from_slice(y.as_slice());
            }
        }
        let mut out = CsiGrid::zeros(ls.antennas, s_n, k_n);
        for a in 0..ls.antennas {
            for s in 0..s_n {
                for k in 0..k_n {
                    let v: Complex64 = (0..ls.symbols).map(|i| self.time[(s, i)] * smoothed.get(a, i, k)).sum();
                    out.set(a, s, k, v);
                }
            }
        }
        Ok(out)
    }
}

/// Frequency smoothing `R_f(R_f + σ²I)⁻¹` of the LS pilots followed by time
/// interpolation through the pilot/data cross-covariance.
pub fn lmmse_estimate(ls: &CsiGrid, cov: &Covariances, pilot_symbols: &[usize], noise_var: f64) -> Result<CsiGrid> {
    LmmseFilter::new(cov, pilot_symbols, noise_var)?.apply(ls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ofdm::OfdmConfig;

    #[test]
    fn noiseless_ls_recovers_channel() {
        let m = ChannelModel::new(&OfdmConfig::default()).unwrap();
        let d = m.draw(f64::INFINITY, &mut RngState::new(0));
        let ls = ls_estimate(&d.tx_pilots, &d.rx).unwrap();
        for a in 0..4 {
            for (i, &s) in m.cfg.pilot_symbols.iter().enumerate() {
                for k in 0..64 {
                    assert!((ls.get(a, i, k) - d.channel.h.get(a, s, k)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_pilot_rejected() {
        let mut tx = CsiGrid::zeros(1, 2, 3);
        tx.data.iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        tx.data[4] = Complex64::new(0.0, 0.0);
        assert!(ls_estimate(&tx, &CsiGrid::zeros(2, 2, 3)).is_err());
    }

    #[test]
    fn interpolation_passes_through_pilots_and_holds_constants() {
        let mut p = CsiGrid::zeros(1, 2, 1);
        p.set(0, 0, 0, Complex64::new(1.0, 0.0));
        p.set(0, 1, 0, Complex64::new(1.0, 0.0));
        let full = interpolate_pilots(&p, &[2, 11], 14).unwrap();
        assert!(full.data.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));

        // Linear drift h(s) = s: every symbol is exact.
        p.set(0, 0, 0, Complex64::new(2.0, 0.0));
        p.set(0, 1, 0, Complex64::new(11.0, 0.0));
        let full = interpolate_pilots(&p, &[2, 11], 14).unwrap();
        for s in 0..14 {
            assert!((full.get(0, s, 0).re - s as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn white_prior_shrinks_under_heavy_noise() {
        let cov = Covariances::identity(4, 14);
        let mut ls = CsiGrid::zeros(1, 2, 4);
        ls.data.iter_mut().for_each(|v| *v = Complex64::new(1.0, -1.0));
        let est = lmmse_estimate(&ls, &cov, &[2, 11], 100.0).unwrap();
        assert!(est.get(0, 2, 0).norm() < 0.02 * ls.get(0, 0, 0).norm());
    }
}
