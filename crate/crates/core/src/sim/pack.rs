//! Arranging pilots as an image-like resource grid for the neural estimator.

use num_complex::Complex64;

use super::ofdm::{CsiGrid, OfdmConfig, OfdmDraw};
use crate::error::{Error, Result};
use crate::signal::{GridSample, Modality};
use crate::tensor::Tensor;

/// Antennas stacked along the height, `(antennas·symbols) × subcarriers × 4`
/// with channels `Re rx, Im rx, Re tx, Im tx`. Non-pilot rows are zero.
/// Normalisation is left to the fitted channel-estimation pipeline.
pub fn pack_chanest_input(tx_pilots: &CsiGrid, rx: &CsiGrid, cfg: &OfdmConfig) -> Result<Tensor> {
    let (a_n, s_n, k_n) = (cfg.n_rx_antennas, cfg.n_symbols, cfg.n_subcarriers);
    let p_n = cfg.pilot_symbols.len();
    if rx.antennas != a_n || rx.symbols != p_n || rx.subcarriers != k_n || tx_pilots.symbols != p_n {
        return Err(Error::shape("pack_chanest_input", "grids do not match the OFDM configuration"));
    }
    let mut data = vec![0.0; a_n * s_n * k_n * 4];
    for a in 0..a_n {
        for (i, &s) in cfg.pilot_symbols.iter().enumerate() {
            for k in 0..k_n {
                let y = rx.get(a, i, k);
                let p = tx_pilots.get(0, i, k);
                let o = ((a * s_n + s) * k_n + k) * 4;
                data[o..o + 4].copy_from_slice(&[y.re, y.im, p.re, p.im]);
            }
        }
    }
    Tensor::new(vec![a_n * s_n, k_n, 4], data)
}

/// Inverse of [`pack_chanest_input`].
pub fn unpack_chanest_input(grid: &Tensor, cfg: &OfdmConfig) -> Result<(CsiGrid, CsiGrid)> {
    let (a_n, s_n, k_n) = (cfg.n_rx_antennas, cfg.n_symbols, cfg.n_subcarriers);
    if grid.shape() != [a_n * s_n, k_n, 4] {
        return Err(Error::shape("unpack_chanest_input", format!("grid {:?}", grid.shape())));
    }
    let p_n = cfg.pilot_symbols.len();
    let mut tx = CsiGrid::zeros(1, p_n, k_n);
    let mut rx = CsiGrid::zeros(a_n, p_n, k_n);
    let d = grid.data();
    for a in 0..a_n {
        for (i, &s) in cfg.pilot_symbols.iter().enumerate() {
            for k in 0..k_n {
                let o = ((a * s_n + s) * k_n + k) * 4;
                rx.set(a, i, k, Complex64::new(d[o], d[o + 1]));
                if a == 0 {
                    tx.set(0, i, k, Complex64::new(d[o + 2], d[o + 3]));
                }
            }
        }
    }
    Ok((tx, rx))
}

/// Channel as `(antennas·symbols) × subcarriers × 2` (real, imaginary).
pub fn channel_to_tensor(h: &CsiGrid) -> Tensor {
    let mut data = Vec::with_capacity(h.data.len() * 2);
    for v in &h.data {
        data.push(v.re);
        data.push(v.im);
    }
    Tensor::new(vec![h.antennas * h.symbols, h.subcarriers, 2], data).expect("grid layout")
}

pub fn tensor_to_channel(t: &Tensor, antennas: usize) -> Result<CsiGrid> {
    let &[rows, k_n, 2] = t.shape() else {
        return Err(Error::shape("tensor_to_channel", format!("{:?}", t.shape())));
    };
    if antennas == 0 || rows % antennas != 0 {
        return Err(Error::shape("tensor_to_channel", format!("{rows} rows over {antennas} antennas")));
    }
    let mut g = CsiGrid::zeros(antennas, rows / antennas, k_n);
    for (i, v) in g.data.iter_mut().enumerate() {
        *v = Complex64::new(t.data()[2 * i], t.data()[2 * i + 1]);
    }
    Ok(g)
}

/// Packed input with the true channel as regression target.
pub fn chanest_sample(draw: &OfdmDraw, cfg: &OfdmConfig, id: impl Into<String>) -> Result<GridSample> {
    let x = pack_chanest_input(&draw.tx_pilots, &draw.rx, cfg)?;
    Ok(GridSample::new(x, Modality::OfdmGrid, id)?
        .with_snr(draw.channel.snr_db)
        .with_target(channel_to_tensor(&draw.channel.h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::estimate::ls_estimate;
    use crate::sim::ofdm::ChannelModel;
    use crate::tensor::RngState;

    #[test]
    fn packed_geometry() {
        let cfg = OfdmConfig::default();
        let m = ChannelModel::new(&cfg).unwrap();
        let d = m.draw(10.0, &mut RngState::new(0));
        let x = pack_chanest_input(&d.tx_pilots, &d.rx, &cfg).unwrap();
        assert_eq!(x.shape(), &[4 * 14, 64, 4]);
        // Row 0 of antenna 0 is a data symbol, so it is empty.
        assert!(x.data()[..64 * 4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_roundtrip_recovers_pilots() {
        let cfg = OfdmConfig::default();
        let m = ChannelModel::new(&cfg).unwrap();
        let d = m.draw(f64::INFINITY, &mut RngState::new(1));
        let x = pack_chanest_input(&d.tx_pilots, &d.rx, &cfg).unwrap();
        let (tx, rx) = unpack_chanest_input(&x, &cfg).unwrap();
        assert_eq!(tx, d.tx_pilots);
        let ls = ls_estimate(&tx, &rx).unwrap();
        for (i, &s) in cfg.pilot_symbols.iter().enumerate() {
            assert!((ls.get(3, i, 17) - d.channel.h.get(3, s, 17)).norm() < 1e-12);
        }
    }

    #[test]
    fn channel_tensor_roundtrip() {
        let m = ChannelModel::new(&OfdmConfig::default()).unwrap();
        let h = m.draw_channel(&mut RngState::new(2));
        assert_eq!(tensor_to_channel(&channel_to_tensor(&h), 4).unwrap(), h);
    }
}
