//! Multi-station uplink CSI whose phase encodes the propagation delay.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{complex_noise, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::signal::{GridSample, Modality};
use crate::tensor::{RngState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositioningConfig {
    pub subcarriers: usize,
    pub symbols: usize,
    pub subcarrier_spacing_hz: f64,
    pub arena_min: [f64; 3],
    pub arena_max: [f64; 3],
    pub stations: Vec<[f64; 3]>,
    /// Scattered paths per station, each with a random excess delay.
    pub nlos_paths: usize,
    pub nlos_power: f64,
    pub max_excess_delay_m: f64,
    pub noise_power: f64,
}

impl Default for PositioningConfig {
    fn default() -> Self {
        Self {
            subcarriers: 192,
            symbols: 14,
            subcarrier_spacing_hz: 30e3,
            arena_min: [0.0, 0.0, 0.0],
            arena_max: [60.0, 40.0, 3.0],
            stations: vec![[0.0, 0.0, 4.0], [60.0, 0.0, 4.0], [60.0, 40.0, 4.0], [0.0, 40.0, 4.0]],
            nlos_paths: 3,
            nlos_power: 0.1,
            max_excess_delay_m: 30.0,
            noise_power: 0.01,
        }
    }
}

impl PositioningConfig {
    pub fn contains(&self, pos: [f64; 3]) -> bool {
        (0..3).all(|i| pos[i] >= self.arena_min[i] && pos[i] <= self.arena_max[i])
    }

    pub fn random_position(&self, rng: &mut RngState) -> [f64; 3] {
        std::array::from_fn(|i| rng.uniform_in(self.arena_min[i], self.arena_max[i]))
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Complex response `H[station][symbol][subcarrier]`. With `los_only` the
/// scattered paths and noise are omitted.
pub fn positioning_csi(pos: [f64; 3], cfg: &PositioningConfig, los_only: bool, rng: &mut RngState) -> Result<Vec<Vec<Vec<Complex64>>>> {
    if !cfg.contains(pos) {
        return Err(Error::InvalidArgument(format!("position {pos:?} outside the arena")));
    }
    let df = cfg.subcarrier_spacing_hz;
    let mut out = Vec::with_capacity(cfg.stations.len());
    for &bs in &cfg.stations {
        let d = distance(pos, bs);
        let amp = 1.0 / (1.0 + d / 50.0);
        let mut paths = vec![(amp, d, 0.0)];
        if !los_only {
            for _ in 0..cfg.nlos_paths {
                let extra = rng.uniform_in(1.0, cfg.max_excess_delay_m);
                let g = complex_noise(cfg.nlos_power * amp * amp, rng);
                paths.push((g.norm(), d + extra, g.arg()));
            }
        }
        let freq: Vec<Complex64> = (0..cfg.subcarriers)
            .map(|k| {
                paths
                    .iter()
                    .map(|&(a, len, ph)| Complex64::from_polar(a, ph - 2.0 * PI * k as f64 * df * len / SPEED_OF_LIGHT))
                    .sum()
            })
            .collect();
        let grid = (0..cfg.symbols)
            .map(|_| {
                freq.iter()
                    .map(|&h| if los_only { h } else { h + complex_noise(cfg.noise_power * amp * amp, rng) })
                    .collect()
            })
            .collect();
        out.push(grid);
    }
    Ok(out)
}

/// `subcarriers × symbols × stations` grid holding `Re H`, labelled with the position.
pub fn gen_positioning_sample(pos: [f64; 3], cfg: &PositioningConfig, rng: &mut RngState) -> Result<GridSample> {
    let h = positioning_csi(pos, cfg, false, rng)?;
    let (k_n, t_n, b_n) = (cfg.subcarriers, cfg.symbols, cfg.stations.len());
    let mut data = vec![0.0; k_n * t_n * b_n];
    for (b, grid) in h.iter().enumerate() {
        for (t, row) in grid.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                data[(k * t_n + t) * b_n + b] = v.re;
            }
        }
    }
    let id = format!("pos-{:016x}", rng.next());
    Ok(GridSample::new(Tensor::new(vec![k_n, t_n, b_n], data)?, Modality::Csi, id)?.with_position(pos))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn los_phase_slope_matches_delay() {
        let cfg = PositioningConfig::default();
        let pos = [13.0, 27.0, 1.5];
        let h = positioning_csi(pos, &cfg, true, &mut RngState::new(0)).unwrap();
        for (b, bs) in cfg.stations.iter().enumerate() {
            let expected = -2.0 * PI * cfg.subcarrier_spacing_hz * distance(pos, *bs) / SPEED_OF_LIGHT;
            let row = &h[b][0];
            for k in 1..row.len() {
                let step = (row[k] * row[k - 1].conj()).arg();
                assert!((step - expected).abs() < 1e-6, "station {b} subcarrier {k}");
            }
        }
    }

    #[test]
    fn grid_shape_and_distinct_positions() {
        let cfg = PositioningConfig::default();
        let a = gen_positioning_sample([10.0, 10.0, 1.0], &cfg, &mut RngState::new(1)).unwrap();
        let b = gen_positioning_sample([30.0, 10.0, 1.0], &cfg, &mut RngState::new(1)).unwrap();
        assert_eq!(a.data.shape(), &[192, 14, 4]);
        assert_ne!(a.data, b.data);
        assert_eq!(a.position, Some([10.0, 10.0, 1.0]));
    }

    #[test]
    fn outside_arena_rejected() {
        let cfg = PositioningConfig::default();
        assert!(gen_positioning_sample([-1.0, 0.0, 0.0], &cfg, &mut RngState::new(0)).is_err());
    }
}
