//! Tapped-delay-line MIMO-OFDM uplink with Jakes time correlation and
//! exponential receive-antenna correlation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{complex_noise, qpsk, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::tensor::RngState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub pilot_symbols: Vec<usize>,
    pub n_rx_antennas: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
    pub speed_mps: f64,
    pub snr_range_db: [f64; 2],
    /// Slot length divided evenly over the symbols.
    pub slot_s: f64,
    pub rms_delay_spread_s: f64,
    pub tap_spacing_s: f64,
    pub n_taps: usize,
    /// Correlation between neighbouring receive antennas.
    pub spatial_corr: f64,
    /// Seed of the fixed QPSK pilot sequence.
    pub pilot_seed: u64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            n_symbols: 14,
            pilot_symbols: vec![2, 11],
            n_rx_antennas: 4,
            subcarrier_spacing_hz: 30e3,
            carrier_hz: 3.5e9,
            speed_mps: 3.0,
            snr_range_db: [-10.0, 20.0],
            slot_s: 0.5e-3,
            rms_delay_spread_s: 300e-9,
            tap_spacing_s: 50e-9,
            n_taps: 24,
            spatial_corr: 0.5,
            pilot_seed: 7,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 || self.n_symbols == 0 || self.n_rx_antennas == 0 || self.n_taps == 0 {
            return Err(Error::Config("OFDM sizes must be positive".into()));
        }
        if self.pilot_symbols.is_empty() || self.pilot_symbols.iter().any(|&p| p >= self.n_symbols) {
            return Err(Error::Config(format!(
                "pilot symbols {:?} must lie below {}",
                self.pilot_symbols, self.n_symbols
            )));
        }
        if !(0.0..1.0).contains(&self.spatial_corr) {
            return Err(Error::Config("spatial correlation must lie in [0, 1)".into()));
        }
        if self.snr_range_db[0] > self.snr_range_db[1] {
            return Err(Error::Config("SNR range is reversed".into()));
        }
        Ok(())
    }

    pub fn doppler_hz(&self) -> f64 {
        self.speed_mps * self.carrier_hz / SPEED_OF_LIGHT
    }

    pub fn symbol_duration_s(&self) -> f64 {
        self.slot_s / self.n_symbols as f64
    }
}

/// Complex grid indexed `[antenna][symbol][subcarrier]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiGrid {
    pub antennas: usize,
    pub symbols: usize,
    pub subcarriers: usize,
    pub data: Vec<Complex64>,
}

impl CsiGrid {
    pub fn zeros(antennas: usize, symbols: usize, subcarriers: usize) -> Self {
        Self {
            antennas,
            symbols,
            subcarriers,
            data: vec![Complex64::new(0.0, 0.0); antennas * symbols * subcarriers],
        }
    }

    pub fn idx(&self, a: usize, s: usize, k: usize) -> usize {
        (a * self.symbols + s) * self.subcarriers + k
    }

    pub fn get(&self, a: usize, s: usize, k: usize) -> Complex64 {
        self.data[self.idx(a, s, k)]
    }

    pub fn set(&mut self, a: usize, s: usize, k: usize, v: Complex64) {
        let i = self.idx(a, s, k);
        self.data[i] = v;
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }

    /// Mean squared error per element against `other`.
    pub fn mse(&self, other: &CsiGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Full response over every symbol, unit mean power.
    pub h: CsiGrid,
    pub tap_delays_s: Vec<f64>,
    pub tap_powers: Vec<f64>,
    pub doppler_hz: f64,
    pub snr_db: f64,
}

/// One pilot transmission: known pilots, received pilots and the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmDraw {
    /// `1 × pilots × subcarriers`.
    pub tx_pilots: CsiGrid,
    /// `antennas × pilots × subcarriers`.
    pub rx: CsiGrid,
    pub channel: ChannelRealization,
}

/// Fixed unit-modulus QPSK pilots, `1 × pilots × subcarriers`.
pub fn pilot_sequence(cfg: &OfdmConfig) -> CsiGrid {
    let mut rng = RngState::new(cfg.pilot_seed);
    let mut g = CsiGrid::zeros(1, cfg.pilot_symbols.len(), cfg.n_subcarriers);
    g.data.iter_mut().for_each(|v| *v = qpsk(&mut rng));
    g
}

/// `Q·diag(√max(λ,0))` for a symmetric PSD matrix, so `F·Fᵀ = R`.
fn psd_factor(r: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(r);
    let mut q = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        q.column_mut(j).scale_mut(s);
    }
    q
}

/// Precomputed statistics for drawing channels under one configuration.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub cfg: OfdmConfig,
    delays: Vec<f64>,
    powers: Vec<f64>,
    time_factor: DMatrix<f64>,
    space_factor: DMatrix<f64>,
    steering: Vec<Complex64>,
    pilots: CsiGrid,
}

impl ChannelModel {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let delays: Vec<f64> = (0..cfg.n_taps).map(|l| l as f64 * cfg.tap_spacing_s).collect();
        let raw: Vec<f64> = delays.iter().map(|t| (-t / cfg.rms_delay_spread_s).exp()).collect();
        let total: f64 = raw.iter().sum();
        let powers: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let s_n = cfg.n_symbols;
        let ts = cfg.symbol_duration_s();
        let fd = cfg.doppler_hz();
        let rt = DMatrix::from_fn(s_n, s_n, |i, j| jakes(fd, (i as f64 - j as f64).abs() * ts));
        let a_n = cfg.n_rx_antennas;
        let rs = DMatrix::from_fn(a_n, a_n, |i, j| cfg.spatial_corr.powi((i as i32 - j as i32).abs()));
        let k_n = cfg.n_subcarriers;
        let mut steering = vec![Complex64::new(0.0, 0.0); k_n * cfg.n_taps];
        for k in 0..k_n {
            for (l, &tau) in delays.iter().enumerate() {
                steering[k * cfg.n_taps + l] = Complex64::from_polar(1.0, -2.0 * PI * k as f64 * cfg.subcarrier_spacing_hz * tau);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            delays,
            powers,
            time_factor: psd_factor(rt),
            space_factor: psd_factor(rs),
            steering,
            pilots: pilot_sequence(cfg),
        })
    }

    pub fn pilots(&self) -> &CsiGrid {
        &self.pilots
    }

    /// One channel over the full grid, scaled to unit mean power.
    pub fn draw_channel(&self, rng: &mut RngState) -> CsiGrid {
        let (a_n, s_n, k_n, l_n) = (self.cfg.n_rx_antennas, self.cfg.n_symbols, self.cfg.n_subcarriers, self.cfg.n_taps);
        // gains[l][a][s]
        let mut gains = vec![Complex64::new(0.0, 0.0); l_n * a_n * s_n];
        let mut w = vec![Complex64::new(0.0, 0.0); a_n * s_n];
        let mut tmp = vec![Complex64::new(0.0, 0.0); a_n * s_n];
        for l in 0..l_n {
            w.iter_mut().for_each(|v| *v = complex_noise(self.powers[l], rng));
            // Spatial colouring: tmp = Fs · W.
            for a in 0..a_n {
                for s in 0..s_n {
                    tmp[a * s_n + s] = (0..a_n).map(|b| w[b * s_n + s] * self.space_factor[(a, b)]).sum();
                }
            }
            // Temporal colouring: G = tmp · Ftᵀ.
            for a in 0..a_n {
                for s in 0..s_n {
                    gains[(l * a_n + a) * s_n + s] = (0..s_n).map(|u| tmp[a * s_n + u] * self.time_factor[(s, u)]).sum();
                }
            }
        }
        let mut h = CsiGrid::zeros(a_n, s_n, k_n);
        for a in 0..a_n {
            for s in 0..s_n {
                for k in 0..k_n {
                    let v: Complex64 = (0..l_n).map(|l| gains[(l * a_n + a) * s_n + s] * self.steering[k * l_n + l]).sum();
                    h.set(a, s, k, v);
                }
            }
        }
        let scale = 1.0 / h.mean_power().sqrt();
        h.data.iter_mut().for_each(|v| *v *= scale);
        h
    }

    /// Channel plus received pilots at `snr_db`; `f64::INFINITY` gives a
    /// noiseless observation.
    pub fn draw(&self, snr_db: f64, rng: &mut RngState) -> OfdmDraw {
        let h = self.draw_channel(rng);
        let sigma2 = 10f64.powf(-snr_db / 10.0);
        let (a_n, k_n) = (self.cfg.n_rx_antennas, self.cfg.n_subcarriers);
        let p_n = self.cfg.pilot_symbols.len();
        let mut rx = CsiGrid::zeros(a_n, p_n, k_n);
        for a in 0..a_n {
            for (i, &s) in self.cfg.pilot_symbols.iter().enumerate() {
                for k in 0..k_n {
                    let mut y = h.get(a, s, k) * self.pilots.get(0, i, k);
                    if sigma2 > 0.0 {
                        y += complex_noise(sigma2, rng);
                    }
                    rx.set(a, i, k, y);
                }
            }
        }
        OfdmDraw {
            tx_pilots: self.pilots.clone(),
            rx,
            channel: ChannelRealization {
                h,
                tap_delays_s: self.delays.clone(),
                tap_powers: self.powers.clone(),
                doppler_hz: self.cfg.doppler_hz(),
                snr_db,
            },
        }
    }
}

/// `J₀(2π f_d Δt)`.
pub fn jakes(doppler_hz: f64, dt: f64) -> f64 {
    libm::j0(2.0 * PI * doppler_hz * dt)
}

/// Draws a channel at an SNR sampled uniformly over the configured range.
pub fn gen_mimo_ofdm(model: &ChannelModel, rng: &mut RngState) -> OfdmDraw {
    let [lo, hi] = model.cfg.snr_range_db;
    let snr = rng.uniform_in(lo, hi);
    model.draw(snr, rng)
}
