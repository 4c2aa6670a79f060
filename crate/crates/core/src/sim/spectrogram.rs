//! Synthetic RF scenes rendered as STFT magnitude spectrograms.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::complex_noise;
use crate::error::{Error, Result};
use crate::signal::{GridSample, Modality};
use crate::tensor::{RngState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    Tone,
    Chirp,
    OfdmBurst,
    FmLike,
    Hopper,
    Noise,
}

/// Kinds that carry a class label; each appears in four frequency variants.
pub const LABELLED_KINDS: [SignalKind; 5] = [
    SignalKind::Tone,
    SignalKind::Chirp,
    SignalKind::OfdmBurst,
    SignalKind::FmLike,
    SignalKind::Hopper,
];
pub const VARIANTS: usize = 4;
pub const NUM_SCENE_CLASSES: usize = LABELLED_KINDS.len() * VARIANTS;

/// Occupied region in normalised time `[0, 1]` and frequency `[-0.5, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub t_start: f64,
    pub t_end: f64,
    pub f_low: f64,
    pub f_high: f64,
}

impl Occupancy {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.t_start)
            && (0.0..=1.0).contains(&self.t_end)
            && self.t_start < self.t_end
            && (-0.5..=0.5).contains(&self.f_low)
            && (-0.5..=0.5).contains(&self.f_high)
            && self.f_low <= self.f_high
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.f_low + self.f_high)
    }

    pub fn bandwidth(&self) -> f64 {
        self.f_high - self.f_low
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SignalKind,
    pub label: Option<usize>,
    pub occupancy: Occupancy,
    pub snr_db: f64,
}

impl SceneSpec {
    /// Randomised scene of class `class_id` (`kind = id / 4`, variant `id % 4`).
    pub fn for_class(class_id: usize, snr_db: f64, rng: &mut RngState) -> Result<Self> {
        if class_id >= NUM_SCENE_CLASSES {
            return Err(Error::InvalidArgument(format!("scene class {class_id} of {NUM_SCENE_CLASSES}")));
        }
        let kind = LABELLED_KINDS[class_id / VARIANTS];
        let variant = class_id % VARIANTS;
        let center = -0.3 + 0.2 * variant as f64 + rng.uniform_in(-0.02, 0.02);
        let half_bw = match kind {
            SignalKind::Tone => 0.0,
            SignalKind::Chirp => 0.06,
            SignalKind::OfdmBurst => 0.05,
            SignalKind::FmLike => 0.03,
            SignalKind::Hopper => 0.07,
            SignalKind::Noise => 0.0,
        };
        let t_start = rng.uniform_in(0.0, 0.15);
        let t_end = rng.uniform_in(0.85, 1.0);
        Ok(Self {
            kind,
            label: Some(class_id),
            occupancy: Occupancy {
                t_start,
                t_end,
                f_low: center - half_bw,
                f_high: center + half_bw,
            },
            snr_db,
        })
    }

    pub fn noise(snr_db: f64) -> Self {
        Self {
            kind: SignalKind::Noise,
            label: None,
            occupancy: Occupancy {
                t_start: 0.0,
                t_end: 1.0,
                f_low: 0.0,
                f_high: 0.0,
            },
            snr_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    pub window: usize,
    pub hop: usize,
    pub frames: usize,
    /// Average-pooling factors applied to the magnitude grid.
    pub freq_pool: usize,
    pub time_pool: usize,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            window: 256,
            hop: 64,
            frames: 128,
            freq_pool: 8,
            time_pool: 4,
        }
    }
}

impl SpectrogramConfig {
    pub fn unpooled() -> Self {
        Self {
            freq_pool: 1,
            time_pool: 1,
            ..Self::default()
        }
    }

    pub fn num_samples(&self) -> usize {
        self.hop * (self.frames - 1) + self.window
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.window / self.freq_pool, self.frames / self.time_pool)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 || self.frames == 0 || self.freq_pool == 0 || self.time_pool == 0 {
            return Err(Error::Config("spectrogram sizes must be positive".into()));
        }
        if self.window % self.freq_pool != 0 || self.frames % self.time_pool != 0 {
            return Err(Error::Config("pooling factors must divide the grid".into()));
        }
        Ok(())
    }
}

/// Complex baseband with unit signal power inside the occupancy window.
pub fn synthesize(spec: &SceneSpec, len: usize, rng: &mut RngState) -> Result<Vec<Complex64>> {
    let occ = spec.occupancy;
    if spec.kind != SignalKind::Noise && !occ.is_valid() {
        return Err(Error::InvalidArgument(format!("occupancy {occ:?} outside the grid")));
    }
    let mut x = vec![Complex64::new(0.0, 0.0); len];
    let start = (occ.t_start * len as f64) as usize;
    let end = ((occ.t_end * len as f64) as usize).min(len);
    let span = (end - start).max(1) as f64;
    let phase0 = rng.uniform_in(0.0, 2.0 * PI);
    match spec.kind {
        SignalKind::Noise => {}
        SignalKind::Tone => {
            let f = occ.center();
            for (n, v) in x.iter_mut().enumerate().take(end).skip(start) {
                *v = Complex64::from_polar(1.0, 2.0 * PI * f * n as f64 + phase0);
            }
        }
        SignalKind::Chirp => {
            let rate = occ.bandwidth() / span;
            let mut phase = phase0;
            for n in start..end {
                let f = occ.f_low + rate * (n - start) as f64;
                x[n] = Complex64::from_polar(1.0, phase);
                phase += 2.0 * PI * f;
            }
        }
        SignalKind::OfdmBurst => {
            let tones = 12;
            let symbol = 64;
            let spacing = occ.bandwidth() / (tones - 1) as f64;
            let amp = 1.0 / (tones as f64).sqrt();
            let mut symbols = vec![Complex64::new(0.0, 0.0); tones];
            for n in start..end {
                if (n - start) % symbol == 0 {
                    for s in symbols.iter_mut() {
                        *s = super::qpsk(rng);
                    }
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, s) in symbols.iter().enumerate() {
                    let f = occ.f_low + spacing * i as f64;
                    acc += s * Complex64::from_polar(amp, 2.0 * PI * f * n as f64);
                }
                x[n] = acc;
            }
        }
        SignalKind::FmLike => {
            let fm = 1.0 / 2048.0;
            let beta = 0.5 * occ.bandwidth() / fm;
            for n in start..end {
                let ph = 2.0 * PI * occ.center() * n as f64 + beta * (2.0 * PI * fm * n as f64).sin() + phase0;
                x[n] = Complex64::from_polar(1.0, ph);
            }
        }
        SignalKind::Hopper => {
            let dwell = 512;
            let mut f = occ.center();
            let mut phase = phase0;
            for n in start..end {
                if (n - start) % dwell == 0 {
                    f = rng.uniform_in(occ.f_low, occ.f_high);
                }
                x[n] = Complex64::from_polar(1.0, phase);
                phase += 2.0 * PI * f;
            }
        }
    }
    let sigma2 = 10f64.powf(-spec.snr_db / 10.0);
    for v in x.iter_mut() {
        *v += complex_noise(sigma2, rng);
    }
    Ok(x)
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// STFT magnitude, frequency rows in ascending order from `-fs/2`
/// (`window` rows × `frames` columns).
pub fn stft_magnitude(x: &[Complex64], cfg: &SpectrogramConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if x.len() < cfg.num_samples() {
        return Err(Error::InvalidArgument(format!("{} samples, need {}", x.len(), cfg.num_samples())));
    }
    let w = hann(cfg.window);
    let fft = FftPlanner::new().plan_fft_forward(cfg.window);
    let mut out = vec![vec![0.0; cfg.frames]; cfg.window];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.window];
    let half = cfg.window / 2;
    for t in 0..cfg.frames {
        let off = t * cfg.hop;
        for i in 0..cfg.window {
            buf[i] = x[off + i] * w[i];
        }
        fft.process(&mut buf);
        for (k, v) in buf.iter().enumerate() {
            // Shift so that row 0 is the most negative frequency.
            out[(k + half) % cfg.window][t] = v.norm();
        }
    }
    Ok(out)
}

pub fn gen_spectrogram(spec: &SceneSpec, cfg: &SpectrogramConfig, rng: &mut RngState) -> Result<GridSample> {
    cfg.validate()?;
    let x = synthesize(spec, cfg.num_samples(), rng)?;
    let mag = stft_magnitude(&x, cfg)?;
    let (h, w) = cfg.output_shape();
    let mut data = vec![0.0; h * w];
    let norm = 1.0 / (cfg.freq_pool * cfg.time_pool) as f64;
    for (f, row) in mag.iter().enumerate() {
        for (t, &v) in row.iter().enumerate() {
            data[(f / cfg.freq_pool) * w + t / cfg.time_pool] += v * norm;
        }
    }
    let id = format!("spec-{:?}-{:016x}", spec.kind, rng.next());
    let mut s = GridSample::new(Tensor::new(vec![h, w, 1], data)?, Modality::Spectrogram, id)?.with_snr(spec.snr_db);
    s.label = spec.label;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_argmax(s: &GridSample) -> Vec<usize> {
        let (h, w) = (s.height(), s.width());
        (0..w)
            .map(|t| {
                (0..h)
                    .max_by(|&a, &b| s.data.data()[a * w + t].total_cmp(&s.data.data()[b * w + t]))
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn tone_occupies_one_row() {
        let spec = SceneSpec {
            kind: SignalKind::Tone,
            label: Some(0),
            occupancy: Occupancy {
                t_start: 0.0,
                t_end: 1.0,
                f_low: 0.125,
                f_high: 0.125,
            },
            snr_db: 20.0,
        };
        let s = gen_spectrogram(&spec, &SpectrogramConfig::unpooled(), &mut RngState::new(1)).unwrap();
        let am = column_argmax(&s);
        assert!(am.iter().all(|&r| r == am[0]));
        assert_eq!(am[0], 128 + 32);
    }

    #[test]
    fn chirp_climbs() {
        let spec = SceneSpec {
            kind: SignalKind::Chirp,
            label: Some(4),
            occupancy: Occupancy {
                t_start: 0.0,
                t_end: 1.0,
                f_low: -0.3,
                f_high: 0.3,
            },
            snr_db: 20.0,
        };
        let s = gen_spectrogram(&spec, &SpectrogramConfig::unpooled(), &mut RngState::new(2)).unwrap();
        let am = column_argmax(&s);
        assert!(am.windows(2).all(|p| p[1] >= p[0]), "{am:?}");
        assert!(am[127] > am[0] + 100);
    }

    #[test]
    fn default_output_is_pooled_square() {
        let mut rng = RngState::new(3);
        let spec = SceneSpec::for_class(7, 10.0, &mut rng).unwrap();
        let s = gen_spectrogram(&spec, &SpectrogramConfig::default(), &mut rng).unwrap();
        assert_eq!(s.data.shape(), &[32, 32, 1]);
        assert_eq!(s.label, Some(7));
    }

    #[test]
    fn catalog_occupancy_is_valid() {
        let mut rng = RngState::new(4);
        for c in 0..NUM_SCENE_CLASSES {
            assert!(SceneSpec::for_class(c, 0.0, &mut rng).unwrap().occupancy.is_valid());
        }
        assert!(SceneSpec::for_class(NUM_SCENE_CLASSES, 0.0, &mut rng).is_err());
    }
}
