//! WebAssembly bindings for the static demo page in `www/`.

use wasm_bindgen::prelude::*;
use wavesfm::signal::Pipeline;
use wavesfm::sim::{
    estimate_covariances, gen_spectrogram, interpolate_pilots, lmmse_estimate, ls_estimate, ChannelModel, OfdmConfig, SceneSpec, SpectrogramConfig, NUM_SCENE_CLASSES,
};
use wavesfm::tensor::RngState;
use wavesfm::train::{sample_mask, snr_weight_raw};

fn js_err(e: wavesfm::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Side length of the grids returned by [`spectrogram`].
#[wasm_bindgen]
pub fn grid_side() -> u32 {
    32
}

#[wasm_bindgen]
pub fn scene_classes() -> u32 {
    NUM_SCENE_CLASSES as u32
}

/// Log-scaled spectrogram of one scene, rescaled to `[0, 1]`, row-major with
/// frequency rows from the most negative frequency.
#[wasm_bindgen]
pub fn spectrogram(class_id: u32, snr_db: f64, seed: u32) -> Result<Vec<f64>, JsValue> {
    let mut rng = RngState::new(seed as u64);
    let spec = SceneSpec::for_class(class_id as usize, snr_db, &mut rng).map_err(js_err)?;
    let sample = gen_spectrogram(&spec, &SpectrogramConfig::default(), &mut rng).map_err(js_err)?;
    let fitted = Pipeline::pretrain(grid_side() as usize)
        .fit(std::slice::from_ref(&sample))
        .map_err(js_err)?;
    let data = fitted.apply(&sample).map_err(js_err)?.data.data().to_vec();
    let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    Ok(data.iter().map(|v| (v - lo) / span).collect())
}

/// One random mask over a `side × side` patch grid: 1 for masked patches.
#[wasm_bindgen]
pub fn mask_pattern(side: u32, ratio: f64, seed: u32) -> Result<Vec<u8>, JsValue> {
    let n = (side * side) as usize;
    let plan = sample_mask(n, ratio, &mut RngState::new(seed as u64)).map_err(js_err)?;
    let mut out = vec![0u8; n];
    for &i in &plan.masked {
        out[i] = 1;
    }
    Ok(out)
}

/// Mean squared error of LS at the pilots, LS with linear interpolation and
/// LMMSE over `draws` channel realisations at `snr_db`, plus the noise
/// variance: `[ls_pilots, ls_interp, lmmse, sigma2]`.
#[wasm_bindgen]
pub fn channel_estimation_mse(snr_db: f64, draws: u32, seed: u32) -> Result<Vec<f64>, JsValue> {
    let cfg = OfdmConfig {
        n_subcarriers: 32,
        n_rx_antennas: 2,
        ..OfdmConfig::default()
    };
    let model = ChannelModel::new(&cfg).map_err(js_err)?;
    let mut rng = RngState::new(seed as u64);
    let cov = estimate_covariances(&model, 500, &mut rng.split(1));
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let (mut pil, mut interp, mut mmse) = (0.0, 0.0, 0.0);
    let draws = draws.max(1);
    for _ in 0..draws {
        let d = model.draw(snr_db, &mut rng);
        let ls = ls_estimate(&d.tx_pilots, &d.rx).map_err(js_err)?;
        let full = interpolate_pilots(&ls, &cfg.pilot_symbols, cfg.n_symbols).map_err(js_err)?;
        let est = lmmse_estimate(&ls, &cov, &cfg.pilot_symbols, sigma2).map_err(js_err)?;
        let mut at_pilots = 0.0;
        for a in 0..d.channel.h.antennas {
            for (i, &s) in cfg.pilot_symbols.iter().enumerate() {
                for k in 0..cfg.n_subcarriers {
                    at_pilots += (ls.get(a, i, k) - d.channel.h.get(a, s, k)).norm_sqr();
                }
            }
        }
        pil += at_pilots / (d.channel.h.antennas * cfg.pilot_symbols.len() * cfg.n_subcarriers) as f64;
        interp += full.mse(&d.channel.h);
        mmse += est.mse(&d.channel.h);
    }
    let n = draws as f64;
    Ok(vec![pil / n, interp / n, mmse / n, sigma2])
}

/// Unclamped loss weight of a channel-estimation sample at `snr_db`.
#[wasm_bindgen]
pub fn snr_weight(snr_db: f64) -> f64 {
    snr_weight_raw(snr_db)
}
