//! Seeded synthetic data: RF spectrograms, activity CSI, positioning CSI
//! and MIMO-OFDM pilot transmissions, plus LS and LMMSE baselines.

mod activity;
mod estimate;
mod ofdm;
mod pack;
mod positioning;
mod spectrogram;

use num_complex::Complex64;

pub use activity::{class_doppler, gen_activity_csi, ActivityConfig, ACTIVITY_CLASSES};
pub use estimate::{
    estimate_covariances, interpolate_pilots, lmmse_estimate, ls_estimate, Covariances, LmmseFilter, REGULARIZATION,
};
pub use ofdm::{gen_mimo_ofdm, jakes, pilot_sequence, ChannelModel, ChannelRealization, CsiGrid, OfdmConfig, OfdmDraw};
pub use pack::{chanest_sample, channel_to_tensor, pack_chanest_input, tensor_to_channel, unpack_chanest_input};
pub use positioning::{gen_positioning_sample, positioning_csi, PositioningConfig};
pub use spectrogram::{
    gen_spectrogram, stft_magnitude, synthesize, Occupancy, SceneSpec, SignalKind, SpectrogramConfig, LABELLED_KINDS,
    NUM_SCENE_CLASSES, VARIANTS,
};

use crate::tensor::RngState;

/// Propagation speed used for delays and Doppler.
pub const SPEED_OF_LIGHT: f64 = 3e8;

/// Circular complex Gaussian with total variance `power`.
pub fn complex_noise(power: f64, rng: &mut RngState) -> Complex64 {
    let s = (power / 2.0).sqrt();
    Complex64::new(s * rng.normal(), s * rng.normal())
}

/// Unit-modulus QPSK symbol.
pub fn qpsk(rng: &mut RngState) -> Complex64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let re = if rng.bernoulli(0.5) { r } else { -r };
    let im = if rng.bernoulli(0.5) { r } else { -r };
    Complex64::new(re, im)
}
