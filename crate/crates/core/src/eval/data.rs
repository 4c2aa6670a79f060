//! Loading, generating and splitting samples for an experiment.

use crate::error::{Error, Result};
use crate::model::{Task, VitModel};
use crate::signal::{read_archive, GridSample};
use crate::sim::{
    chanest_sample, channel_to_tensor, estimate_covariances, gen_activity_csi, gen_mimo_ofdm, gen_positioning_sample,
    gen_spectrogram, interpolate_pilots, ls_estimate, unpack_chanest_input, ChannelModel, LmmseFilter, OfdmConfig,
    SceneSpec, ACTIVITY_CLASSES,
};
use crate::tensor::{RngState, Tensor};
use crate::train::{Example, Target};

use super::config::{DataSpec, Generator};

// Child streams of the experiment seed.
pub(crate) const STREAM_DATA: u64 = 1;
pub(crate) const STREAM_SPLIT: u64 = 2;
pub(crate) const STREAM_INIT: u64 = 3;
pub(crate) const STREAM_TRAIN: u64 = 4;
pub(crate) const STREAM_COV: u64 = 5;

impl Generator {
    /// `count` samples; sample `i` draws only from child stream `i` of `rng`,
    /// so the output does not depend on the worker count.
    pub fn generate(&self, count: usize, rng: &RngState) -> Result<Vec<GridSample>> {
        let channel = match self {
            Generator::Chanest { config } => Some(ChannelModel::new(config)?),
            _ => None,
        };
        let out = crate::parallel_map(count, |i| {
            let mut r = rng.split(i as u64);
            self.sample(i, channel.as_ref(), &mut r)
        });
        out.into_iter().collect()
    }

    fn sample(&self, i: usize, channel: Option<&ChannelModel>, rng: &mut RngState) -> Result<GridSample> {
        let mut s = match self {
            Generator::Spectrogram { classes, snr_db, config } => {
                let label = i % classes.len();
                let snr = rng.uniform_in(snr_db[0], snr_db[1]);
                let spec = SceneSpec::for_class(classes[label], snr, rng)?;
                gen_spectrogram(&spec, config, rng)?.with_label(label)
            }
            Generator::Activity { config } => gen_activity_csi(i % ACTIVITY_CLASSES, config, rng)?,
            Generator::Positioning { config } => {
                let pos = config.random_position(rng);
                gen_positioning_sample(pos, config, rng)?
            }
            Generator::Chanest { config } => {
                let model = channel.expect("channel model prepared");
                chanest_sample(&gen_mimo_ofdm(model, rng), config, "")?
            }
        };
        s.sample_id = format!("{}-{i:06}", self.prefix());
        Ok(s)
    }

    pub(crate) fn prefix(&self) -> &'static str {
        match self {
            Generator::Spectrogram { .. } => "spec",
            Generator::Activity { .. } => "act",
            Generator::Positioning { .. } => "pos",
            Generator::Chanest { .. } => "chan",
        }
    }
}

/// Samples plus the generator that produced them, when known.
pub(crate) fn load_samples(spec: &DataSpec, seed: u64) -> Result<(Vec<GridSample>, Option<Generator>)> {
    if let Some(dir) = &spec.archive {
        let (samples, meta) = read_archive(dir)?;
        let generator = meta
            .generator
            .get("generator")
            .and_then(|g| serde_json::from_value::<Generator>(g.clone()).ok());
        return Ok((samples, generator));
    }
    let g = spec
        .generator
        .clone()
        .ok_or_else(|| Error::Config("data needs an archive or a generator".into()))?;
    let samples = g.generate(spec.count, &RngState::new(seed).split(STREAM_DATA))?;
    Ok((samples, Some(g)))
}

/// Deterministic `(train, val)` index split.
pub(crate) fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    RngState::new(seed).split(STREAM_SPLIT).shuffle(&mut idx);
    let n_val = if val_fraction > 0.0 && n > 1 {
        ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub(crate) fn select(samples: &[GridSample], idx: &[usize]) -> Vec<GridSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

/// Patchifies pre-processed samples and attaches the supervision `task` needs.
pub fn to_examples(samples: &[GridSample], model: &VitModel, task: Task) -> Result<Vec<Example>> {
    let cfg = &model.config;
    samples
        .iter()
        .map(|s| {
            if s.channels() != cfg.channels || s.height() != cfg.image_size || s.width() != cfg.image_size {
                return Err(Error::Config(format!(
                    "sample `{}` is {:?} after pre-processing, model expects {}×{}×{}",
                    s.sample_id,
                    s.data.shape(),
                    cfg.image_size,
                    cfg.image_size,
                    cfg.channels
                )));
            }
            let patches = model.patchify(&s.data)?.patches;
            let target = match task {
                Task::Positioning => Target::Position(
                    s.position
                        .ok_or_else(|| Error::Config(format!("sample `{}` has no position", s.sample_id)))?,
                ),
                Task::Chanest { height, width, channels } => {
                    let grid = s
                        .target
                        .clone()
                        .ok_or_else(|| Error::Config(format!("sample `{}` has no target grid", s.sample_id)))?;
                    if grid.shape() != [height, width, channels] {
                        return Err(Error::Config(format!(
                            "target grid {:?} does not match the task's {:?}",
                            grid.shape(),
                            [height, width, channels]
                        )));
                    }
                    let snr_db = s
                        .snr_db
                        .ok_or_else(|| Error::Config(format!("sample `{}` has no SNR", s.sample_id)))?;
                    Target::Grid { grid, snr_db }
                }
                _ => {
                    let classes = task.num_classes().unwrap_or(0);
                    let y = s
                        .label
                        .ok_or_else(|| Error::Config(format!("sample `{}` has no label", s.sample_id)))?;
                    if y >= classes {
                        return Err(Error::Config(format!("label {y} but the task has {classes} classes")));
                    }
                    Target::Class(y)
                }
            };
            Ok(Example { patches, target })
        })
        .collect()
}

/// LS with linear time interpolation and LMMSE estimates of every packed
/// sample, as `(antennas·symbols) × subcarriers × 2` grids. The LMMSE
/// covariances come from `draws` fresh simulator channels.
pub fn chanest_baselines(
    raw: &[GridSample],
    ofdm: &OfdmConfig,
    draws: usize,
    rng: &RngState,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let model = ChannelModel::new(ofdm)?;
    let cov = estimate_covariances(&model, draws, &mut rng.split(STREAM_COV));
    let results = crate::parallel_map(raw.len(), |i| -> Result<(Tensor, Tensor)> {
        let s = &raw[i];
        let snr = s
            .snr_db
            .ok_or_else(|| Error::Config(format!("sample `{}` has no SNR", s.sample_id)))?;
        let (tx, rx) = unpack_chanest_input(&s.data, ofdm)?;
        let ls = ls_estimate(&tx, &rx)?;
        let ls_full = interpolate_pilots(&ls, &ofdm.pilot_symbols, ofdm.n_symbols)?;
        // Unit-modulus pilots make the LS error variance equal to σ².
        let noise_var = 10f64.powf(-snr / 10.0);
        let lmmse = LmmseFilter::new(&cov, &ofdm.pilot_symbols, noise_var)?.apply(&ls)?;
        Ok((channel_to_tensor(&ls_full), channel_to_tensor(&lmmse)))
    });
    let mut ls = Vec::with_capacity(raw.len());
    let mut lmmse = Vec::with_capacity(raw.len());
    for r in results {
        let (a, b) = r?;
        ls.push(a);
        lmmse.push(b);
    }
    Ok((ls, lmmse))
}
