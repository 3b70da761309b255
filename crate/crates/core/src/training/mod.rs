//! Crop sampling, per-example gradients and the epoch loop with validation-based
//! model selection.

pub mod adam;
pub mod loss;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use loss::{loss, loss_on_tape, LossConfig, LossTargets, LossTerms};

use crate::audio::MultiWave;
use crate::error::{Error, Result};
use crate::mask::{complex_mul_const, decompress_on_tape};
use crate::net::{forward_on_tape, save_checkpoint, NetParams, NetSpec, Permutations};
use crate::numerics::tape::{Tape, Tensor};
use crate::roomsim::Scene;
use crate::stft::{to_tensor, FrameParams, Stft};

/// Mixes the training seed for the fixed validation permutations.
const VALIDATION_SALT: u64 = 0x5eed_0f_7a11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub crop_seconds: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub speech_only: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            batch_size: 6,
            max_epochs: 40,
            learning_rate: 1e-3,
            crop_seconds: 3.0,
            alpha: 10.0,
            seed: 0,
            patience: 10,
            speech_only: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn paper() -> Self {
        Self {
            max_epochs: 250,
            ..Self::desk()
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            speech_only: self.speech_only,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument("batch size and epoch count must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.crop_seconds > 0.0 && self.alpha > 0.0) {
            return Err(Error::InvalidArgument("learning rate, crop length and α must be positive".into()));
        }
        Ok(())
    }
}

/// Network input with its reference-channel speech and noise targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingScene {
    pub mixture: MultiWave,
    pub target: Vec<f64>,
    pub noise: Vec<f64>,
}

impl TrainingScene {
    pub fn new(mixture: MultiWave, target: Vec<f64>, noise: Vec<f64>) -> Result<Self> {
        if target.len() != mixture.len() || noise.len() != mixture.len() {
            return Err(Error::Shape("mixture and targets differ in length".into()));
        }
        Ok(Self { mixture, target, noise })
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            mixture: self.mixture.slice(start, len),
            target: self.target[start..start + len].to_vec(),
            noise: self.noise[start..start + len].to_vec(),
        }
    }
}

impl From<&Scene> for TrainingScene {
    fn from(s: &Scene) -> Self {
        Self {
            mixture: s.mixture.clone(),
            target: s.target_ref.channel_vec(0),
            noise: s.noise_ref.channel_vec(0),
        }
    }
}

/// Random-access collection of training scenes.
pub trait SceneSource {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<TrainingScene>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SceneSource for Vec<TrainingScene> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn load(&self, index: usize) -> Result<TrainingScene> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("scene {index} out of range")))
    }
}

pub fn crop_len(seconds: f64, sample_rate: u32) -> usize {
    (seconds * sample_rate as f64).round() as usize
}

/// Uniform crop start for a signal of `len` samples; `0` when it fits exactly.
pub fn crop_offset(len: usize, crop: usize, rng: &mut impl Rng) -> Result<usize> {
    if len < crop {
        return Err(Error::TooShort { needed: crop, got: len });
    }
    Ok(if len == crop { 0 } else { rng.gen_range(0..=len - crop) })
}

/// Aligned crop of mixture and targets with its offset.
pub fn crop_sample(scene: &TrainingScene, seconds: f64, rng: &mut impl Rng) -> Result<(usize, TrainingScene)> {
    let n = crop_len(seconds, scene.mixture.sample_rate);
    let offset = crop_offset(scene.len(), n, rng)?;
    Ok((offset, scene.slice(offset, n)))
}

pub fn frame_params(spec: &NetSpec, sample_rate: u32) -> FrameParams {
    FrameParams::new(2 * (spec.bins - 1), sample_rate)
}

/// Loss of one cropped example and, if `params` need it, the parameter gradients.
pub fn example_loss(
    spec: &NetSpec,
    params: &NetParams,
    stft: &Arc<Stft>,
    example: &TrainingScene,
    perms: &Permutations,
    cfg: &LossConfig,
    with_grads: bool,
) -> Result<(LossTerms, Option<Vec<Tensor>>)> {
    let y = stft.analyze(&example.mixture)?;
    let targets = LossTargets::new(stft, &example.target, &example.noise)?;
    let mut tape = Tape::new();
    let (m, vars) = forward_on_tape(&mut tape, spec, params, &y, perms)?;
    let y0 = y.reference();
    let mask = decompress_on_tape(&mut tape, m);
    let s_hat = complex_mul_const(&mut tape, mask, &y0);
    let (total, terms) = loss_on_tape(&mut tape, stft, s_hat, &y0, &targets, cfg)?;
    if !with_grads {
        return Ok((terms, None));
    }
    let mut grads = tape.backward(total)?;
    let g = vars
        .iter()
        .zip(&params.tensors)
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    Ok((terms, Some(g)))
}

/// Loss of the unprocessed reference channel (mask of ones).
pub fn passthrough_loss(stft: &Arc<Stft>, example: &TrainingScene, cfg: &LossConfig) -> Result<LossTerms> {
    let y = stft.analyze(&example.mixture)?;
    let targets = LossTargets::new(stft, &example.target, &example.noise)?;
    let y0 = y.reference();
    let mut tape = Tape::new();
    let s = tape.constant(to_tensor(&y0));
    Ok(loss_on_tape(&mut tape, stft, s, &y0, &targets, cfg)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,wall_seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:.3}", self.epoch, self.train_loss, self.val_loss, self.wall_seconds)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the lowest validation loss.
    pub params: NetParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Where [`train`] writes its best checkpoint and CSV log, if anywhere.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub log_csv: Option<PathBuf>,
}

/// Mean validation loss over full-length-from-start crops with permutations
/// fixed by `seed`.
pub fn validation_loss(
    spec: &NetSpec,
    params: &NetParams,
    stft: &Arc<Stft>,
    val: &dyn SceneSource,
    cfg: &TrainConfig,
) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Dataset("empty validation split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VALIDATION_SALT);
    let mut sum = 0.0;
    for i in 0..val.len() {
        let scene = val.load(i)?;
        let n = crop_len(cfg.crop_seconds, scene.mixture.sample_rate);
        if scene.len() < n {
            return Err(Error::TooShort { needed: n, got: scene.len() });
        }
        let ex = scene.slice(0, n);
        let perms = Permutations::draw(spec, spec.bins, stft.params().frames_for(n), &mut rng);
        sum += example_loss(spec, params, stft, &ex, &perms, &cfg.loss_config(), false)?.0.total;
    }
    Ok(sum / val.len() as f64)
}

/// Mean passthrough loss over the validation crops used by [`validation_loss`].
pub fn passthrough_validation_loss(stft: &Arc<Stft>, val: &dyn SceneSource, cfg: &TrainConfig) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..val.len() {
        let scene = val.load(i)?;
        let n = crop_len(cfg.crop_seconds, scene.mixture.sample_rate);
        sum += passthrough_loss(stft, &scene.slice(0, n), &cfg.loss_config())?.total;
    }
    Ok(sum / val.len().max(1) as f64)
}

/// Adam on batch-averaged gradients; keeps the parameters with the lowest validation loss.
pub fn train(
    spec: &NetSpec,
    train_set: &dyn SceneSource,
    val_set: &dyn SceneSource,
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("empty training split".into()));
    }
    let sample_rate = train_set.load(0)?.mixture.sample_rate;
    let stft = Arc::new(Stft::new(frame_params(spec, sample_rate)));
    let frames = stft.params().frames_for(crop_len(cfg.crop_seconds, sample_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetParams::init(spec, &mut rng);
    let mut adam = Adam::new(cfg.adam_config(), &params.tensors);
    let loss_cfg = cfg.loss_config();

    let mut log = match &outputs.log_csv {
        Some(p) => {
            if let Some(d) = p.parent() {
                fs::create_dir_all(d)?;
            }
            let mut f = fs::File::create(p)?;
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };

    let start = Instant::now();
    let mut best = (f64::INFINITY, 0, params.clone());
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
            for &i in batch {
                let (_, ex) = crop_sample(&train_set.load(i)?, cfg.crop_seconds, &mut rng)?;
                let perms = Permutations::draw(spec, spec.bins, frames, &mut rng);
                let (terms, grads) = example_loss(spec, &params, &stft, &ex, &perms, &loss_cfg, true)?;
                if !terms.total.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                epoch_loss += terms.total;
                for (a, g) in acc.iter_mut().zip(grads.expect("gradients requested")) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            acc.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= scale));
            adam.update(&mut params.tensors, &acc);
            if !params.is_finite() {
                return Err(Error::Diverged { epoch });
            }
        }
        let val_loss = validation_loss(spec, &params, &stft, val_set, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}: train {:.4} val {:.4}",
            spec.label(),
            entry.train_loss,
            entry.val_loss
        );
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", entry.csv_row())?;
        }
        history.push(entry);
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
            since_best = 0;
            if let Some(p) = &outputs.checkpoint {
                save_checkpoint(p, spec, &params)?;
            }
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        best_epoch: best.1,
        best_val_loss: best.0,
        history,
        stopped_early,
    })
}
