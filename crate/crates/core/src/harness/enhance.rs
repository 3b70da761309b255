//! Mask sources and the enhancement methods applied to dataset scenes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use super::{derive_seed, HarnessConfig, Method, RunManifest, RunRecorder};
use crate::audio::MultiWave;
use crate::error::{Error, Result};
use crate::linear_spatial::{oracle_mvdr, MvdrReport, SteeringMethod};
use crate::mask::{apply_mask, ideal_cirm, ComplexMask};
use crate::net::{self, load_checkpoint, Mode, NetParams, NetSpec};
use crate::roomsim::Scene;
use crate::stft::{FrameParams, Spectrogram, Stft};
use crate::training::{train, TrainOutputs};

const INFERENCE_STREAM: u64 = 300;

/// Anything that produces a reference-channel mask from a multichannel STFT.
pub trait MaskSource {
    fn channels(&self) -> usize;
    /// Uncompressed mask; `draw` selects the sequence permutations of NSF networks.
    fn mask(&self, input: &Spectrogram, draw: u64) -> Result<ComplexMask>;
    /// Whether different draws give different masks.
    fn is_stochastic(&self) -> bool {
        false
    }
}

/// Passes the reference channel through unchanged.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMask {
    pub channels: usize,
}

impl MaskSource for IdentityMask {
    fn channels(&self) -> usize {
        self.channels
    }

    fn mask(&self, input: &Spectrogram, _draw: u64) -> Result<ComplexMask> {
        Ok(ComplexMask::ones(input.bins(), input.frames()))
    }
}

/// Suppresses everything.
#[derive(Debug, Clone, Copy)]
pub struct ZeroMask {
    pub channels: usize,
}

impl MaskSource for ZeroMask {
    fn channels(&self) -> usize {
        self.channels
    }

    fn mask(&self, input: &Spectrogram, _draw: u64) -> Result<ComplexMask> {
        Ok(ComplexMask::uncompressed(Array2::from_elem(
            (input.bins(), input.frames()),
            Complex64::new(0.0, 0.0),
        )))
    }
}

/// A trained network; NSF permutations come from `seed` and the draw index.
#[derive(Debug, Clone)]
pub struct NetworkMask {
    pub spec: NetSpec,
    pub params: NetParams,
    pub seed: u64,
}

impl NetworkMask {
    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        let (spec, params) = load_checkpoint(path)?;
        Ok(Self { spec, params, seed })
    }

    pub fn frame_params(&self, sample_rate: u32) -> FrameParams {
        crate::training::frame_params(&self.spec, sample_rate)
    }
}

impl MaskSource for NetworkMask {
    fn channels(&self) -> usize {
        self.spec.channels
    }

    fn mask(&self, input: &Spectrogram, draw: u64) -> Result<ComplexMask> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, INFERENCE_STREAM, draw));
        let m = net::forward(input, &self.spec, &self.params, &mut rng)?;
        Ok(m.decompress()?.0)
    }

    fn is_stochastic(&self) -> bool {
        self.spec.nsf
    }
}

/// `x` cut or zero-padded to `len` samples.
pub fn pad_to(mut x: Vec<f64>, len: usize) -> Vec<f64> {
    x.resize(len, 0.0);
    x
}

/// Zero-pads `wave` by one hop in front and enough at the end that every input
/// sample lies under two analysis frames.
pub fn pad_for_analysis(wave: &MultiWave, p: FrameParams) -> MultiWave {
    let (n, hop) = (wave.len(), p.hop);
    let needed = n + 2 * hop;
    let frames = if needed <= p.window_len { 1 } else { (needed - p.window_len).div_ceil(hop) + 1 };
    let mut data = Array2::zeros((wave.channels(), p.samples_for(frames)));
    data.slice_mut(s![.., hop..hop + n]).assign(&wave.data);
    MultiWave::new(wave.sample_rate, data)
}

/// STFT of the padded signal.
pub fn analyze_padded(stft: &Stft, wave: &MultiWave) -> Result<Spectrogram> {
    stft.analyze(&pad_for_analysis(wave, stft.params()))
}

/// Inverse of [`analyze_padded`] for an `n`-sample input.
pub fn synthesize_unpadded(stft: &Stft, spec: &Spectrogram, n: usize) -> Result<Vec<f64>> {
    let hop = stft.params().hop;
    let y = stft.synthesize(spec)?.channel_vec(0);
    Ok(pad_to(y.get(hop..).map(<[f64]>::to_vec).unwrap_or_default(), n))
}

/// Masks the reference channel of `wave` and resynthesizes at the input length.
pub fn enhance_wave(source: &dyn MaskSource, stft: &Stft, wave: &MultiWave, draw: u64) -> Result<Vec<f64>> {
    if wave.channels() != source.channels() {
        return Err(Error::Shape(format!(
            "mask source expects {} channels, signal has {}",
            source.channels(),
            wave.channels()
        )));
    }
    let y = analyze_padded(stft, wave)?;
    let m = source.mask(&y, draw)?;
    synthesize_unpadded(stft, &apply_mask(&m, &y)?, wave.len())
}

/// One processing chain with everything it needs loaded.
pub struct Enhancer {
    pub method: Method,
    pub stft: Stft,
    pub lambda: f64,
    pub network: Option<NetworkMask>,
    pub post_filter: Option<NetworkMask>,
    pub draws: usize,
}

impl Enhancer {
    /// Enhancer without a post-filter; two-stage methods need [`Enhancer::with_post_filter`].
    pub fn new(cfg: &HarnessConfig, method: Method, channels: usize) -> Result<Self> {
        let network = match method {
            Method::Checkpoint | Method::NsfPf => {
                let n = NetworkMask::load(cfg.checkpoint_path()?, cfg.seed)?;
                if n.spec.channels != channels {
                    return Err(Error::Shape(format!(
                        "checkpoint expects {} channels, dataset has {channels}",
                        n.spec.channels
                    )));
                }
                Some(n)
            }
            _ => None,
        };
        if let Some(n) = &network {
            if n.spec.bins != cfg.frame_params().bins() {
                return Err(Error::Shape(format!(
                    "checkpoint has {} bins, config STFT has {}",
                    n.spec.bins,
                    cfg.frame_params().bins()
                )));
            }
        }
        let stochastic = network.as_ref().is_some_and(|n| n.is_stochastic());
        Ok(Self {
            method,
            stft: Stft::new(cfg.frame_params()),
            lambda: cfg.lambda,
            network,
            post_filter: None,
            draws: if stochastic { cfg.inference_draws.max(1) } else { 1 },
        })
    }

    pub fn with_post_filter(mut self, pf: NetworkMask) -> Result<Self> {
        if pf.spec.mode != Mode::PF || pf.spec.channels != 1 {
            return Err(Error::InvalidArgument("post-filter checkpoint must be a PF network".into()));
        }
        self.post_filter = Some(pf);
        Ok(self)
    }

    pub fn needs_post_filter(&self) -> bool {
        matches!(self.method, Method::MvdrPf | Method::NsfPf)
    }

    /// Output of the stage before the post-filter (the full chain for one-stage methods).
    pub fn first_stage(&self, scene: &Scene, draw: u64) -> Result<(Vec<f64>, Option<MvdrReport>)> {
        let n = scene.mixture.len();
        match self.method {
            Method::Noisy => Ok((scene.mixture.channel_vec(0), None)),
            Method::Checkpoint | Method::NsfPf => {
                let net = self.network.as_ref().expect("network loaded");
                Ok((enhance_wave(net, &self.stft, &scene.mixture, draw)?, None))
            }
            Method::OracleMvdr | Method::MvdrPf => {
                let y = analyze_padded(&self.stft, &scene.mixture)?;
                let s = analyze_padded(&self.stft, &scene.target_reverb)?;
                let v = analyze_padded(&self.stft, &scene.noise_ref)?;
                let (out, report) = oracle_mvdr(&y, &s, &v, self.lambda, SteeringMethod::SpeechCovariance)?;
                Ok((synthesize_unpadded(&self.stft, &out, n)?, Some(report)))
            }
            Method::OracleCirm => {
                let y = analyze_padded(&self.stft, &scene.mixture)?;
                let s = analyze_padded(&self.stft, &scene.target_ref)?;
                let out = apply_mask(&ideal_cirm(&s, &y)?, &y)?;
                Ok((synthesize_unpadded(&self.stft, &out, n)?, None))
            }
        }
    }

    /// Enhanced reference-channel signal at the input length.
    pub fn enhance(&self, scene: &Scene, draw: u64) -> Result<(Vec<f64>, Option<MvdrReport>)> {
        let (first, report) = self.first_stage(scene, draw)?;
        if !self.needs_post_filter() {
            return Ok((first, report));
        }
        let pf = self
            .post_filter
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} needs a post-filter", self.method)))?;
        let wave = MultiWave::mono(scene.mixture.sample_rate, first);
        Ok((enhance_wave(pf, &self.stft, &wave, draw)?, report))
    }
}

/// Writes first-stage outputs of `split` to `dir/<id>.wav`.
fn write_first_stage(enh: &Enhancer, ds: &Dataset, split: &str, count: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, e) in ds.entries(split)?.iter().take(count).enumerate() {
        let scene = ds.load_scene(split, i)?;
        let (s, _) = enh.first_stage(&scene, i as u64)?;
        MultiWave::mono(scene.mixture.sample_rate, s).write_wav(dir.join(format!("{}.wav", e.id)))?;
    }
    Ok(())
}

/// Trains a post-filter on first-stage outputs of the train and val splits.
///
/// The noise target is the first-stage output minus the target, so the
/// post-filter input decomposes exactly into its speech and noise targets.
pub fn train_post_filter(cfg: &HarnessConfig, enh: &Enhancer, ds: &Dataset, dir: &Path) -> Result<NetworkMask> {
    let inputs = dir.join("inputs");
    let train_n = ds.entries("train")?.len();
    let val_n = ds.entries("val")?.len();
    write_first_stage(enh, ds, "train", train_n, &inputs.join("train"))?;
    write_first_stage(enh, ds, "val", val_n, &inputs.join("val"))?;
    let train_src = ds.source("train")?.with_mixtures(inputs.join("train"));
    let val_src = ds.source("val")?.with_mixtures(inputs.join("val"));
    let spec = cfg.net_spec(Mode::PF, false, 1);
    let checkpoint = dir.join("checkpoint.bin");
    let outcome = train(
        &spec,
        &train_src,
        &val_src,
        &cfg.train,
        &TrainOutputs {
            checkpoint: Some(checkpoint.clone()),
            log_csv: Some(dir.join("train_log.csv")),
        },
    )?;
    log::info!(
        "post-filter best epoch {} (val {:.4})",
        outcome.best_epoch,
        outcome.best_val_loss
    );
    NetworkMask::load(&checkpoint, cfg.seed)
}

/// Builds the enhancer for `cfg.method`, training a post-filter under `out/pf` when needed.
pub fn build_enhancer(cfg: &HarnessConfig, ds: &Dataset, out: &Path, rec: &mut RunRecorder) -> Result<Enhancer> {
    let enh = Enhancer::new(cfg, cfg.method, ds.manifest.channels)?;
    if let Some(n) = &cfg.checkpoint {
        if enh.network.is_some() {
            rec.input(n)?;
        }
    }
    if !enh.needs_post_filter() {
        return Ok(enh);
    }
    let pf = match &cfg.pf_checkpoint {
        Some(p) => {
            rec.input(p)?;
            NetworkMask::load(p, cfg.seed)?
        }
        None => train_post_filter(cfg, &enh, ds, &out.join("pf"))?,
    };
    enh.with_post_filter(pf)
}

/// Indices of the scenes processed in `split`.
pub fn scene_count(cfg: &HarnessConfig, ds: &Dataset) -> Result<usize> {
    let n = ds.entries(&cfg.split)?.len();
    Ok(cfg.max_scenes.map_or(n, |m| m.min(n)))
}

/// `enhance`: writes `enhanced/<id>.wav` for each scene of the configured split.
pub fn cmd_enhance(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest> {
    let ds = Dataset::open(cfg.dataset_dir()?)?;
    let mut rec = RunRecorder::start("enhance", out)?;
    let count = scene_count(cfg, &ds)?;
    for f in ds.files(&cfg.split)? {
        rec.input(&f)?;
    }
    let enh = build_enhancer(cfg, &ds, out, &mut rec)?;
    let dir: PathBuf = out.join("enhanced");
    fs::create_dir_all(&dir)?;
    let mut report_csv = if matches!(cfg.method, Method::OracleMvdr | Method::MvdrPf) {
        let mut f = fs::File::create(out.join("mvdr_report.csv"))?;
        writeln!(f, "id,max_distortion,log10_max_distortion,degenerate_points,loaded_points")?;
        Some(f)
    } else {
        None
    };
    for (i, e) in ds.entries(&cfg.split)?.iter().take(count).enumerate() {
        let scene = ds.load_scene(&cfg.split, i)?;
        let (s, report) = enh.enhance(&scene, 0)?;
        MultiWave::mono(scene.mixture.sample_rate, s).write_wav(dir.join(format!("{}.wav", e.id)))?;
        if let (Some(f), Some(r)) = (report_csv.as_mut(), report) {
            writeln!(
                f,
                "{},{:e},{:.3},{},{}",
                e.id,
                r.max_distortion,
                r.max_distortion.max(f64::MIN_POSITIVE).log10(),
                r.degenerate_points,
                r.loaded_points
            )?;
            log::info!("{}: max |h^H d - 1| = {:.3e}", e.id, r.max_distortion);
        }
    }
    drop(report_csv);
    rec.finish(cfg)
}

/// Enhancer over an in-memory scene using a fresh STFT; for examples and tests.
pub fn enhance_scene(source: &dyn MaskSource, scene: &Scene, params: FrameParams, draw: u64) -> Result<Vec<f64>> {
    enhance_wave(source, &Stft::new(params), &scene.mixture, draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::tests::tiny_config;
    use crate::harness::dataset::cmd_simulate;
    use crate::net::save_checkpoint;
    use crate::training::SceneSource;

    #[test]
    fn identity_mask_reconstructs_the_reference() {
        let stft = Stft::new(FrameParams::new(64, 16_000));
        let x: Vec<f64> = (0..1000).map(|n| (n as f64 * 0.05).sin()).collect();
        let w = MultiWave::new(16_000, Array2::from_shape_fn((2, 1000), |(c, n)| x[n] * (c + 1) as f64));
        let y = enhance_wave(&IdentityMask { channels: 2 }, &stft, &w, 0).unwrap();
        assert_eq!(y.len(), 1000);
        let err = y.iter().zip(&x).fold(0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9, "{err}");
        let z = enhance_wave(&ZeroMask { channels: 2 }, &stft, &w, 0).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(enhance_wave(&IdentityMask { channels: 3 }, &stft, &w, 0).is_err());
    }

    #[test]
    fn network_draws_are_reproducible() {
        let spec = NetSpec::new(Mode::T, true, 2, 33).with_hidden((4, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = NetworkMask {
            params: NetParams::init(&spec, &mut rng),
            spec,
            seed: 7,
        };
        let stft = Stft::new(FrameParams::new(64, 16_000));
        let w = MultiWave::new(16_000, Array2::from_shape_fn((2, 600), |(c, k)| ((k * (c + 3)) as f64 * 0.01).cos()));
        let a = enhance_wave(&n, &stft, &w, 0).unwrap();
        assert_eq!(a, enhance_wave(&n, &stft, &w, 0).unwrap());
        assert_ne!(a, enhance_wave(&n, &stft, &w, 1).unwrap());
        assert!(n.is_stochastic());
    }

    #[test]
    fn two_stage_method_trains_a_post_filter() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.window_len = 64;
        cfg.net.hidden = Some((4, 4));
        cfg.train.max_epochs = 1;
        cfg.train.batch_size = 2;
        let data = dir.path().join("data");
        cmd_simulate(&cfg, &data).unwrap();
        cfg.dataset = Some(data.clone());
        cfg.method = Method::MvdrPf;
        let out = dir.path().join("enh");
        let run = cmd_enhance(&cfg, &out).unwrap();
        assert!(out.join("pf/checkpoint.bin").exists());
        assert!(out.join("mvdr_report.csv").exists());
        let ds = Dataset::open(&data).unwrap();
        let id = &ds.entries("test").unwrap()[0].id;
        let w = MultiWave::read_wav(out.join(format!("enhanced/{id}.wav"))).unwrap();
        assert_eq!(w.len(), ds.entries("test").unwrap()[0].samples);
        assert!(run.outputs.iter().any(|r| r.path.ends_with("train_log.csv") && r.volatile));
        // PF scenes decompose exactly into their targets.
        let src = ds.source("train").unwrap().with_mixtures(out.join("pf/inputs/train"));
        let s = src.load(0).unwrap();
        let err = (0..s.len()).fold(0f64, |m, n| m.max((s.mixture.data[(0, n)] - s.target[n] - s.noise[n]).abs()));
        assert!(err < 1e-6);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetSpec::new(Mode::FT, false, 2, 257).with_hidden((2, 2));
        let p = dir.path().join("n.bin");
        save_checkpoint(&p, &spec, &NetParams::zeros(&spec)).unwrap();
        let mut cfg = HarnessConfig::default();
        cfg.checkpoint = Some(p);
        assert!(Enhancer::new(&cfg, Method::Checkpoint, 3).is_err());
        assert!(Enhancer::new(&cfg, Method::Checkpoint, 2).is_ok());
    }
}
