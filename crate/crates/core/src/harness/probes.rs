//! Spatial selectivity probes: angle sweeps with speech and noise patterns.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::enhance::{enhance_wave, MaskSource, NetworkMask};
use super::plot::{heatmap_png, line_png};
use super::{csv_float, derive_seed, HarnessConfig, RunManifest, RunRecorder};
use crate::audio::MultiWave;
use crate::corpus::{Corpus, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::mask::apply_mask;
use crate::metrics::{energy_retention, si_sdr};
use crate::roomsim::{angle_grid, anechoic_probe, probe_array, ArrayPose};
use crate::stft::Stft;

const NOISE_STREAM: u64 = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub angle_deg: f64,
    /// Mean SI-SDR of the output against the unprocessed reference-channel probe.
    pub si_sdr: f64,
    /// Mean fraction of probe energy kept.
    pub energy_retention: f64,
    pub suppressed: bool,
}

/// Mask source response to `signals` arriving from each angle of `grid`.
pub fn sweep_angle(
    source: &dyn MaskSource,
    stft: &Stft,
    array: &ArrayPose,
    grid: &[f64],
    distance_m: f64,
    signals: &[MultiWave],
    suppressed_below: f64,
) -> Result<Vec<SweepPoint>> {
    if signals.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one probe signal".into()));
    }
    grid.iter()
        .map(|&angle| {
            let (mut sdr, mut ret) = (0.0, 0.0);
            for (u, s) in signals.iter().enumerate() {
                let probe = anechoic_probe(array, angle, distance_m, s)?;
                let reference = probe.channel_vec(0);
                let out = enhance_wave(source, stft, &probe, u as u64)?;
                sdr += si_sdr(&out, &reference)?;
                ret += energy_retention(&out, &reference)?;
            }
            let n = signals.len() as f64;
            let energy_retention = ret / n;
            Ok(SweepPoint {
                angle_deg: angle,
                si_sdr: sdr / n,
                energy_retention,
                suppressed: energy_retention < suppressed_below,
            })
        })
        .collect()
}

/// Mean retention at `angle = 0` divided by the mean over `lo ≤ |angle| ≤ hi`.
pub fn retention_contrast(points: &[SweepPoint], lo: f64, hi: f64) -> Option<f64> {
    let front = points.iter().find(|p| p.angle_deg == 0.0)?.energy_retention;
    let side: Vec<f64> = points
        .iter()
        .filter(|p| (lo..=hi).contains(&p.angle_deg.abs()))
        .map(|p| p.energy_retention)
        .collect();
    if side.is_empty() {
        return None;
    }
    Some(front / (side.iter().sum::<f64>() / side.len() as f64))
}

pub const SWEEP_HEADER: &str = "angle_deg,si_sdr_db,energy_retention,retention_db,suppressed";

/// Probe utterances: test-split files of the configured corpus, cut to `max_seconds`.
pub fn probe_utterances(cfg: &HarnessConfig) -> Result<Vec<MultiWave>> {
    let n = cfg.sweep.utterances;
    let max = (cfg.sweep.max_seconds * cfg.sample_rate as f64).round() as usize;
    let cut = |w: MultiWave| {
        let len = w.len().min(max);
        w.slice(0, len)
    };
    match &cfg.corpus.path {
        Some(p) => {
            let corpus = Corpus::open(p)?;
            let start = corpus.len().saturating_sub(n);
            (start..corpus.len()).map(|i| Ok(cut(corpus.load(i)?))).collect()
        }
        None => {
            let synth = SyntheticCorpus {
                sample_rate: cfg.sample_rate,
                ..cfg.corpus.synthetic.clone()
            };
            let start = synth.utterances.saturating_sub(n);
            Ok((start..synth.utterances)
                .map(|i| cut(MultiWave::mono(cfg.sample_rate, synth.utterance(i))))
                .collect())
        }
    }
}

fn load_network(cfg: &HarnessConfig, rec: &mut RunRecorder) -> Result<NetworkMask> {
    let path = cfg.checkpoint_path()?;
    rec.input(path)?;
    let n = NetworkMask::load(path, cfg.seed)?;
    if n.spec.channels < 2 {
        return Err(Error::InvalidArgument("probes need a multichannel network".into()));
    }
    Ok(n)
}

/// `sweep-angle`: `sweep.csv`, `sweep_summary.json` and `sweep.png`.
pub fn cmd_sweep_angle(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest> {
    let mut rec = RunRecorder::start("sweep-angle", out)?;
    let net = load_network(cfg, &mut rec)?;
    let s = &cfg.sweep;
    let stft = Stft::new(net.frame_params(cfg.sample_rate));
    let array = probe_array(net.spec.channels, cfg.scenario.array_diameter);
    let grid = angle_grid(s.start_deg, s.stop_deg, s.step_deg);
    let signals = probe_utterances(cfg)?;
    let points = sweep_angle(&net, &stft, &array, &grid, s.distance_m, &signals, s.suppressed_below)?;
    write_sweep(out, &points)?;
    let summary = serde_json::json!({
        "label": net.spec.label(),
        "utterances": signals.len(),
        "distance_m": s.distance_m,
        "retention_contrast_30_150": retention_contrast(&points, 30.0, 150.0),
        "suppressed_angles": points.iter().filter(|p| p.suppressed).count(),
    });
    fs::write(out.join("sweep_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    rec.finish(cfg)
}

pub fn write_sweep(out: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut f = fs::File::create(out.join("sweep.csv"))?;
    writeln!(f, "{SWEEP_HEADER}")?;
    for p in points {
        writeln!(
            f,
            "{},{},{},{},{}",
            p.angle_deg,
            csv_float(p.si_sdr),
            csv_float(p.energy_retention),
            csv_float(10.0 * p.energy_retention.log10()),
            p.suppressed as u8
        )?;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.angle_deg).collect();
    let ys: Vec<f64> = points.iter().map(|p| 10.0 * p.energy_retention.log10()).collect();
    line_png(&out.join("sweep.png"), &xs, &ys)
}

/// Angle × frequency level matrix in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePattern {
    pub angles: Vec<f64>,
    pub frequencies: Vec<f64>,
    /// `levels[a][k]`; `-∞` where the output is silent.
    pub levels: Vec<Vec<f64>>,
}

impl NoisePattern {
    /// Mean finite level inside `|angle| ≤ sector` minus the mean outside.
    pub fn sector_margin(&self, sector: f64) -> Option<f64> {
        let mean = |inside: bool| {
            let v: Vec<f64> = self
                .angles
                .iter()
                .zip(&self.levels)
                .filter(|(a, _)| (a.abs() <= sector) == inside)
                .flat_map(|(_, row)| row.iter().copied().filter(|x| x.is_finite()))
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(mean(true)? - mean(false)?)
    }
}

/// Time-averaged output magnitude for white noise from each angle, in dB
/// relative to the maximum of the 0° column (or of all columns when 0° is
/// not on the grid or silent).
#[allow(clippy::too_many_arguments)]
pub fn noise_pattern(
    source: &dyn MaskSource,
    stft: &Stft,
    array: &ArrayPose,
    grid: &[f64],
    distance_m: f64,
    draws: usize,
    samples: usize,
    seed: u64,
) -> Result<NoisePattern> {
    if draws == 0 {
        return Err(Error::InvalidArgument("noise pattern needs at least one draw".into()));
    }
    let fs = stft.params().sample_rate;
    let noises: Vec<MultiWave> = (0..draws)
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM, d as u64));
            MultiWave::mono(fs, (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect())
        })
        .collect();
    let bins = stft.params().bins();
    let mut mags = Vec::with_capacity(grid.len());
    for &angle in grid {
        let mut acc = vec![0.0; bins];
        for (d, w) in noises.iter().enumerate() {
            let probe = anechoic_probe(array, angle, distance_m, w)?;
            let y = stft.analyze(&probe)?;
            let s = apply_mask(&source.mask(&y, d as u64)?, &y)?;
            let r = s.reference();
            let frames = r.ncols() as f64;
            for (k, a) in acc.iter_mut().enumerate() {
                *a += r.row(k).iter().map(|z| z.norm()).sum::<f64>() / frames;
            }
        }
        mags.push(acc.into_iter().map(|a| a / draws as f64).collect::<Vec<f64>>());
    }
    let peak_of = |row: &[f64]| row.iter().copied().fold(0.0, f64::max);
    let zero_col = grid.iter().position(|a| *a == 0.0).map(|i| peak_of(&mags[i]));
    let norm = match zero_col {
        Some(p) if p > 0.0 => p,
        _ => mags.iter().map(|r| peak_of(r)).fold(0.0, f64::max),
    };
    let levels = mags
        .iter()
        .map(|row| {
            row.iter()
                .map(|&m| if m > 0.0 && norm > 0.0 { 20.0 * (m / norm).log10() } else { f64::NEG_INFINITY })
                .collect()
        })
        .collect();
    Ok(NoisePattern {
        angles: grid.to_vec(),
        frequencies: (0..bins).map(|k| stft.params().bin_frequency(k)).collect(),
        levels,
    })
}

pub fn write_pattern(out: &Path, p: &NoisePattern) -> Result<()> {
    let mut f = fs::File::create(out.join("noise_pattern.csv"))?;
    let header: Vec<String> = p.frequencies.iter().map(|hz| format!("{hz}")).collect();
    writeln!(f, "angle_deg,{}", header.join(","))?;
    for (a, row) in p.angles.iter().zip(&p.levels) {
        let cells: Vec<String> = row.iter().map(|v| csv_float(*v)).collect();
        writeln!(f, "{a},{}", cells.join(","))?;
    }
    heatmap_png(&out.join("noise_pattern.png"), &p.levels, -40.0, 0.0)
}

/// `noise-pattern`: `noise_pattern.csv`, `noise_pattern.png` and the sector margin.
pub fn cmd_noise_pattern(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest> {
    let mut rec = RunRecorder::start("noise-pattern", out)?;
    let net = load_network(cfg, &mut rec)?;
    let p = &cfg.pattern;
    let stft = Stft::new(net.frame_params(cfg.sample_rate));
    let array = probe_array(net.spec.channels, cfg.scenario.array_diameter);
    let grid = angle_grid(p.start_deg, p.stop_deg, p.step_deg);
    let samples = (p.seconds * cfg.sample_rate as f64).round() as usize;
    let pattern = noise_pattern(&net, &stft, &array, &grid, p.distance_m, p.draws, samples, cfg.seed)?;
    write_pattern(out, &pattern)?;
    let margin = pattern.sector_margin(p.sector_deg);
    log::info!("in-sector minus out-of-sector level: {margin:?} dB");
    let summary = serde_json::json!({
        "label": net.spec.label(),
        "sector_deg": p.sector_deg,
        "in_minus_out_db": margin,
    });
    fs::write(out.join("pattern_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    rec.finish(cfg)
}
