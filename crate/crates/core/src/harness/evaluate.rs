//! `train`, `evaluate` and `ablation`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DiskSource};
use super::enhance::{build_enhancer, scene_count, Enhancer};
use super::{csv_float, HarnessConfig, Method, RunManifest, RunRecorder};
use crate::error::{Error, Result};
use crate::metrics::{estoi, si_sdr, MetricReport};
use crate::net::Mode;
use crate::stft::Stft;
use crate::training::{frame_params, passthrough_validation_loss, train, SceneSource, TrainOutputs, TrainingScene};

/// Reference channel only, for post-filter networks trained on raw mixtures.
struct MonoSource(DiskSource);

impl SceneSource for MonoSource {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn load(&self, index: usize) -> Result<TrainingScene> {
        let s = self.0.load(index)?;
        TrainingScene::new(s.mixture.select_channel(0), s.target, s.noise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub label: String,
    pub parameters: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss of the unprocessed reference channel.
    pub passthrough_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// `train`: fits `cfg.net` on the dataset's train split, validating on val.
pub fn cmd_train(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest> {
    let ds = Dataset::open(cfg.dataset_dir()?)?;
    let mut rec = RunRecorder::start("train", out)?;
    for split in ["train", "val"] {
        for f in ds.files(split)? {
            rec.input(&f)?;
        }
    }
    let spec = cfg.net_spec(cfg.net.mode, cfg.net.nsf, ds.manifest.channels);
    let outputs = TrainOutputs {
        checkpoint: Some(out.join("checkpoint.bin")),
        log_csv: Some(out.join("train_log.csv")),
    };
    let (tr, va) = (ds.source("train")?, ds.source("val")?);
    let stft = Arc::new(Stft::new(frame_params(&spec, cfg.sample_rate)));
    let (outcome, passthrough) = if spec.mode == Mode::PF {
        let (tr, va) = (MonoSource(tr), MonoSource(va));
        (train(&spec, &tr, &va, &cfg.train, &outputs)?, passthrough_validation_loss(&stft, &va, &cfg.train)?)
    } else {
        (train(&spec, &tr, &va, &cfg.train, &outputs)?, passthrough_validation_loss(&stft, &va, &cfg.train)?)
    };
    let summary = TrainSummary {
        label: spec.label(),
        parameters: outcome.params.count(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        passthrough_val_loss: passthrough,
        epochs_run: outcome.history.len(),
        stopped_early: outcome.stopped_early,
    };
    fs::write(out.join("train_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    rec.finish(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScores {
    pub id: String,
    pub si_sdr_noisy: f64,
    pub si_sdr: f64,
    pub estoi_noisy: f64,
    pub estoi: f64,
    /// Worst distortionless-constraint violation of the MVDR stage.
    pub max_distortion: Option<f64>,
}

impl SceneScores {
    pub fn delta_si_sdr(&self) -> f64 {
        self.si_sdr - self.si_sdr_noisy
    }

    pub fn delta_estoi(&self) -> f64 {
        self.estoi - self.estoi_noisy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: Method,
    pub label: String,
    pub split: String,
    pub n: usize,
    /// Permutation draws averaged per scene.
    pub draws: usize,
    pub si_sdr_noisy: MetricReport,
    pub si_sdr: MetricReport,
    pub delta_si_sdr: MetricReport,
    pub estoi_noisy: MetricReport,
    pub estoi: MetricReport,
    pub delta_estoi: MetricReport,
}

impl EvalSummary {
    pub fn from_scores(method: Method, label: &str, split: &str, draws: usize, scores: &[SceneScores]) -> Self {
        let col = |f: &dyn Fn(&SceneScores) -> f64| MetricReport::from_values(scores.iter().map(f).collect());
        Self {
            method,
            label: label.to_string(),
            split: split.to_string(),
            n: scores.len(),
            draws,
            si_sdr_noisy: col(&|s| s.si_sdr_noisy),
            si_sdr: col(&|s| s.si_sdr),
            delta_si_sdr: col(&|s| s.delta_si_sdr()),
            estoi_noisy: col(&|s| s.estoi_noisy),
            estoi: col(&|s| s.estoi),
            delta_estoi: col(&|s| s.delta_estoi()),
        }
    }
}

/// Scores the first `count` scenes of `split`, averaging over the enhancer's draws.
pub fn score_scenes(enh: &Enhancer, ds: &Dataset, split: &str, count: usize) -> Result<Vec<SceneScores>> {
    let fs_rate = ds.manifest.sample_rate;
    let mut out = Vec::with_capacity(count);
    for (i, e) in ds.entries(split)?.iter().take(count).enumerate() {
        let scene = ds.load_scene(split, i)?;
        let reference = scene.target_ref.channel_vec(0);
        let noisy = scene.mixture.channel_vec(0);
        let (mut sdr, mut st, mut dist) = (0.0, 0.0, None::<f64>);
        for d in 0..enh.draws {
            let (s, report) = enh.enhance(&scene, d as u64)?;
            sdr += si_sdr(&s, &reference)?;
            st += estoi(&s, &reference, fs_rate)?;
            if let Some(r) = report {
                dist = Some(dist.unwrap_or(0.0).max(r.max_distortion));
            }
        }
        let k = enh.draws as f64;
        let scores = SceneScores {
            id: e.id.clone(),
            si_sdr_noisy: si_sdr(&noisy, &reference)?,
            si_sdr: sdr / k,
            estoi_noisy: estoi(&noisy, &reference, fs_rate)?,
            estoi: st / k,
            max_distortion: dist,
        };
        log::info!("{}: ΔSI-SDR {:+.2} dB, ESTOI {:.3}", e.id, scores.delta_si_sdr(), scores.estoi);
        out.push(scores);
    }
    Ok(out)
}

pub const SCORES_HEADER: &str =
    "id,si_sdr_noisy,si_sdr,delta_si_sdr,estoi_noisy,estoi,delta_estoi,max_distortion";

pub fn write_scores(path: &Path, scores: &[SceneScores]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{SCORES_HEADER}")?;
    for s in scores {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            s.id,
            csv_float(s.si_sdr_noisy),
            csv_float(s.si_sdr),
            csv_float(s.delta_si_sdr()),
            csv_float(s.estoi_noisy),
            csv_float(s.estoi),
            csv_float(s.delta_estoi()),
            s.max_distortion.map(csv_float).unwrap_or_default()
        )?;
    }
    Ok(())
}

fn method_label(enh: &Enhancer) -> String {
    match (&enh.network, enh.method) {
        (Some(n), Method::Checkpoint) => n.spec.label(),
        (Some(n), Method::NsfPf) => format!("{}+PF", n.spec.label()),
        _ => enh.method.to_string(),
    }
}

/// `evaluate`: per-scene `scores.csv` and `summary.json` for `cfg.method`.
pub fn cmd_evaluate(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest> {
    let ds = Dataset::open(cfg.dataset_dir()?)?;
    let mut rec = RunRecorder::start("evaluate", out)?;
    for f in ds.files(&cfg.split)? {
        rec.input(&f)?;
    }
    let enh = build_enhancer(cfg, &ds, out, &mut rec)?;
    let scores = score_scenes(&enh, &ds, &cfg.split, scene_count(cfg, &ds)?)?;
    write_scores(&out.join("scores.csv"), &scores)?;
    let summary = EvalSummary::from_scores(cfg.method, &method_label(&enh), &cfg.split, enh.draws, &scores);
    log::info!(
        "{}: ΔSI-SDR {:.2} ± {:.2} dB, ESTOI {:.3} ± {:.3} over {} scenes",
        summary.label,
        summary.delta_si_sdr.mean,
        summary.delta_si_sdr.ci95,
        summary.estoi.mean,
        summary.estoi.ci95,
        summary.n
    );
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    rec.finish(cfg)
}

pub const ABLATION_HEADER: &str = "variant,n,si_sdr_mean,si_sdr_ci95,delta_si_sdr_mean,delta_si_sdr_ci95,estoi_mean,estoi_ci95,delta_estoi_mean,delta_estoi_ci95";

pub fn ablation_row(s: &EvalSummary) -> String {
    [
        s.si_sdr.mean,
        s.si_sdr.ci95,
        s.delta_si_sdr.mean,
        s.delta_si_sdr.ci95,
        s.estoi.mean,
        s.estoi.ci95,
        s.delta_estoi.mean,
        s.delta_estoi.ci95,
    ]
    .iter()
    .fold(format!("{},{}", s.label, s.n), |acc, v| acc + "," + &csv_float(*v))
}

/// `ablation`: evaluates every configured checkpoint on the same scenes.
pub fn cmd_ablation(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest> {
    if cfg.ablation.is_empty() {
        return Err(Error::InvalidArgument("no ablation variants configured".into()));
    }
    if let Some(missing) = cfg.ablation.iter().find(|e| !e.checkpoint.exists()) {
        return Err(Error::InvalidArgument(format!(
            "checkpoint for {:?} not found: {}",
            missing.label,
            missing.checkpoint.display()
        )));
    }
    let ds = Dataset::open(cfg.dataset_dir()?)?;
    let mut rec = RunRecorder::start("ablation", out)?;
    for f in ds.files(&cfg.split)? {
        rec.input(&f)?;
    }
    let count = scene_count(cfg, &ds)?;
    let mut table = vec![ABLATION_HEADER.to_string()];
    let mut summaries = Vec::new();
    for entry in &cfg.ablation {
        rec.input(&entry.checkpoint)?;
        let mut c = cfg.clone();
        c.checkpoint = Some(entry.checkpoint.clone());
        let enh = Enhancer::new(&c, Method::Checkpoint, ds.manifest.channels)?;
        let label = if entry.label.is_empty() { method_label(&enh) } else { entry.label.clone() };
        let scores = score_scenes(&enh, &ds, &cfg.split, count)?;
        let file = label.replace(|ch: char| !ch.is_ascii_alphanumeric() && ch != '-', "_");
        write_scores(&out.join(format!("scores_{file}.csv")), &scores)?;
        let s = EvalSummary::from_scores(Method::Checkpoint, &label, &cfg.split, enh.draws, &scores);
        table.push(ablation_row(&s));
        summaries.push(s);
    }
    fs::write(out.join("ablation.csv"), table.join("\n") + "\n")?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summaries)?)?;
    rec.finish(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::cmd_simulate;
    use crate::harness::dataset::tests::tiny_config;
    use crate::harness::AblationEntry;

    fn tiny_training(cfg: &mut HarnessConfig) {
        cfg.window_len = 64;
        cfg.net.hidden = Some((4, 3));
        cfg.train.max_epochs = 1;
        cfg.train.batch_size = 2;
    }

    #[test]
    fn oracle_cirm_beats_noisy() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        let data = dir.path().join("data");
        cmd_simulate(&cfg, &data).unwrap();
        cfg.dataset = Some(data);
        cfg.method = Method::OracleCirm;
        let out = dir.path().join("eval");
        cmd_evaluate(&cfg, &out).unwrap();
        let s: EvalSummary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(s.n, 1);
        assert!(s.delta_si_sdr.mean > 10.0, "{}", s.delta_si_sdr.mean);
        let csv = fs::read_to_string(out.join("scores.csv")).unwrap();
        assert!(csv.starts_with(SCORES_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn train_then_ablate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        tiny_training(&mut cfg);
        let data = dir.path().join("data");
        cmd_simulate(&cfg, &data).unwrap();
        cfg.dataset = Some(data);
        let mut entries = Vec::new();
        for (mode, nsf) in [(Mode::T, true), (Mode::PF, false)] {
            cfg.net.mode = mode;
            cfg.net.nsf = nsf;
            let out = dir.path().join(format!("train_{mode}"));
            cmd_train(&cfg, &out).unwrap();
            assert!(out.join("checkpoint.bin").exists());
            let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
            assert_eq!(log.lines().count(), 2);
            if mode != Mode::PF {
                entries.push(AblationEntry {
                    label: String::new(),
                    checkpoint: out.join("checkpoint.bin"),
                });
            }
        }
        cfg.ablation = entries;
        cfg.inference_draws = 2;
        let out = dir.path().join("ablation");
        cmd_ablation(&cfg, &out).unwrap();
        let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(rows[0], ABLATION_HEADER);
        assert!(rows[1].starts_with("T-NSF,1,"), "{}", rows[1]);
        let s: Vec<EvalSummary> = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(s[0].draws, 2);

        cfg.ablation.push(AblationEntry {
            label: "missing".into(),
            checkpoint: dir.path().join("nope.bin"),
        });
        assert!(cmd_ablation(&cfg, &dir.path().join("ablation2")).is_err());
    }
}
