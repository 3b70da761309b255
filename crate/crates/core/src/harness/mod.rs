//! Command orchestration: configs and presets, run manifests, dataset
//! generation, training, enhancement, evaluation and the selectivity probes.

pub mod dataset;
pub mod enhance;
pub mod evaluate;
pub mod plot;
pub mod probes;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use dataset::{cmd_simulate, Dataset, DatasetManifest, SceneEntry};
pub use enhance::{cmd_enhance, Enhancer, IdentityMask, MaskSource, NetworkMask, ZeroMask};
pub use evaluate::{cmd_ablation, cmd_evaluate, cmd_train};
pub use probes::{cmd_noise_pattern, cmd_sweep_angle};

use crate::corpus::SyntheticCorpus;
use crate::error::{Error, Result};
use crate::linear_spatial::DEFAULT_LAMBDA;
use crate::net::{Mode, NetSpec, DESK_HIDDEN, DESK_PF_HIDDEN, PAPER_HIDDEN, PAPER_PF_HIDDEN};
use crate::roomsim::ScenarioConfig;
use crate::stft::FrameParams;
use crate::training::TrainConfig;

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::InvalidArgument(format!("unknown preset {s:?}"))),
        }
    }
}

/// Processing scheme applied by `enhance` and `evaluate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Unprocessed reference channel.
    #[serde(rename = "noisy")]
    Noisy,
    /// Mask network loaded from `checkpoint`.
    #[serde(rename = "checkpoint")]
    Checkpoint,
    #[serde(rename = "oracle-mvdr")]
    OracleMvdr,
    #[serde(rename = "oracle-cirm")]
    OracleCirm,
    /// Oracle MVDR followed by a post-filter network.
    #[serde(rename = "mvdr+pf")]
    MvdrPf,
    /// NSF network from `checkpoint` followed by a post-filter network.
    #[serde(rename = "nsf+pf")]
    NsfPf,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Noisy,
        Method::Checkpoint,
        Method::OracleMvdr,
        Method::OracleCirm,
        Method::MvdrPf,
        Method::NsfPf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Noisy => "noisy",
            Method::Checkpoint => "checkpoint",
            Method::OracleMvdr => "oracle-mvdr",
            Method::OracleCirm => "oracle-cirm",
            Method::MvdrPf => "mvdr+pf",
            Method::NsfPf => "nsf+pf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Explicit utterance file names per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Directory of dry mono WAVs; a synthetic corpus is generated when absent.
    pub path: Option<PathBuf>,
    pub synthetic: SyntheticCorpus,
    /// Fractions of the utterances assigned to train and validation; the rest is test.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub lists: Option<SplitLists>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: SyntheticCorpus::default(),
            train_fraction: 0.7,
            val_fraction: 0.15,
            lists: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub mode: Mode,
    pub nsf: bool,
    /// Preset sizes are used when absent.
    pub hidden: Option<(usize, usize)>,
    pub bidirectional: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            mode: Mode::FT,
            nsf: false,
            hidden: None,
            bidirectional: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub label: String,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub start_deg: f64,
    pub stop_deg: f64,
    pub step_deg: f64,
    pub distance_m: f64,
    pub utterances: usize,
    /// Probe signals are cut to at most this length.
    pub max_seconds: f64,
    /// Energy retention below this marks an angle as suppressed.
    pub suppressed_below: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start_deg: -180.0,
            stop_deg: 180.0,
            step_deg: 1.0,
            distance_m: 1.0,
            utterances: 15,
            max_seconds: 2.0,
            suppressed_below: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternConfig {
    pub start_deg: f64,
    pub stop_deg: f64,
    pub step_deg: f64,
    pub distance_m: f64,
    pub draws: usize,
    pub seconds: f64,
    /// Half-width of the sector counted as in-sector for the summary margin.
    pub sector_deg: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            start_deg: -180.0,
            stop_deg: 180.0,
            step_deg: 1.0,
            distance_m: 1.0,
            draws: 8,
            seconds: 1.0,
            sector_deg: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub preset: Preset,
    pub seed: u64,
    pub sample_rate: u32,
    pub window_len: usize,
    pub scenario: ScenarioConfig,
    /// Microphone counts to simulate; more than one writes one dataset per count.
    pub mic_counts: Vec<usize>,
    pub splits: SplitSizes,
    pub corpus: CorpusConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Pre-trained post-filter for two-stage methods; trained on demand when absent.
    pub pf_checkpoint: Option<PathBuf>,
    pub method: Method,
    pub split: String,
    pub max_scenes: Option<usize>,
    pub lambda: f64,
    /// NSF permutation draws averaged per scene in evaluation.
    pub inference_draws: usize,
    pub ablation: Vec<AblationEntry>,
    pub sweep: SweepConfig,
    pub pattern: PatternConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl HarnessConfig {
    pub fn preset(preset: Preset) -> Self {
        let (splits, train, utterances) = match preset {
            Preset::Desk => (
                SplitSizes {
                    train: 300,
                    val: 50,
                    test: 50,
                },
                TrainConfig::desk(),
                120,
            ),
            Preset::Paper => (
                SplitSizes {
                    train: 6000,
                    val: 1000,
                    test: 600,
                },
                TrainConfig::paper(),
                1200,
            ),
        };
        Self {
            preset,
            seed: 0,
            sample_rate: 16_000,
            window_len: 512,
            scenario: ScenarioConfig::default(),
            mic_counts: vec![3],
            splits,
            corpus: CorpusConfig {
                synthetic: SyntheticCorpus {
                    utterances,
                    ..SyntheticCorpus::default()
                },
                ..CorpusConfig::default()
            },
            net: NetConfig::default(),
            train,
            dataset: None,
            checkpoint: None,
            pf_checkpoint: None,
            method: Method::Checkpoint,
            split: "test".into(),
            max_scenes: None,
            lambda: DEFAULT_LAMBDA,
            inference_draws: 4,
            ablation: Vec::new(),
            sweep: SweepConfig::default(),
            pattern: PatternConfig::default(),
        }
    }

    pub fn frame_params(&self) -> FrameParams {
        FrameParams::new(self.window_len, self.sample_rate)
    }

    /// Network spec for `channels` microphones using this config's mode and sizes.
    pub fn net_spec(&self, mode: Mode, nsf: bool, channels: usize) -> NetSpec {
        let bins = self.frame_params().bins();
        let hidden = self.net.hidden.unwrap_or(match (self.preset, mode == Mode::PF) {
            (Preset::Desk, false) => DESK_HIDDEN,
            (Preset::Desk, true) => DESK_PF_HIDDEN,
            (Preset::Paper, false) => PAPER_HIDDEN,
            (Preset::Paper, true) => PAPER_PF_HIDDEN,
        });
        let mut spec = NetSpec::new(mode, nsf, channels, bins).with_hidden(hidden);
        spec.bidirectional = self.net.bidirectional;
        spec
    }

    pub fn dataset_dir(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("no dataset directory configured".into()))
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("no checkpoint configured".into()))
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Command-line overrides applied after the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
}

/// Resolves the effective config: preset defaults, then the JSON file (a plain
/// config or a run manifest), then the overrides.
pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> Result<HarnessConfig> {
    let file: Option<Value> = match path {
        Some(p) => {
            let v: Value = serde_json::from_str(&fs::read_to_string(p)?)?;
            Some(match v.get("config") {
                Some(c) if v.get("command").is_some() => c.clone(),
                _ => v,
            })
        }
        None => None,
    };
    let file_preset = file
        .as_ref()
        .and_then(|v| v.get("preset"))
        .map(|p| serde_json::from_value::<Preset>(p.clone()))
        .transpose()?;
    let preset = overrides.preset.or(file_preset).unwrap_or(Preset::Desk);
    let mut value = serde_json::to_value(HarnessConfig::preset(preset))?;
    if let Some(f) = &file {
        merge_json(&mut value, f);
    }
    let mut cfg: HarnessConfig = serde_json::from_value(value)?;
    cfg.preset = preset;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the run directory, or as given for inputs.
    pub path: String,
    pub sha256: String,
    /// Contains wall-clock data and is excluded from reproducibility checks.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub volatile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: HarnessConfig,
    pub seed: u64,
    pub train_seed: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Output records that must reproduce byte for byte.
    pub fn stable_outputs(&self) -> Vec<&FileRecord> {
        self.outputs.iter().filter(|r| !r.volatile).collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Files produced by a command with wall-clock content.
const VOLATILE_FILES: [&str; 1] = ["train_log.csv"];

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<FileRecord>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("inside root").to_string_lossy().replace('\\', "/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let name = p.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
            out.push(FileRecord {
                sha256: sha256_file(&p)?,
                volatile: VOLATILE_FILES.contains(&name.as_str()),
                path: rel,
            });
        }
    }
    Ok(())
}

/// Deterministic sub-seed for stream `tag` and item `index`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over the packed inputs.
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Tracks inputs of a run and writes its manifest once the outputs exist.
pub struct RunRecorder {
    command: String,
    out: PathBuf,
    start: Instant,
    inputs: Vec<FileRecord>,
}

impl RunRecorder {
    pub fn start(command: &str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Self {
            command: command.to_string(),
            out: out.to_path_buf(),
            start: Instant::now(),
            inputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord {
            path: path.to_string_lossy().to_string(),
            sha256: sha256_file(path)?,
            volatile: false,
        });
        Ok(())
    }

    pub fn finish(self, config: &HarnessConfig) -> Result<RunManifest> {
        let mut outputs = Vec::new();
        collect_files(&self.out, &self.out, &mut outputs)?;
        let manifest = RunManifest {
            command: self.command,
            config: config.clone(),
            seed: config.seed,
            train_seed: config.train.seed,
            inputs: self.inputs,
            outputs,
            wall_seconds: self.start.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        fs::write(self.out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

/// Formats a float for CSV, writing non-finite values as `inf`, `-inf` or `nan`.
pub fn csv_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn presets() {
        let d = HarnessConfig::preset(Preset::Desk);
        assert_eq!((d.splits.train, d.splits.val, d.splits.test), (300, 50, 50));
        assert_eq!(d.net_spec(Mode::FT, false, 3).hidden, (64, 32));
        let p = HarnessConfig::preset(Preset::Paper);
        assert_eq!((p.splits.train, p.splits.val, p.splits.test), (6000, 1000, 600));
        assert_eq!(p.net_spec(Mode::FT, false, 3).hidden, (256, 128));
        assert_eq!(p.net_spec(Mode::PF, false, 1).hidden, (256, 256));
        assert_eq!(p.train.max_epochs, 250);
    }

    #[test]
    fn merge_is_recursive() {
        let mut a = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge_json(&mut a, &json!({"b": {"d": 4}, "e": 5}));
        assert_eq!(a, json!({"a": 1, "b": {"c": 2, "d": 4}, "e": 5}));
    }

    #[test]
    fn config_resolution_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"preset": "paper", "splits": {"train": 7, "val": 1, "test": 1}, "train": {"max_epochs": 3}}"#).unwrap();
        let cfg = resolve_config(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(cfg.preset, Preset::Paper);
        assert_eq!(cfg.splits.train, 7);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.batch_size, 6);
        let o = Overrides {
            preset: Some(Preset::Desk),
            seed: Some(9),
        };
        let cfg = resolve_config(Some(&p), &o).unwrap();
        assert_eq!(cfg.preset, Preset::Desk);
        assert_eq!((cfg.seed, cfg.train.seed), (9, 9));
        assert_eq!(cfg.net_spec(Mode::T, false, 3).hidden, (64, 32));
    }

    #[test]
    fn manifest_is_accepted_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = HarnessConfig::default();
        cfg.seed = 42;
        cfg.method = Method::MvdrPf;
        let rec = RunRecorder::start("evaluate", dir.path()).unwrap();
        fs::write(dir.path().join("x.csv"), "a\n").unwrap();
        let m = rec.finish(&cfg).unwrap();
        assert_eq!(m.outputs.len(), 1);
        let back = resolve_config(Some(&dir.path().join(MANIFEST_FILE)), &Overrides::default()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), json!(m.name()));
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1, 0), derive_seed(0, 1, 1));
        assert_ne!(derive_seed(0, 1, 0), derive_seed(0, 2, 0));
        assert_eq!(derive_seed(5, 1, 3), derive_seed(5, 1, 3));
    }
}
