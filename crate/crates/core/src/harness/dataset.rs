//! Simulated datasets on disk: `dataset.json` plus four WAVs per scene.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, HarnessConfig, RunManifest, RunRecorder};
use crate::audio::MultiWave;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::roomsim::{render_scene, sample_scenario, Scenario, ScenarioConfig, Scene};
use crate::training::{SceneSource, TrainingScene};

pub const DATASET_FILE: &str = "dataset.json";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];
const SCENARIO_STREAM: u64 = 100;
const SELECTION_STREAM: u64 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub scenario: Scenario,
    pub target_utterance: String,
    pub interferer_utterances: Vec<String>,
    /// Absent when the interference is silent.
    pub snr_db: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub sample_rate: u32,
    pub channels: usize,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    /// `"synthetic"` or the corpus directory as configured.
    pub corpus: String,
    pub utterances: BTreeMap<String, Vec<String>>,
    pub splits: BTreeMap<String, Vec<SceneEntry>>,
}

/// Utterance file names per split, disjoint.
pub fn partition_utterances(corpus: &Corpus, cfg: &HarnessConfig) -> Result<BTreeMap<String, Vec<String>>> {
    let names: Vec<String> = corpus
        .files
        .iter()
        .map(|p| p.file_name().expect("corpus file").to_string_lossy().to_string())
        .collect();
    let mut out = BTreeMap::new();
    if let Some(lists) = &cfg.corpus.lists {
        let known: BTreeSet<&String> = names.iter().collect();
        let mut seen = BTreeSet::new();
        for (split, list) in SPLITS.iter().zip([&lists.train, &lists.val, &lists.test]) {
            for n in list {
                if !known.contains(n) {
                    return Err(Error::Dataset(format!("{split} list names unknown file {n:?}")));
                }
                if !seen.insert(n.clone()) {
                    return Err(Error::Dataset(format!("utterance {n:?} appears in more than one split")));
                }
            }
            out.insert(split.to_string(), list.clone());
        }
        return Ok(out);
    }
    let n = names.len();
    let n_train = (cfg.corpus.train_fraction * n as f64).round() as usize;
    let n_val = (cfg.corpus.val_fraction * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Dataset(format!("cannot split {n} utterances into three non-empty parts")));
    }
    out.insert("train".into(), names[..n_train].to_vec());
    out.insert("val".into(), names[n_train..n_train + n_val].to_vec());
    out.insert("test".into(), names[n_train + n_val..].to_vec());
    Ok(out)
}

/// Target and interferer utterances for one scene from `pool`.
fn select_utterances(pool: &[String], interferers: usize, rng: &mut impl Rng) -> (String, Vec<String>) {
    let t = rng.gen_range(0..pool.len());
    let mut others: Vec<&String> = pool.iter().enumerate().filter(|(i, _)| *i != t).map(|(_, n)| n).collect();
    if others.is_empty() {
        others.push(&pool[t]);
    }
    others.shuffle(rng);
    let chosen = others.iter().cycle().take(interferers).map(|s| s.to_string()).collect();
    (pool[t].clone(), chosen)
}

fn load_named(corpus_dir: &Path, name: &str, sample_rate: u32) -> Result<MultiWave> {
    let w = MultiWave::read_wav(corpus_dir.join(name))?.select_channel(0);
    if w.sample_rate != sample_rate {
        return Err(Error::SampleRate {
            expected: sample_rate,
            got: w.sample_rate,
        });
    }
    Ok(w)
}

fn scene_path(root: &Path, split: &str, id: &str, part: &str) -> PathBuf {
    root.join(split).join(format!("{id}_{part}.wav"))
}

/// Renders and writes one dataset with `channels` microphones into `out`.
pub fn simulate_dataset(
    cfg: &HarnessConfig,
    channels: usize,
    corpus_dir: &Path,
    corpus_label: &str,
    out: &Path,
) -> Result<DatasetManifest> {
    let corpus = Corpus::open(corpus_dir)?;
    let utterances = partition_utterances(&corpus, cfg)?;
    let scenario_cfg = ScenarioConfig {
        channels,
        ..cfg.scenario.clone()
    };
    let sizes = [cfg.splits.train, cfg.splits.val, cfg.splits.test];
    let mut splits = BTreeMap::new();
    for (si, (split, count)) in SPLITS.iter().zip(sizes).enumerate() {
        let pool = &utterances[*split];
        if pool.is_empty() && count > 0 {
            return Err(Error::Dataset(format!("no utterances for the {split} split")));
        }
        fs::create_dir_all(out.join(split))?;
        let mut entries = Vec::with_capacity(count);
        for j in 0..count {
            let scenario = sample_scenario(derive_seed(cfg.seed, SCENARIO_STREAM + si as u64, j as u64), &scenario_cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SELECTION_STREAM + si as u64, j as u64));
            let (target_name, interferer_names) = select_utterances(pool, scenario.interferers.len(), &mut rng);
            let target = load_named(corpus_dir, &target_name, cfg.sample_rate)?;
            let interferers = interferer_names
                .iter()
                .map(|n| load_named(corpus_dir, n, cfg.sample_rate))
                .collect::<Result<Vec<_>>>()?;
            let scene = render_scene(&scenario, &target, &interferers)?;
            let id = format!("{split}_{j:05}");
            scene.mixture.write_wav(scene_path(out, split, &id, "mixture"))?;
            scene.target_ref.write_wav(scene_path(out, split, &id, "target"))?;
            scene.noise_ref.write_wav(scene_path(out, split, &id, "noise"))?;
            scene.target_reverb.write_wav(scene_path(out, split, &id, "reverb"))?;
            log::debug!("{id}: snr {:.2} dB", scene.snr_db);
            entries.push(SceneEntry {
                id,
                scenario,
                target_utterance: target_name,
                interferer_utterances: interferer_names,
                snr_db: scene.snr_db.is_finite().then_some(scene.snr_db),
                samples: scene.mixture.len(),
            });
        }
        log::info!("simulated {count} {split} scenes with {channels} microphones");
        splits.insert(split.to_string(), entries);
    }
    let manifest = DatasetManifest {
        format_version: 1,
        sample_rate: cfg.sample_rate,
        channels,
        seed: cfg.seed,
        scenario: scenario_cfg,
        corpus: corpus_label.to_string(),
        utterances,
        splits,
    };
    fs::write(out.join(DATASET_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// `simulate`: writes the corpus (if synthetic) and one dataset per microphone count.
pub fn cmd_simulate(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest> {
    let mut rec = RunRecorder::start("simulate", out)?;
    let (corpus_dir, label) = match &cfg.corpus.path {
        Some(p) => {
            for f in Corpus::open(p)?.files {
                rec.input(&f)?;
            }
            (p.clone(), p.to_string_lossy().to_string())
        }
        None => {
            let synth = crate::corpus::SyntheticCorpus {
                sample_rate: cfg.sample_rate,
                ..cfg.corpus.synthetic.clone()
            };
            let dir = out.join("corpus");
            synth.write(&dir)?;
            (dir, "synthetic".to_string())
        }
    };
    if cfg.mic_counts.is_empty() {
        return Err(Error::InvalidArgument("mic_counts is empty".into()));
    }
    if let [c] = cfg.mic_counts[..] {
        simulate_dataset(cfg, c, &corpus_dir, &label, out)?;
    } else {
        for &c in &cfg.mic_counts {
            simulate_dataset(cfg, c, &corpus_dir, &label, &out.join(format!("c{c}")))?;
        }
    }
    rec.finish(cfg)
}

/// A dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let text = fs::read_to_string(root.join(DATASET_FILE))
            .map_err(|e| Error::Dataset(format!("{}: {e}", root.join(DATASET_FILE).display())))?;
        Ok(Self {
            manifest: serde_json::from_str(&text)?,
            root,
        })
    }

    pub fn entries(&self, split: &str) -> Result<&[SceneEntry]> {
        self.manifest
            .splits
            .get(split)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Dataset(format!("no split named {split:?}")))
    }

    pub fn path(&self, split: &str, id: &str, part: &str) -> PathBuf {
        scene_path(&self.root, split, id, part)
    }

    /// Scene `index` of `split` with every stored signal.
    pub fn load_scene(&self, split: &str, index: usize) -> Result<Scene> {
        let e = self
            .entries(split)?
            .get(index)
            .ok_or_else(|| Error::Dataset(format!("{split} scene {index} out of range")))?;
        let read = |part: &str| MultiWave::read_wav(self.path(split, &e.id, part));
        Ok(Scene {
            mixture: read("mixture")?,
            target_reverb: read("reverb")?,
            target_ref: read("target")?,
            noise_ref: read("noise")?,
            snr_db: e.snr_db.unwrap_or(f64::INFINITY),
        })
    }

    pub fn source(&self, split: &str) -> Result<DiskSource> {
        Ok(DiskSource {
            dataset: self.clone(),
            split: split.to_string(),
            len: self.entries(split)?.len(),
            mixture_dir: None,
        })
    }

    /// Every file the split depends on, for run manifests.
    pub fn files(&self, split: &str) -> Result<Vec<PathBuf>> {
        let mut out = vec![self.root.join(DATASET_FILE)];
        for e in self.entries(split)? {
            for part in ["mixture", "target", "noise", "reverb"] {
                out.push(self.path(split, &e.id, part));
            }
        }
        Ok(out)
    }
}

/// Training scenes read lazily from a dataset split.
#[derive(Debug, Clone)]
pub struct DiskSource {
    dataset: Dataset,
    split: String,
    len: usize,
    /// Replaces the mixtures with `<dir>/<id>.wav`, e.g. first-stage outputs.
    /// The noise target then becomes the replacement minus the target.
    mixture_dir: Option<PathBuf>,
}

impl DiskSource {
    pub fn with_mixtures(mut self, dir: impl AsRef<Path>) -> Self {
        self.mixture_dir = Some(dir.as_ref().to_path_buf());
        self
    }

    pub fn limit(mut self, n: usize) -> Self {
        self.len = self.len.min(n);
        self
    }
}

impl SceneSource for DiskSource {
    fn len(&self) -> usize {
        self.len
    }

    fn load(&self, index: usize) -> Result<TrainingScene> {
        if index >= self.len {
            return Err(Error::InvalidArgument(format!("scene {index} out of range")));
        }
        let id = &self.dataset.entries(&self.split)?[index].id;
        let target = MultiWave::read_wav(self.dataset.path(&self.split, id, "target"))?.channel_vec(0);
        match &self.mixture_dir {
            Some(d) => {
                let mixture = MultiWave::read_wav(d.join(format!("{id}.wav")))?;
                let noise = mixture.channel(0).iter().zip(&target).map(|(y, s)| y - s).collect();
                TrainingScene::new(mixture, target, noise)
            }
            None => {
                let mixture = MultiWave::read_wav(self.dataset.path(&self.split, id, "mixture"))?;
                let noise = MultiWave::read_wav(self.dataset.path(&self.split, id, "noise"))?.channel_vec(0);
                TrainingScene::new(mixture, target, noise)
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::harness::{SplitLists, SplitSizes};

    /// Small, fast dataset config: 12 short utterances and 2/1/1 scenes.
    pub(crate) fn tiny_config() -> HarnessConfig {
        let mut cfg = HarnessConfig::default();
        cfg.corpus.synthetic.utterances = 12;
        cfg.corpus.synthetic.min_seconds = 3.1;
        cfg.corpus.synthetic.max_seconds = 3.3;
        cfg.corpus.train_fraction = 0.5;
        cfg.corpus.val_fraction = 0.25;
        cfg.splits = SplitSizes { train: 2, val: 1, test: 1 };
        cfg.scenario.width = (2.5, 3.0);
        cfg.scenario.length = (3.0, 3.5);
        cfg.scenario.t60 = (0.2, 0.25);
        cfg
    }

    #[test]
    fn simulate_writes_consistent_scenes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let run = cmd_simulate(&cfg, dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.entries("train").unwrap().len(), 2);
        let u = &ds.manifest.utterances;
        let train: BTreeSet<_> = u["train"].iter().collect();
        assert!(u["test"].iter().chain(&u["val"]).all(|n| !train.contains(n)));
        for e in ds.entries("train").unwrap() {
            assert!(u["train"].contains(&e.target_utterance));
            assert!(e.interferer_utterances.iter().all(|n| u["train"].contains(n)));
        }
        let s = ds.load_scene("test", 0).unwrap();
        assert_eq!(s.mixture.channels(), 3);
        assert_eq!(s.target_ref.channels(), 1);
        let diff = (&s.mixture.data - &s.target_reverb.data - &s.noise_ref.data)
            .iter()
            .fold(0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-5, "{diff}");
        let src = ds.source("val").unwrap();
        assert_eq!(src.len(), 1);
        assert_eq!(src.load(0).unwrap().len(), s_len(&ds, "val"));
        assert!(run.outputs.iter().any(|r| r.path == DATASET_FILE));
    }

    fn s_len(ds: &Dataset, split: &str) -> usize {
        ds.entries(split).unwrap()[0].samples
    }

    #[test]
    fn overlapping_lists_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        let corpus = cfg.corpus.synthetic.write(dir.path()).unwrap();
        let name = |i: usize| format!("utt_{i:05}.wav");
        cfg.corpus.lists = Some(SplitLists {
            train: vec![name(0), name(1)],
            val: vec![name(2)],
            test: vec![name(1)],
        });
        assert!(partition_utterances(&corpus, &cfg).is_err());
        cfg.corpus.lists.as_mut().unwrap().test = vec![name(3)];
        let p = partition_utterances(&corpus, &cfg).unwrap();
        assert_eq!(p["test"], vec![name(3)]);
    }

    #[test]
    fn selection_excludes_the_target() {
        let pool: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (t, i) = select_utterances(&pool, 5, &mut rng);
            assert!(!i.contains(&t));
            assert_eq!(i.iter().collect::<BTreeSet<_>>().len(), 5);
        }
    }
}
