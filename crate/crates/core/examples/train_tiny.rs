//! Trains a small FT network on a handful of simulated scenes.
//!
//! Uses a short STFT frame and tiny hidden sizes so it finishes in about a minute.

use jnf::audio::MultiWave;
use jnf::corpus::SyntheticCorpus;
use jnf::net::{Mode, NetSpec};
use jnf::roomsim::{render_scene, sample_scenario, ScenarioConfig};
use jnf::training::{passthrough_validation_loss, train, TrainConfig, TrainOutputs, TrainingScene};
use jnf::stft::{FrameParams, Stft};
use std::sync::Arc;

fn main() -> jnf::Result<()> {
    let corpus = SyntheticCorpus::default();
    let voice = |i: usize| MultiWave::mono(16_000, corpus.utterance(i % corpus.utterances));
    let scenes = |seeds: std::ops::Range<u64>| -> jnf::Result<Vec<TrainingScene>> {
        seeds
            .map(|s| {
                let sc = sample_scenario(s, &ScenarioConfig::default())?;
                let i = s as usize * 6;
                let interferers: Vec<_> = (1..=5).map(|j| voice(i + j)).collect();
                Ok(TrainingScene::from(&render_scene(&sc, &voice(i), &interferers)?))
            })
            .collect()
    };
    let (train_set, val_set) = (scenes(0..6)?, scenes(100..102)?);

    let spec = NetSpec::new(Mode::FT, false, 3, 33).with_hidden((16, 8));
    let cfg = TrainConfig {
        max_epochs: 5,
        batch_size: 3,
        ..TrainConfig::desk()
    };
    let stft = Arc::new(Stft::new(FrameParams::new(64, 16_000)));
    println!("passthrough val loss {:.2}", passthrough_validation_loss(&stft, &val_set, &cfg)?);
    let out = train(&spec, &train_set, &val_set, &cfg, &TrainOutputs::default())?;
    for e in &out.history {
        println!("epoch {}: train {:.2}, val {:.2}", e.epoch, e.train_loss, e.val_loss);
    }
    println!("best epoch {} ({:.2})", out.best_epoch, out.best_val_loss);
    Ok(())
}
