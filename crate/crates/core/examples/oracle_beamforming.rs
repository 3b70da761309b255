//! Oracle MVDR and oracle complex ratio masking on one simulated scene.

use jnf::audio::MultiWave;
use jnf::corpus::SyntheticCorpus;
use jnf::linear_spatial::{oracle_mvdr, SteeringMethod, DEFAULT_LAMBDA};
use jnf::mask::{apply_mask, ideal_cirm};
use jnf::metrics::{estoi, si_sdr};
use jnf::roomsim::{render_scene, sample_scenario, ScenarioConfig};
use jnf::stft::{FrameParams, Stft};

fn main() -> jnf::Result<()> {
    let scenario = sample_scenario(11, &ScenarioConfig::default())?;
    let corpus = SyntheticCorpus::default();
    let voice = |i| MultiWave::mono(16_000, corpus.utterance(i));
    let interferers: Vec<_> = (1..=5).map(voice).collect();
    let scene = render_scene(&scenario, &voice(0), &interferers)?;

    let stft = Stft::new(FrameParams::new(512, 16_000));
    let y = stft.analyze(&scene.mixture)?;
    let reference = scene.target_ref.channel_vec(0);
    let score = |name: &str, est: &MultiWave| -> jnf::Result<()> {
        let mut e = est.channel_vec(0);
        e.resize(reference.len(), 0.0);
        println!(
            "{name:<12} SI-SDR {:+6.2} dB  ESTOI {:.3}",
            si_sdr(&e, &reference)?,
            estoi(&e, &reference, 16_000)?
        );
        Ok(())
    };
    score("noisy", &scene.mixture)?;

    let s = stft.analyze(&scene.target_reverb)?;
    let v = stft.analyze(&scene.noise_ref)?;
    let (out, report) = oracle_mvdr(&y, &s, &v, DEFAULT_LAMBDA, SteeringMethod::SpeechCovariance)?;
    score("oracle MVDR", &stft.synthesize(&out)?)?;
    println!("max |h^H d - 1| = {:.2e}", report.max_distortion);

    let mask = ideal_cirm(&stft.analyze(&scene.target_ref)?, &y)?;
    score("oracle cIRM", &stft.synthesize(&apply_mask(&mask, &y)?)?)?;
    Ok(())
}
