//! Samples a room, renders a three-microphone mixture and measures the RIR decay.

use jnf::corpus::SyntheticCorpus;
use jnf::audio::MultiWave;
use jnf::roomsim::rir::schroeder_t60;
use jnf::roomsim::{render_scene, sample_scenario, RirGenerator, ScenarioConfig};

fn main() -> jnf::Result<()> {
    let cfg = ScenarioConfig::default();
    let scenario = sample_scenario(7, &cfg)?;
    let room = scenario.room;
    println!(
        "room {:.2} × {:.2} × {:.2} m, T60 {:.2} s, {} interferers",
        room.width,
        room.length,
        room.height,
        room.t60,
        scenario.interferers.len()
    );

    let mics = scenario.array.mic_positions();
    let rirs = RirGenerator::for_room(room, 16_000).generate(scenario.target, &mics)?;
    if let Some(t60) = schroeder_t60(&rirs[0], 16_000) {
        println!("Schroeder T60 at mic 0: {t60:.2} s");
    }

    let corpus = SyntheticCorpus::default();
    let voice = |i| MultiWave::mono(16_000, corpus.utterance(i));
    let target = voice(0);
    let interferers: Vec<_> = (1..=scenario.interferers.len()).map(voice).collect();
    let scene = render_scene(&scenario, &target, &interferers)?;
    println!(
        "{} channels, {:.2} s, SNR {:.2} dB",
        scene.mixture.channels(),
        scene.mixture.duration_secs(),
        scene.snr_db
    );

    let out = std::env::temp_dir().join("jnf_room_example");
    std::fs::create_dir_all(&out)?;
    scene.mixture.write_wav(out.join("mixture.wav"))?;
    scene.target_ref.write_wav(out.join("target.wav"))?;
    println!("wrote {}", out.display());
    Ok(())
}
