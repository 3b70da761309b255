//! Angle sweep and white-noise pattern of a mask source.
//!
//! Pass a checkpoint path to probe a trained network; without one an identity
//! mask is probed, which keeps every direction.

use jnf::audio::MultiWave;
use jnf::corpus::SyntheticCorpus;
use jnf::harness::probes::{noise_pattern, retention_contrast, sweep_angle};
use jnf::harness::{IdentityMask, MaskSource, NetworkMask};
use jnf::roomsim::{angle_grid, probe_array};
use jnf::stft::{FrameParams, Stft};

fn main() -> jnf::Result<()> {
    let network = std::env::args().nth(1).map(|p| NetworkMask::load(p.as_ref(), 0)).transpose()?;
    let (source, params): (Box<dyn MaskSource>, FrameParams) = match network {
        Some(n) => {
            let p = n.frame_params(16_000);
            (Box::new(n), p)
        }
        None => (Box::new(IdentityMask { channels: 3 }), FrameParams::new(512, 16_000)),
    };
    let stft = Stft::new(params);
    let array = probe_array(source.channels(), 0.1);
    let corpus = SyntheticCorpus::default();
    let signals: Vec<MultiWave> = (0..3)
        .map(|i| {
            let w = MultiWave::mono(16_000, corpus.utterance(i));
            w.slice(0, 16_000)
        })
        .collect();

    let grid = angle_grid(-180.0, 180.0, 30.0);
    let points = sweep_angle(source.as_ref(), &stft, &array, &grid, 1.0, &signals, 1e-3)?;
    for p in &points {
        println!("{:>6.0}°  retention {:.4}  SI-SDR {:+6.2} dB", p.angle_deg, p.energy_retention, p.si_sdr);
    }
    println!("0° vs 30–150° retention ratio {:?}", retention_contrast(&points, 30.0, 150.0));

    let pattern = noise_pattern(source.as_ref(), &stft, &array, &grid, 1.0, 4, 16_000, 0)?;
    println!("in-sector minus out-of-sector level {:?} dB", pattern.sector_margin(20.0));
    Ok(())
}
