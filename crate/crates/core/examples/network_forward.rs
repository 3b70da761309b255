//! Mask estimation with each network arrangement, with and without sequence shuffling.

use jnf::audio::MultiWave;
use jnf::net::{forward, Mode, NetParams, NetSpec};
use jnf::stft::{FrameParams, Stft};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> jnf::Result<()> {
    let params = FrameParams::new(512, 16_000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let wave = MultiWave::new(
        16_000,
        ndarray::Array2::from_shape_fn((3, 8_000), |(c, n)| ((n * (c + 2)) as f64 * 0.013).sin()),
    );
    let y = Stft::new(params).analyze(&wave)?;

    for (mode, nsf) in [(Mode::T, false), (Mode::F, false), (Mode::FT, false), (Mode::FT, true)] {
        let spec = NetSpec::new(mode, nsf, 3, params.bins());
        let net = NetParams::init(&spec, &mut rng);
        let mask = forward(&y, &spec, &net, &mut rng)?;
        let peak = mask.data.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
        println!(
            "{:<7} {:>7} parameters, mask {:?}, max |component| {peak:.3}",
            spec.label(),
            net.count(),
            mask.dim()
        );
    }

    let pf = NetSpec::new(Mode::PF, false, 1, params.bins());
    let net = NetParams::init(&pf, &mut rng);
    let mask = forward(&y.channel(0), &pf, &net, &mut rng)?;
    println!("{:<7} {:>7} parameters, mask {:?}", pf.label(), net.count(), mask.dim());
    Ok(())
}
