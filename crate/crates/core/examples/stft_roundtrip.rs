//! Analysis and weighted overlap-add synthesis with the √Hann frame.

use jnf::audio::MultiWave;
use jnf::stft::{FrameParams, Stft};

fn main() -> jnf::Result<()> {
    let params = FrameParams::new(512, 16_000);
    let stft = Stft::new(params);
    let x: Vec<f64> = (0..16_000)
        .map(|n| (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16_000.0).sin())
        .collect();
    let spec = stft.analyze(&MultiWave::mono(16_000, x.clone()))?;
    println!("{} bins × {} frames", spec.bins(), spec.frames());

    let y = stft.synthesize(&spec)?.channel_vec(0);
    let interior = params.window_len..y.len() - params.window_len;
    let err = interior.map(|n| (x[n] - y[n]).abs()).fold(0.0, f64::max);
    println!("interior reconstruction error {err:.2e}");

    let peak = (0..spec.bins())
        .max_by(|&a, &b| spec.data[(0, a, 10)].norm().total_cmp(&spec.data[(0, b, 10)].norm()))
        .unwrap();
    println!("peak bin {peak} at {:.1} Hz", params.bin_frequency(peak));
    Ok(())
}
