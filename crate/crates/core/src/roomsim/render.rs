//! Convolving dry speech with simulated RIRs into multichannel mixtures.

use ndarray::Array2;
use num_complex::Complex64;

use super::rir::{RirGenerator, SPEED_OF_SOUND};
use super::scenario::Scenario;
use crate::audio::{rms, MultiWave};
use crate::dsp::{fractional_delay, Convolver, SINC_HALF};
use crate::error::{Error, Result};

pub const MIN_SCENE_SECONDS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub mixture: MultiWave,
    /// Reverberant target at every microphone.
    pub target_reverb: MultiWave,
    /// Dry target delayed by the direct path to microphone 0, unit gain.
    pub target_ref: MultiWave,
    /// Summed interference at every microphone.
    pub noise_ref: MultiWave,
    /// `+∞` when the interference is silent.
    pub snr_db: f64,
}

/// `x` repeated or truncated to exactly `len` samples.
pub fn fit_length(x: &[f64], len: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; len];
    }
    x.iter().copied().cycle().take(len).collect()
}

fn unit_rms(x: Vec<f64>) -> Vec<f64> {
    let r = rms(&x);
    if r > 0.0 {
        x.into_iter().map(|v| v / r).collect()
    } else {
        x
    }
}

/// Renders the scene; the length follows the target signal.
///
/// Every dry signal is scaled to unit RMS (interferers are looped or cut to the
/// target length first). All RIRs are scaled so the direct path from the target
/// to microphone 0 has unit gain.
pub fn render_scene(scenario: &Scenario, target: &MultiWave, interferers: &[MultiWave]) -> Result<Scene> {
    let fs = target.sample_rate;
    for w in interferers {
        if w.sample_rate != fs {
            return Err(Error::SampleRate {
                expected: fs,
                got: w.sample_rate,
            });
        }
    }
    if interferers.len() != scenario.interferers.len() {
        return Err(Error::InvalidArgument(format!(
            "{} interferer signals for {} positions",
            interferers.len(),
            scenario.interferers.len()
        )));
    }
    let n = target.len();
    let needed = (MIN_SCENE_SECONDS * fs as f64).ceil() as usize;
    if n < needed {
        return Err(Error::TooShort { needed, got: n });
    }

    let mics = scenario.array.mic_positions();
    let c = mics.len();
    let generator = RirGenerator::for_room(scenario.room, fs);
    let scale = scenario.reference_distance();

    let dry_target = unit_rms(target.channel_vec(0));
    let dry_noise: Vec<Vec<f64>> = interferers
        .iter()
        .map(|w| unit_rms(fit_length(&w.channel_vec(0), n)))
        .collect();

    let mut target_rirs = generator.generate_with_lead(scenario.target, &mics, SINC_HALF)?;
    let mut noise_rirs = Vec::with_capacity(interferers.len());
    for p in &scenario.interferers {
        noise_rirs.push(generator.generate_with_lead(*p, &mics, SINC_HALF)?);
    }
    for h in target_rirs.iter_mut().chain(noise_rirs.iter_mut().flatten()) {
        h.iter_mut().for_each(|v| *v *= scale);
    }
    let longest = target_rirs
        .iter()
        .chain(noise_rirs.iter().flatten())
        .map(Vec::len)
        .max()
        .unwrap_or(1);

    let mut conv = Convolver::new(n + longest);
    let target_spec = conv.spectrum(&dry_target);
    let noise_specs: Vec<Vec<Complex64>> = dry_noise.iter().map(|x| conv.spectrum(x)).collect();

    let mut reverb = Array2::zeros((c, n));
    let mut noise = Array2::zeros((c, n));
    for l in 0..c {
        let h = conv.spectrum(&target_rirs[l]);
        let y: Vec<Complex64> = target_spec.iter().zip(&h).map(|(a, b)| a * b).collect();
        for (t, v) in conv.inverse_from(y, SINC_HALF, n).into_iter().enumerate() {
            reverb[(l, t)] = v;
        }
        let mut acc = vec![Complex64::new(0.0, 0.0); conv.size()];
        for (j, xs) in noise_specs.iter().enumerate() {
            let h = conv.spectrum(&noise_rirs[j][l]);
            for ((a, x), hh) in acc.iter_mut().zip(xs).zip(&h) {
                *a += x * hh;
            }
        }
        for (t, v) in conv.inverse_from(acc, SINC_HALF, n).into_iter().enumerate() {
            noise[(l, t)] = v;
        }
    }
    // FFT round-off would otherwise leave tiny residue from silent interferers.
    if dry_noise.iter().all(|x| x.iter().all(|v| *v == 0.0)) {
        noise.fill(0.0);
    }
    let mixture = &reverb + &noise;

    let delay = scale / SPEED_OF_SOUND * fs as f64;
    let target_ref = fractional_delay(&dry_target, delay, 1.0, n);

    let e_target: f64 = reverb.row(0).iter().map(|v| v * v).sum();
    let e_noise: f64 = noise.row(0).iter().map(|v| v * v).sum();
    let snr_db = if e_noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (e_target / e_noise).log10()
    };

    Ok(Scene {
        mixture: MultiWave::new(fs, mixture),
        target_reverb: MultiWave::new(fs, reverb),
        target_ref: MultiWave::mono(fs, target_ref),
        noise_ref: MultiWave::new(fs, noise),
        snr_db,
    })
}
