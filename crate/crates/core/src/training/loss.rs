//! Combined time-domain and magnitude loss for speech and noise estimates.

use std::rc::Rc;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::MultiWave;
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::stft::{to_tensor, Stft};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the time-domain terms.
    pub alpha: f64,
    /// Drop the noise terms when no noise target exists.
    pub speech_only: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            speech_only: false,
        }
    }
}

/// Unweighted terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub speech_time: f64,
    pub speech_mag: f64,
    pub noise_time: f64,
    pub noise_mag: f64,
    pub total: f64,
}

impl LossTerms {
    fn combine(st: f64, sm: f64, nt: f64, nm: f64, cfg: &LossConfig) -> Self {
        let (nt, nm) = if cfg.speech_only { (0.0, 0.0) } else { (nt, nm) };
        Self {
            speech_time: st,
            speech_mag: sm,
            noise_time: nt,
            noise_mag: nm,
            total: cfg.alpha * (st + nt) + sm + nm,
        }
    }
}

/// Reference-channel targets: time signals truncated to the synthesis length
/// and STFT magnitudes, flattened `F × T`.
#[derive(Debug, Clone)]
pub struct LossTargets {
    pub speech: Rc<Vec<f64>>,
    pub noise: Rc<Vec<f64>>,
    pub speech_mag: Rc<Vec<f64>>,
    pub noise_mag: Rc<Vec<f64>>,
}

impl LossTargets {
    pub fn new(stft: &Stft, speech: &[f64], noise: &[f64]) -> Result<Self> {
        if speech.len() != noise.len() {
            return Err(Error::Shape(format!("speech {} vs noise {} samples", speech.len(), noise.len())));
        }
        let p = stft.params();
        let n = p.samples_for(p.frames_for(speech.len()));
        let mag = |x: &[f64]| -> Result<Vec<f64>> {
            let s = stft.analyze(&MultiWave::mono(p.sample_rate, x.to_vec()))?;
            Ok(s.reference().iter().map(|z| z.norm()).collect())
        };
        Ok(Self {
            speech: Rc::new(speech[..n].to_vec()),
            noise: Rc::new(noise[..n].to_vec()),
            speech_mag: Rc::new(mag(speech)?),
            noise_mag: Rc::new(mag(noise)?),
        })
    }
}

fn l1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("loss length mismatch {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// `α‖s−ŝ‖₁ + ‖|S|−|Ŝ|‖₁ + α‖v−v̂‖₁ + ‖|V|−|V̂|‖₁` from plain estimates.
pub fn loss(
    speech: &[f64],
    noise: &[f64],
    speech_mag: &[f64],
    noise_mag: &[f64],
    targets: &LossTargets,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    Ok(LossTerms::combine(
        l1(speech, &targets.speech)?,
        l1(speech_mag, &targets.speech_mag)?,
        l1(noise, &targets.noise)?,
        l1(noise_mag, &targets.noise_mag)?,
        cfg,
    ))
}

/// Records the loss for a speech spectrum estimate `Ŝ` (an `(F, T, 2)` node);
/// the noise estimate is `Y − Ŝ`.
pub fn loss_on_tape(
    tape: &mut Tape,
    stft: &Arc<Stft>,
    speech_spec: Var,
    y0: &Array2<Complex64>,
    targets: &LossTargets,
    cfg: &LossConfig,
) -> Result<(Var, LossTerms)> {
    let check = |v: Var, t: &[f64], tape: &Tape| -> Result<()> {
        let n = tape.value(v).numel();
        if n != t.len() {
            return Err(Error::Shape(format!("estimate has {n} values, target {}", t.len())));
        }
        Ok(())
    };
    let s_wave = stft.synthesize_on_tape(tape, speech_spec);
    let s_mag = tape.complex_abs(speech_spec);
    check(s_wave, &targets.speech, tape)?;
    check(s_mag, &targets.speech_mag, tape)?;
    let st = tape.l1_dist(s_wave, Rc::clone(&targets.speech));
    let sm = tape.l1_dist(s_mag, Rc::clone(&targets.speech_mag));
    let mut terms = vec![(st, cfg.alpha), (sm, 1.0)];
    let (mut nt_v, mut nm_v) = (0.0, 0.0);
    if !cfg.speech_only {
        let neg = tape.scale(speech_spec, -1.0);
        let y = tape.constant(to_tensor(y0));
        let v_spec = tape.add(y, neg);
        let v_wave = stft.synthesize_on_tape(tape, v_spec);
        let v_mag = tape.complex_abs(v_spec);
        let nt = tape.l1_dist(v_wave, Rc::clone(&targets.noise));
        let nm = tape.l1_dist(v_mag, Rc::clone(&targets.noise_mag));
        nt_v = tape.value(nt).item();
        nm_v = tape.value(nm).item();
        terms.extend([(nt, cfg.alpha), (nm, 1.0)]);
    }
    let total = tape.weighted_sum(&terms);
    let t = LossTerms::combine(tape.value(st).item(), tape.value(sm).item(), nt_v, nm_v, cfg);
    Ok((total, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::FrameParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Arc<Stft>, Vec<f64>, Vec<f64>) {
        let stft = Arc::new(Stft::new(FrameParams::new(32, 16_000)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (stft, s, v)
    }

    #[test]
    fn exact_estimates_give_zero() {
        let (stft, s, v) = setup(1);
        let t = LossTargets::new(&stft, &s, &v).unwrap();
        let l = loss(&t.speech, &t.noise, &t.speech_mag, &t.noise_mag, &t, &LossConfig::default()).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn time_only_mismatch_is_alpha_scaled() {
        let (stft, s, v) = setup(2);
        let t = LossTargets::new(&stft, &s, &v).unwrap();
        let mut s_hat = t.speech.to_vec();
        s_hat[10] += 0.25;
        s_hat[20] -= 0.5;
        let mut v_hat = t.noise.to_vec();
        v_hat[5] += 0.125;
        for alpha in [1.0, 10.0, 3.5] {
            let cfg = LossConfig { alpha, speech_only: false };
            let l = loss(&s_hat, &v_hat, &t.speech_mag, &t.noise_mag, &t, &cfg).unwrap();
            assert!((l.total - alpha * 0.875).abs() < 1e-12);
            assert_eq!(l.speech_mag + l.noise_mag, 0.0);
            let only = LossConfig { alpha, speech_only: true };
            let l = loss(&s_hat, &v_hat, &t.speech_mag, &t.noise_mag, &t, &only).unwrap();
            assert!((l.total - alpha * 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let (stft, s, v) = setup(3);
        assert!(LossTargets::new(&stft, &s, &v[..399]).is_err());
        let t = LossTargets::new(&stft, &s, &v).unwrap();
        assert!(loss(&s[..5], &t.noise, &t.speech_mag, &t.noise_mag, &t, &LossConfig::default()).is_err());
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let (stft, s, v) = setup(4);
        let y: Vec<f64> = s.iter().zip(&v).map(|(a, b)| 0.7 * a + b).collect();
        let t = LossTargets::new(&stft, &s, &v).unwrap();
        let spec = stft.analyze(&MultiWave::mono(16_000, y)).unwrap();
        let y0 = spec.reference();
        let s_hat = y0.mapv(|z| z * Complex64::new(0.6, 0.1));
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let sv = tape.param(to_tensor(&s_hat));
        let (total, terms) = loss_on_tape(&mut tape, &stft, sv, &y0, &t, &cfg).unwrap();
        let p = stft.params();
        let sw = stft.synthesize(&crate::stft::Spectrogram::from_reference(s_hat.clone(), p)).unwrap();
        let vh = &y0 - &s_hat;
        let vw = stft.synthesize(&crate::stft::Spectrogram::from_reference(vh.clone(), p)).unwrap();
        let plain = loss(
            &sw.channel_vec(0),
            &vw.channel_vec(0),
            &s_hat.iter().map(|z| z.norm()).collect::<Vec<_>>(),
            &vh.iter().map(|z| z.norm()).collect::<Vec<_>>(),
            &t,
            &cfg,
        )
        .unwrap();
        assert!((tape.value(total).item() - plain.total).abs() < 1e-9 * plain.total);
        assert!((terms.total - plain.total).abs() < 1e-9 * plain.total);
        assert!(terms.total >= 0.0);
    }
}
