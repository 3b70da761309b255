//! Short-time Fourier transform with √Hann analysis and synthesis windows.
//!
//! Frames start at sample 0 without padding; trailing samples that do not
//! fill a whole frame are dropped. With a periodic √Hann window at 50%
//! overlap the squared windows sum to one, so synthesis reproduces the
//! interior of the analysed signal exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::MultiWave;
use crate::error::{Error, Result};
use crate::numerics::tape::{Backward, Tape, Tensor, Var};

/// Overlap-add envelope values below this are treated as uncovered samples.
const ENVELOPE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameParams {
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for FrameParams {
    /// 32 ms at 16 kHz, 50% overlap.
    fn default() -> Self {
        Self::new(512, 16000)
    }
}

impl FrameParams {
    /// Half-overlapping frames of `window_len` samples.
    pub fn new(window_len: usize, sample_rate: u32) -> Self {
        assert!(window_len >= 2 && window_len % 2 == 0, "window length must be even");
        Self {
            window_len,
            hop: window_len / 2,
            sample_rate,
        }
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        if samples < self.window_len {
            0
        } else {
            (samples - self.window_len) / self.hop + 1
        }
    }

    /// Length of the synthesized signal for `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_len
        }
    }

    /// Periodic √Hann: `sqrt(0.5 − 0.5·cos(2πn/L))`.
    pub fn window(&self) -> Vec<f64> {
        let l = self.window_len as f64;
        (0..self.window_len)
            .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / l).cos()).sqrt())
            .collect()
    }

    /// Frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.window_len as f64
    }
}

/// Complex STFT, `C × F × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub params: FrameParams,
}

impl Spectrogram {
    pub fn new(data: Array3<Complex64>, params: FrameParams) -> Result<Self> {
        if data.dim().1 != params.bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins, frame parameters imply {}",
                data.dim().1,
                params.bins()
            )));
        }
        Ok(Self { data, params })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn bins(&self) -> usize {
        self.data.dim().1
    }

    pub fn frames(&self) -> usize {
        self.data.dim().2
    }

    /// Single-channel spectrogram of channel `c`.
    pub fn channel(&self, c: usize) -> Spectrogram {
        let (_, f, t) = self.data.dim();
        Spectrogram {
            data: Array3::from_shape_fn((1, f, t), |(_, k, i)| self.data[(c, k, i)]),
            params: self.params,
        }
    }

    /// Channel 0 as an `F × T` matrix.
    pub fn reference(&self) -> Array2<Complex64> {
        self.data.index_axis(ndarray::Axis(0), 0).to_owned()
    }

    pub fn from_reference(reference: Array2<Complex64>, params: FrameParams) -> Self {
        let (f, t) = reference.dim();
        Spectrogram {
            data: reference.into_shape_with_order((1, f, t)).expect("F×T into 1×F×T"),
            params,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Reusable FFT plans for one frame configuration.
pub struct Stft {
    params: FrameParams,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("params", &self.params).finish()
    }
}

impl Stft {
    pub fn new(params: FrameParams) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            params,
            window: params.window(),
            forward: planner.plan_fft_forward(params.window_len),
            inverse: planner.plan_fft_inverse(params.window_len),
        }
    }

    pub fn params(&self) -> FrameParams {
        self.params
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// DFT of the windowed frames of every channel.
    pub fn analyze(&self, wave: &MultiWave) -> Result<Spectrogram> {
        let p = self.params;
        if wave.len() < p.window_len {
            return Err(Error::TooShort {
                needed: p.window_len,
                got: wave.len(),
            });
        }
        let (c, f, t) = (wave.channels(), p.bins(), p.frames_for(wave.len()));
        let mut out = Array3::zeros((c, f, t));
        let mut buf = vec![Complex64::new(0.0, 0.0); p.window_len];
        for ch in 0..c {
            let x = wave.channel(ch);
            for i in 0..t {
                let start = i * p.hop;
                for (n, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(x[start + n] * self.window[n], 0.0);
                }
                self.forward.process(&mut buf);
                for k in 0..f {
                    out[(ch, k, i)] = buf[k];
                }
            }
        }
        Spectrogram::new(out, p)
    }

    /// Real inverse DFT of one frame given its `F` non-negative bins.
    ///
    /// The imaginary parts of the DC and Nyquist bins do not contribute.
    fn irfft_frame(&self, bins: impl Fn(usize) -> Complex64, buf: &mut [Complex64]) {
        let l = self.params.window_len;
        let half = l / 2;
        for k in 0..=half {
            buf[k] = bins(k);
        }
        buf[0].im = 0.0;
        buf[half].im = 0.0;
        for k in 1..half {
            buf[l - k] = buf[k].conj();
        }
        self.inverse.process(buf);
        let scale = 1.0 / l as f64;
        for b in buf.iter_mut() {
            *b *= scale;
        }
    }

    /// Sum of squared synthesis windows over all frames.
    fn envelope(&self, frames: usize) -> Vec<f64> {
        let p = self.params;
        let mut env = vec![0.0; p.samples_for(frames)];
        for i in 0..frames {
            for (n, w) in self.window.iter().enumerate() {
                env[i * p.hop + n] += w * w;
            }
        }
        env
    }

    /// Weighted overlap-add of inverse DFTs, normalized by the window envelope.
    pub fn synthesize(&self, spec: &Spectrogram) -> Result<MultiWave> {
        if spec.params != self.params {
            return Err(Error::InvalidArgument("spectrogram frame parameters differ from plan".into()));
        }
        let (c, _, t) = spec.data.dim();
        let len = self.params.samples_for(t);
        let mut out = Array2::zeros((c, len));
        for ch in 0..c {
            let y = self.overlap_add(t, |k, i| spec.data[(ch, k, i)]);
            out.row_mut(ch).assign(&ndarray::ArrayView1::from(&y));
        }
        Ok(MultiWave::new(self.params.sample_rate, out))
    }

    fn overlap_add(&self, frames: usize, bin: impl Fn(usize, usize) -> Complex64) -> Vec<f64> {
        let p = self.params;
        let env = self.envelope(frames);
        let mut y = vec![0.0; env.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); p.window_len];
        for i in 0..frames {
            self.irfft_frame(|k| bin(k, i), &mut buf);
            for n in 0..p.window_len {
                y[i * p.hop + n] += self.window[n] * buf[n].re;
            }
        }
        for (v, e) in y.iter_mut().zip(&env) {
            *v = if *e > ENVELOPE_FLOOR { *v / e } else { 0.0 };
        }
        y
    }

    /// Differentiable synthesis of one channel stored as an `(F, T, 2)` tensor
    /// of `(re, im)` pairs; the output is the 1-D time signal.
    pub fn synthesize_on_tape(self: &Arc<Self>, tape: &mut Tape, spec: Var) -> Var {
        let v = tape.value(spec);
        let shape = v.shape().to_vec();
        assert_eq!(shape.len(), 3, "expected an (F, T, 2) tensor");
        assert_eq!(shape[0], self.params.bins(), "bin count mismatch");
        assert_eq!(shape[2], 2, "last axis must hold (re, im)");
        let frames = shape[1];
        let d = v.data();
        let y = self.overlap_add(frames, |k, i| {
            let o = (k * frames + i) * 2;
            Complex64::new(d[o], d[o + 1])
        });
        let n = y.len();
        tape.record(
            Tensor::new(vec![n], y),
            vec![spec],
            Box::new(OverlapAddRule {
                stft: Arc::clone(self),
                frames,
            }),
        )
    }
}

struct OverlapAddRule {
    stft: Arc<Stft>,
    frames: usize,
}

impl Backward for OverlapAddRule {
    fn backward(&self, grad: &Tensor, _: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let p = self.stft.params;
        let (l, f, t) = (p.window_len, p.bins(), self.frames);
        let env = self.stft.envelope(t);
        let g = grad.data();
        let mut out = vec![0.0; f * t * 2];
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        for i in 0..t {
            for n in 0..l {
                let e = env[i * p.hop + n];
                let gn = if e > ENVELOPE_FLOOR { g[i * p.hop + n] / e } else { 0.0 };
                buf[n] = Complex64::new(self.stft.window[n] * gn, 0.0);
            }
            self.stft.forward.process(&mut buf);
            for k in 0..f {
                let edge = k == 0 || 2 * k == l;
                let weight = if edge { 1.0 } else { 2.0 } / l as f64;
                let o = (k * t + i) * 2;
                out[o] = weight * buf[k].re;
                out[o + 1] = if edge { 0.0 } else { weight * buf[k].im };
            }
        }
        vec![Some(Tensor::new(vec![f, t, 2], out))]
    }
}

pub fn analyze(wave: &MultiWave, params: FrameParams) -> Result<Spectrogram> {
    Stft::new(params).analyze(wave)
}

pub fn synthesize(spec: &Spectrogram) -> Result<MultiWave> {
    Stft::new(spec.params).synthesize(spec)
}

/// Packs an `F × T` complex matrix as an `(F, T, 2)` tensor.
pub fn to_tensor(m: &Array2<Complex64>) -> Tensor {
    let (f, t) = m.dim();
    let mut data = Vec::with_capacity(f * t * 2);
    for z in m.iter() {
        data.push(z.re);
        data.push(z.im);
    }
    Tensor::new(vec![f, t, 2], data)
}

pub fn from_tensor(t: &Tensor) -> Array2<Complex64> {
    let s = t.shape();
    assert_eq!(s.len(), 3);
    assert_eq!(s[2], 2);
    let d = t.data();
    Array2::from_shape_fn((s[0], s[1]), |(k, i)| {
        let o = (k * s[1] + i) * 2;
        Complex64::new(d[o], d[o + 1])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(len: usize, seed: u64) -> MultiWave {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiWave::mono(16000, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn window_satisfies_cola() {
        let p = FrameParams::default();
        let w = p.window();
        for n in 0..p.hop {
            let s = w[n] * w[n] + w[n + p.hop] * w[n + p.hop];
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn frame_count_formula() {
        let p = FrameParams::default();
        let s = analyze(&MultiWave::zeros(16000, 1, 1024), p).unwrap();
        assert_eq!(s.frames(), 3);
        assert_eq!(s.bins(), 257);
        assert!(s.data.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn short_signal_rejected() {
        assert!(matches!(
            analyze(&MultiWave::zeros(16000, 1, 511), FrameParams::default()),
            Err(Error::TooShort { needed: 512, got: 511 })
        ));
    }

    #[test]
    fn bin_centered_cosine_matches_direct_dft() {
        let p = FrameParams::new(64, 16000);
        let x: Vec<f64> = (0..64).map(|n| (2.0 * PI * 3.0 * n as f64 / 64.0).cos()).collect();
        let spec = analyze(&MultiWave::mono(16000, x.clone()), p).unwrap();
        let w = p.window();
        for k in 0..p.bins() {
            let direct: Complex64 = (0..64)
                .map(|n| Complex64::from_polar(x[n] * w[n], -2.0 * PI * (k * n) as f64 / 64.0))
                .sum();
            assert!((spec.data[(0, k, 0)] - direct).norm() < 1e-10);
        }
        // Rectangular cross-check: all energy sits at k = 3.
        let rect: Vec<f64> = (0..p.bins())
            .map(|k| {
                (0..64)
                    .map(|n| Complex64::from_polar(x[n], -2.0 * PI * (k * n) as f64 / 64.0))
                    .sum::<Complex64>()
                    .norm()
            })
            .collect();
        let peak = rect.iter().cloned().fold(0.0, f64::max);
        assert!((rect[3] - peak).abs() < 1e-12 && (rect[3] - 32.0).abs() < 1e-9);
        let mags: Vec<f64> = (0..p.bins()).map(|k| spec.data[(0, k, 0)].norm()).collect();
        let argmax = mags.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 3);
    }

    #[test]
    fn round_trip_interior() {
        let p = FrameParams::default();
        let x = random_wave(3 * 16000, 9);
        let y = synthesize(&analyze(&x, p).unwrap()).unwrap();
        let half = p.window_len / 2;
        let end = y.len() - half;
        let (mut num, mut den) = (0.0, 0.0);
        for n in half..end {
            num += (y.data[(0, n)] - x.data[(0, n)]).powi(2);
            den += x.data[(0, n)].powi(2);
        }
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn zero_spectrogram_gives_zero_signal() {
        let p = FrameParams::default();
        let spec = Spectrogram::new(Array3::zeros((2, p.bins(), 5)), p).unwrap();
        let y = synthesize(&spec).unwrap();
        assert_eq!(y.len(), p.samples_for(5));
        assert!(y.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_phase_spectrogram_is_finite() {
        let p = FrameParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = Array3::from_shape_fn((1, p.bins(), 20), |_| {
            Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))
        });
        let y = synthesize(&Spectrogram::new(data, p).unwrap()).unwrap();
        assert!(y.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn analysis_is_linear() {
        let p = FrameParams::default();
        let x = random_wave(4000, 1);
        let y = random_wave(4000, 2);
        let (a, b) = (0.7, -1.3);
        let combo = MultiWave::new(16000, &x.data * a + &y.data * b);
        let sx = analyze(&x, p).unwrap();
        let sy = analyze(&y, p).unwrap();
        let sc = analyze(&combo, p).unwrap();
        for ((c, u), v) in sc.data.iter().zip(sx.data.iter()).zip(sy.data.iter()) {
            assert!((c - (u * a + v * b)).norm() < 1e-12);
        }
    }

    #[test]
    fn overlap_add_gradient() {
        let p = FrameParams::new(16, 16000);
        let stft = Arc::new(Stft::new(p));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::new(vec![9, 5, 2], (0..90).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let weights: Vec<f64> = (0..p.samples_for(5)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = check_gradients(&[x], 1e-5, |tape, v| {
            let y = stft.synthesize_on_tape(tape, v[0]);
            let w = tape.constant(Tensor::new(vec![weights.len()], weights.clone()));
            let prod = tape.mul(y, w);
            tape.sum(prod)
        });
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn tape_synthesis_matches_plain_synthesis() {
        let p = FrameParams::new(32, 16000);
        let stft = Arc::new(Stft::new(p));
        let x = random_wave(400, 5);
        let spec = stft.analyze(&x).unwrap();
        let plain = stft.synthesize(&spec).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(to_tensor(&spec.reference()));
        let y = stft.synthesize_on_tape(&mut tape, v);
        assert_eq!(tape.value(y).data(), plain.channel_vec(0).as_slice());
    }
}
