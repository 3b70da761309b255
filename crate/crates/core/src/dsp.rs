//! Fractional delays and FFT convolution shared by the simulator and probes.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Length of the windowed-sinc fractional delay filter.
pub const SINC_TAPS: usize = 81;
pub const SINC_HALF: usize = SINC_TAPS / 2;

/// Resolution of the tabulated fractional offsets.
const FRACTION_STEPS: usize = 2048;

fn kernel_row(frac: f64) -> [f64; SINC_TAPS] {
    let w = (SINC_TAPS + 1) as f64 / 2.0;
    let mut row = [0.0; SINC_TAPS];
    for (j, r) in row.iter_mut().enumerate() {
        let t = j as f64 - SINC_HALF as f64 - frac;
        let sinc = if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
        let hann = 0.5 * (1.0 + (PI * t / w).cos());
        *r = sinc * hann;
    }
    row
}

fn table() -> &'static [[f64; SINC_TAPS]] {
    static TABLE: OnceLock<Vec<[f64; SINC_TAPS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=FRACTION_STEPS)
            .map(|i| kernel_row(i as f64 / FRACTION_STEPS as f64))
            .collect()
    })
}

/// Hann-windowed sinc taps for a delay with fractional part `frac ∈ [0, 1)`.
///
/// Tap `j` belongs to sample `floor(delay) + j − SINC_HALF`.
pub fn fractional_kernel(frac: f64) -> &'static [f64; SINC_TAPS] {
    let idx = (frac * FRACTION_STEPS as f64).round() as usize;
    &table()[idx.min(FRACTION_STEPS)]
}

/// Adds `gain · δ(n − delay)` to `out`, band-limited; taps outside the buffer are dropped.
pub fn add_delayed_impulse(out: &mut [f64], delay: f64, gain: f64) {
    let base = delay.floor();
    let kernel = fractional_kernel(delay - base);
    let start = base as i64 - SINC_HALF as i64;
    let lo = (-start).max(0) as usize;
    let hi = ((out.len() as i64 - start).max(0) as usize).min(SINC_TAPS);
    for j in lo..hi {
        out[(start + j as i64) as usize] += gain * kernel[j];
    }
}

/// Samples needed to hold an impulse at `delay` including its filter tail.
pub fn impulse_span(delay: f64) -> usize {
    delay.floor() as usize + SINC_HALF + 1
}

/// `x` delayed by `delay` samples and scaled by `gain`, truncated to `len`.
///
/// The full kernel is applied even when the delay is shorter than half the
/// filter length.
pub fn fractional_delay(x: &[f64], delay: f64, gain: f64, len: usize) -> Vec<f64> {
    let mut h = vec![0.0; impulse_span(delay + SINC_HALF as f64)];
    add_delayed_impulse(&mut h, delay + SINC_HALF as f64, gain);
    let mut conv = Convolver::new(x.len() + h.len());
    let xs = conv.spectrum(x);
    let hs = conv.spectrum(&h);
    let prod: Vec<Complex64> = xs.iter().zip(&hs).map(|(a, b)| a * b).collect();
    conv.inverse_from(prod, SINC_HALF, len)
}

/// Linear convolution truncated to `len` samples, computed by FFT.
pub fn convolve(x: &[f64], h: &[f64], len: usize) -> Vec<f64> {
    let mut conv = Convolver::new(x.len() + h.len());
    let xs = conv.spectrum(x);
    let hs = conv.spectrum(h);
    let prod: Vec<Complex64> = xs.iter().zip(&hs).map(|(a, b)| a * b).collect();
    conv.inverse(prod, len)
}

/// Fixed-size FFT workspace for repeated convolutions of bounded total length.
pub struct Convolver {
    size: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Convolver {
    /// Workspace able to hold linear convolutions of total length `max_len`.
    pub fn new(max_len: usize) -> Self {
        let size = max_len.max(1).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn spectrum(&mut self, x: &[f64]) -> Vec<Complex64> {
        assert!(x.len() <= self.size, "signal longer than convolution workspace");
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (b, v) in buf.iter_mut().zip(x) {
            b.re = *v;
        }
        self.forward.process(&mut buf);
        buf
    }

    pub fn inverse(&mut self, spec: Vec<Complex64>, len: usize) -> Vec<f64> {
        self.inverse_from(spec, 0, len)
    }

    /// Output samples `[start, start + len)` of the inverse transform.
    pub fn inverse_from(&mut self, mut spec: Vec<Complex64>, start: usize, len: usize) -> Vec<f64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.size as f64;
        (start..start + len)
            .map(|n| if n < self.size { spec[n].re * scale } else { 0.0 })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_delay_is_exact() {
        let mut out = vec![0.0; 100];
        add_delayed_impulse(&mut out, 50.0, 2.0);
        for (n, v) in out.iter().enumerate() {
            let expect = if n == 50 { 2.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15, "n={n} v={v}");
        }
    }

    #[test]
    fn kernel_passes_dc() {
        for frac in [0.0, 0.25, 0.5, 0.9] {
            let s: f64 = fractional_kernel(frac).iter().sum();
            assert!((s - 1.0).abs() < 1e-2, "frac {frac}: {s}");
        }
    }

    #[test]
    fn half_sample_delay_of_low_tone() {
        let n = 2000;
        let f = 0.01;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64).sin()).collect();
        let y = fractional_delay(&x, 10.5, 1.0, n);
        for i in 200..1800 {
            let expect = (2.0 * PI * f * (i as f64 - 10.5)).sin();
            assert!((y[i] - expect).abs() < 1e-3);
        }
    }

    #[test]
    fn convolution_matches_direct() {
        let x = [1.0, 2.0, -1.0, 0.5];
        let h = [0.5, -0.25, 1.0];
        let y = convolve(&x, &h, 6);
        let mut direct = [0.0; 6];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                direct[i + j] += a * b;
            }
        }
        for (a, b) in y.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
