//! Objective measures: SI-SDR, ESTOI and energy retention.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SI-SDR values are clamped to `±SI_SDR_LIMIT` dB.
pub const SI_SDR_LIMIT: f64 = 60.0;

pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy == 0.0 {
        return Err(Error::InvalidArgument("SI-SDR of a silent reference".into()));
    }
    let beta = estimate.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / ref_energy;
    let target: f64 = beta * beta * ref_energy;
    let err: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (beta * r - e).powi(2))
        .sum();
    let db = if target == 0.0 {
        -SI_SDR_LIMIT
    } else if err == 0.0 {
        SI_SDR_LIMIT
    } else {
        10.0 * (target / err).log10()
    };
    Ok(db.clamp(-SI_SDR_LIMIT, SI_SDR_LIMIT))
}

/// `‖filtered‖² / ‖input‖²`.
pub fn energy_retention(filtered: &[f64], input: &[f64]) -> Result<f64> {
    if filtered.len() != input.len() {
        return Err(Error::Shape("energy retention needs equal lengths".into()));
    }
    let e_in: f64 = input.iter().map(|v| v * v).sum();
    if e_in == 0.0 {
        return Err(Error::InvalidArgument("energy retention of a silent input".into()));
    }
    Ok(filtered.iter().map(|v| v * v).sum::<f64>() / e_in)
}

/// Per-item values with their mean and 95 % normal-approximation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Half-width `1.96·sd/√n` with the sample standard deviation.
    pub ci95: f64,
}

impl MetricReport {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
        let ci95 = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        };
        Self { values, mean, ci95 }
    }
}

// ESTOI constants.
const ESTOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const DYN_RANGE: f64 = 40.0;

/// Resampler filter taps per polyphase branch.
pub const TAPS_PER_PHASE: usize = 64;
const KAISER_BETA: f64 = 5.0;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase rational resampling with a Kaiser-windowed sinc low-pass.
///
/// The output has `ceil(len · to / from)` samples and zero group delay.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let g = gcd(from as u64, to as u64);
    let (up, down) = ((to as u64 / g) as usize, (from as u64 / g) as usize);
    let len = TAPS_PER_PHASE * up + 1;
    let center = (len - 1) / 2;
    let fc = 1.0 / up.max(down) as f64;
    let h: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 - center as f64;
            let sinc = if t == 0.0 { 1.0 } else { (PI * fc * t).sin() / (PI * fc * t) };
            let r = t / center as f64;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(KAISER_BETA);
            up as f64 * fc * sinc * w
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    (0..out_len)
        .map(|m| {
            let t = m * down + center;
            let j_hi = (t / up).min(x.len().saturating_sub(1));
            let j_lo = (t + up).saturating_sub(len) / up;
            (j_lo..=j_hi)
                .filter_map(|j| h.get(t.checked_sub(j * up)?).map(|c| c * x[j]))
                .sum()
        })
        .collect()
}

fn hanning_inner(n: usize) -> Vec<f64> {
    // Symmetric Hann of length n + 2 without its zero end points.
    (1..=n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos()).collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames more than 40 dB below the loudest reference frame and
/// overlap-adds the rest.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hanning_inner(FRAME);
    let frames = |s: &[f64]| -> Vec<Vec<f64>> {
        frame_starts(s.len())
            .map(|i| s[i..i + FRAME].iter().zip(&w).map(|(a, b)| a * b).collect())
            .collect()
    };
    let (xf, yf) = (frames(x), frames(y));
    let energy: Vec<f64> = xf
        .iter()
        .map(|f| 20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + f64::EPSILON).log10())
        .collect();
    let peak = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..xf.len()).filter(|&i| peak - DYN_RANGE - energy[i] < 0.0).collect();
    let ola = |fs: &[Vec<f64>]| -> Vec<f64> {
        if keep.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (keep.len() - 1) * HOP + FRAME];
        for (n, &i) in keep.iter().enumerate() {
            for (o, v) in out[n * HOP..].iter_mut().zip(&fs[i]) {
                *o += v;
            }
        }
        out
    };
    (ola(&xf), ola(&yf))
}

/// One-third octave band magnitudes, `BANDS × frames`.
fn third_octave_envelopes(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Vec<f64>> {
    let fft = planner.plan_fft_forward(NFFT);
    let w = hanning_inner(FRAME);
    let bins = NFFT / 2 + 1;
    let f: Vec<f64> = (0..bins).map(|k| k as f64 * ESTOI_RATE as f64 / NFFT as f64).collect();
    let nearest = |target: f64| -> usize {
        let mut best = 0;
        for k in 1..bins {
            if (f[k] - target).powi(2) < (f[best] - target).powi(2) {
                best = k;
            }
        }
        best
    };
    let bands: Vec<(usize, usize)> = (0..BANDS)
        .map(|b| {
            let b = b as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * b - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * b + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect();
    let mut env = vec![Vec::new(); BANDS];
    for i in frame_starts(x.len()) {
        let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
        for (j, b) in buf.iter_mut().take(FRAME).enumerate() {
            b.re = x[i + j] * w[j];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let p: f64 = buf[lo..hi].iter().map(|z| z.norm_sqr()).sum();
            env[b].push(p.sqrt());
        }
    }
    env
}

/// Subtracts the mean and scales to unit norm; all-zero vectors stay zero.
fn normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Extended short-time objective intelligibility of `estimate` against `reference`.
pub fn estoi(estimate: &[f64], reference: &[f64], sample_rate: u32) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape("ESTOI needs equal lengths".into()));
    }
    let x = resample(reference, sample_rate, ESTOI_RATE);
    let y = resample(estimate, sample_rate, ESTOI_RATE);
    let (x, y) = remove_silent_frames(&x, &y);
    let mut planner = FftPlanner::new();
    let xe = third_octave_envelopes(&x, &mut planner);
    let ye = third_octave_envelopes(&y, &mut planner);
    let frames = xe[0].len();
    if frames < SEGMENT {
        return Err(Error::TooShort {
            needed: SEGMENT,
            got: frames,
        });
    }
    let segments = frames - SEGMENT + 1;
    let mut total = 0.0;
    for m in 0..segments {
        let seg = |e: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let mut rows: Vec<Vec<f64>> = e.iter().map(|band| band[m..m + SEGMENT].to_vec()).collect();
            rows.iter_mut().for_each(|r| normalize(r));
            for t in 0..SEGMENT {
                let mut col: Vec<f64> = rows.iter().map(|r| r[t]).collect();
                normalize(&mut col);
                for (r, v) in rows.iter_mut().zip(col) {
                    r[t] = v;
                }
            }
            rows
        };
        let (a, b) = (seg(&xe), seg(&ye));
        let dot: f64 = a.iter().zip(&b).flat_map(|(r, s)| r.iter().zip(s).map(|(p, q)| p * q)).sum();
        total += dot / SEGMENT as f64;
    }
    Ok(total / segments as f64)
}
