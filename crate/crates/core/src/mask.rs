//! Complex ratio masks on the reference channel.
//!
//! Compression maps each real and imaginary component through
//! `K(1 − e^{−Cx})/(1 + e^{−Cx})` with `K = C = 1`, which is `tanh(x/2)`.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::tape::{Backward, Tape, Tensor, Var};
use crate::stft::Spectrogram;

pub const EPSILON: f64 = 1e-12;
/// Decompression clamps components to `±(1 − CLAMP_MARGIN)`.
pub const CLAMP_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMask {
    /// `F × T`.
    pub data: Array2<Complex64>,
    pub compressed: bool,
}

pub fn compress_component(x: f64) -> f64 {
    (x / 2.0).tanh()
}

/// Inverse of [`compress_component`]; the flag reports clamping.
pub fn decompress_component(y: f64) -> (f64, bool) {
    let bound = 1.0 - CLAMP_MARGIN;
    let clamped = y.abs() > bound;
    let y = y.clamp(-bound, bound);
    (2.0 * y.atanh(), clamped)
}

impl ComplexMask {
    pub fn uncompressed(data: Array2<Complex64>) -> Self {
        Self { data, compressed: false }
    }

    pub fn ones(bins: usize, frames: usize) -> Self {
        Self::uncompressed(Array2::from_elem((bins, frames), Complex64::new(1.0, 0.0)))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn compress(&self) -> Result<ComplexMask> {
        if self.compressed {
            return Err(Error::InvalidArgument("mask is already compressed".into()));
        }
        Ok(ComplexMask {
            data: self
                .data
                .mapv(|z| Complex64::new(compress_component(z.re), compress_component(z.im))),
            compressed: true,
        })
    }

    /// Returns the uncompressed mask and how many components were clamped.
    pub fn decompress(&self) -> Result<(ComplexMask, usize)> {
        if !self.compressed {
            return Err(Error::InvalidArgument("mask is not compressed".into()));
        }
        let mut clamped = 0;
        let data = self.data.mapv(|z| {
            let (re, a) = decompress_component(z.re);
            let (im, b) = decompress_component(z.im);
            clamped += a as usize + b as usize;
            Complex64::new(re, im)
        });
        if clamped > 0 {
            log::warn!("{clamped} mask components clamped during decompression");
        }
        Ok((ComplexMask::uncompressed(data), clamped))
    }

    /// `Re(M_V) = 1 − Re(M_S)`, `Im(M_V) = −Im(M_S)`.
    pub fn noise_mask(&self) -> Result<ComplexMask> {
        if self.compressed {
            return Err(Error::InvalidArgument("noise mask needs an uncompressed mask".into()));
        }
        Ok(ComplexMask::uncompressed(
            self.data.mapv(|z| Complex64::new(1.0 - z.re, -z.im)),
        ))
    }
}

/// `M = S·conj(Y) / (|Y|² + ε)` on channel 0 of each spectrogram.
pub fn ideal_cirm(s_ref: &Spectrogram, y_ref: &Spectrogram) -> Result<ComplexMask> {
    if s_ref.bins() != y_ref.bins() || s_ref.frames() != y_ref.frames() {
        return Err(Error::Shape("target and mixture spectrograms differ in shape".into()));
    }
    let (s, y) = (s_ref.reference(), y_ref.reference());
    let data = Array2::from_shape_fn(s.dim(), |ix| s[ix] * y[ix].conj() / (y[ix].norm_sqr() + EPSILON));
    Ok(ComplexMask::uncompressed(data))
}

/// `Ŝ = M · Y⁽⁰⁾`, single-channel output.
pub fn apply_mask(mask: &ComplexMask, y: &Spectrogram) -> Result<Spectrogram> {
    if mask.compressed {
        return Err(Error::InvalidArgument("decompress the mask before applying it".into()));
    }
    if mask.dim() != (y.bins(), y.frames()) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match spectrogram {:?}",
            mask.dim(),
            (y.bins(), y.frames())
        )));
    }
    let y0 = y.reference();
    Ok(Spectrogram::from_reference(&mask.data * &y0, y.params))
}

/// Elementwise decompression of an `(…, 2)` tensor on the tape.
pub fn decompress_on_tape(tape: &mut Tape, x: Var) -> Var {
    let v = tape.value(x);
    let data: Vec<f64> = v.data().iter().map(|y| decompress_component(*y).0).collect();
    let out = Tensor::new(v.shape().to_vec(), data);
    tape.record(out, vec![x], Box::new(DecompressRule))
}

struct DecompressRule;

impl Backward for DecompressRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        let bound = 1.0 - CLAMP_MARGIN;
        let g: Vec<f64> = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(y, g)| if y.abs() > bound { 0.0 } else { g * 2.0 / (1.0 - y * y) })
            .collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), g))]
    }
}

/// Complex product of an `(F, T, 2)` variable with a constant `F × T` matrix.
pub fn complex_mul_const(tape: &mut Tape, x: Var, c: &Array2<Complex64>) -> Var {
    let v = tape.value(x);
    let shape = v.shape().to_vec();
    assert_eq!(shape, vec![c.dim().0, c.dim().1, 2], "complex product shape mismatch");
    let consts: Vec<Complex64> = c.iter().copied().collect();
    let d = v.data();
    let mut out = Vec::with_capacity(d.len());
    for (j, z) in consts.iter().enumerate() {
        let m = Complex64::new(d[2 * j], d[2 * j + 1]) * z;
        out.push(m.re);
        out.push(m.im);
    }
    tape.record(Tensor::new(shape, out), vec![x], Box::new(ComplexMulRule { consts }))
}

struct ComplexMulRule {
    consts: Vec<Complex64>,
}

impl Backward for ComplexMulRule {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Vec<Option<Tensor>> {
        // For y = x·c the real-valued adjoint is ḡ·conj(c).
        let g = grad.data();
        let mut out = Vec::with_capacity(g.len());
        for (j, z) in self.consts.iter().enumerate() {
            let r = Complex64::new(g[2 * j], g[2 * j + 1]) * z.conj();
            out.push(r.re);
            out.push(r.im);
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), out))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::stft::FrameParams;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spec(data: Array2<Complex64>) -> Spectrogram {
        let (f, _) = data.dim();
        Spectrogram::from_reference(data, FrameParams::new(2 * (f - 1), 16000))
    }

    fn random(f: usize, t: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((f, t), |_| c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
    }

    #[test]
    fn cirm_examples() {
        let y = random(5, 4, 1);
        let m = ideal_cirm(&spec(y.clone()), &spec(y.clone())).unwrap();
        assert!(m.data.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-10));
        let m = ideal_cirm(&spec(Array2::zeros((5, 4))), &spec(y.clone())).unwrap();
        assert!(m.data.iter().all(|z| *z == c(0.0, 0.0)));
        let m = ideal_cirm(&spec(y.mapv(|z| z * c(0.0, 1.0))), &spec(y)).unwrap();
        assert!(m.data.iter().all(|z| (z - c(0.0, 1.0)).norm() < 1e-10));
    }

    #[test]
    fn compression_values() {
        assert_eq!(compress_component(0.0), 0.0);
        let e = (-1.0f64).exp();
        assert!((compress_component(1.0) - (1.0 - e) / (1.0 + e)).abs() < 1e-15);
        assert!((compress_component(1.0) - 0.46212).abs() < 1e-5);
    }

    #[test]
    fn compression_round_trip() {
        let m = ComplexMask::uncompressed(random(7, 9, 2));
        let (back, clamped) = m.compress().unwrap().decompress().unwrap();
        assert_eq!(clamped, 0);
        for (a, b) in back.data.iter().zip(m.data.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn decompress_clamps_at_the_boundary() {
        let m = ComplexMask {
            data: Array2::from_elem((1, 2), c(1.0, -1.0)),
            compressed: true,
        };
        let (out, clamped) = m.decompress().unwrap();
        assert_eq!(clamped, 4);
        assert!(out.data.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn noise_mask_examples() {
        let m = ComplexMask::uncompressed(Array2::from_shape_vec((1, 3), vec![c(1.0, 0.0), c(0.0, 0.0), c(0.3, 0.4)]).unwrap());
        let v = m.noise_mask().unwrap();
        assert_eq!(v.data[(0, 0)], c(0.0, 0.0));
        assert_eq!(v.data[(0, 1)], c(1.0, 0.0));
        assert!((v.data[(0, 2)] - c(0.7, -0.4)).norm() < 1e-15);
    }

    #[test]
    fn apply_examples() {
        let y = random(5, 6, 3);
        let s = random(5, 6, 4);
        let ys = spec(y.clone());
        assert_eq!(apply_mask(&ComplexMask::ones(5, 6), &ys).unwrap().reference(), y);
        let m = ideal_cirm(&spec(s.clone()), &ys).unwrap();
        let est = apply_mask(&m, &ys).unwrap().reference();
        for (a, b) in est.iter().zip(s.iter()) {
            assert!((a - b).norm() <= 1e-6 * b.norm().max(1e-12));
        }
        let compressed = m.compress().unwrap();
        assert!(apply_mask(&compressed, &ys).is_err());
    }

    #[test]
    fn tape_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let consts = random(3, 4, 6);
        let x = Tensor::new(vec![3, 4, 2], (0..24).map(|_| rng.gen_range(-0.9..0.9)).collect());
        let w: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = check_gradients(&[x], 1e-6, |tape, v| {
            let m = decompress_on_tape(tape, v[0]);
            let s = complex_mul_const(tape, m, &consts);
            let k = tape.constant(Tensor::new(vec![3, 4, 2], w.clone()));
            let p = tape.mul(s, k);
            tape.sum(p)
        });
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    proptest! {
        #[test]
        fn masks_conserve_the_mixture(seed in any::<u64>()) {
            let y = spec(random(4, 5, seed));
            let m = ComplexMask::uncompressed(random(4, 5, seed.wrapping_add(1)));
            let s = apply_mask(&m, &y).unwrap().reference();
            let v = apply_mask(&m.noise_mask().unwrap(), &y).unwrap().reference();
            let y0 = y.reference();
            for ((a, b), yy) in s.iter().zip(v.iter()).zip(y0.iter()) {
                prop_assert!((a + b - yy).norm() <= 1e-15 * yy.norm().max(1.0) * 4.0);
            }
        }

        #[test]
        fn compression_is_odd_monotone_bounded(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            prop_assert_eq!(compress_component(-a), -compress_component(a));
            let (ca, cb) = (compress_component(a), compress_component(b));
            prop_assert!(ca.abs() <= 1.0);
            if a < b { prop_assert!(ca <= cb); }
            if a.abs() < 30.0 { prop_assert!(ca.abs() < 1.0); }
        }
    }

    #[test]
    fn shapes_must_match() {
        let y = spec(random(5, 6, 7));
        assert!(apply_mask(&ComplexMask::ones(5, 5), &y).is_err());
        let s = Spectrogram::new(Array3::zeros((1, 5, 5)), FrameParams::new(8, 16000)).unwrap();
        assert!(ideal_cirm(&s, &y).is_err());
    }
}
