//! Oracle linear spatial filtering: recursive covariance estimates, GEVD
//! steering vectors, MVDR and delay-and-sum weights, filter-and-sum.

use ndarray::Array3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::cmat::{gevd_principal, inner, normalize_phase, solve_hpd, vec_norm, CMat};
use crate::stft::Spectrogram;

pub const DEFAULT_LAMBDA: f64 = 0.95;
/// Diagonal loading relative to `trace / C`, applied once when a solve fails.
pub const LOADING: f64 = 1e-6;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// One Hermitian `C × C` matrix per time-frequency point.
#[derive(Debug, Clone)]
pub struct CovarianceField {
    bins: usize,
    frames: usize,
    channels: usize,
    pub lambda: f64,
    data: Vec<CMat>,
}

impl CovarianceField {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn at(&self, k: usize, i: usize) -> &CMat {
        &self.data[k * self.frames + i]
    }
}

/// `Φ(k,0) = Y Yᴴ`, then `Φ(k,i) = λ Φ(k,i−1) + (1−λ) Y Yᴴ`.
pub fn recursive_cov(spec: &Spectrogram, lambda: f64) -> Result<CovarianceField> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!("smoothing constant {lambda} outside (0, 1)")));
    }
    let (c, f, t) = spec.data.dim();
    let mut data = Vec::with_capacity(f * t);
    let mut y = vec![zero(); c];
    for k in 0..f {
        let mut prev: Option<CMat> = None;
        for i in 0..t {
            for (l, v) in y.iter_mut().enumerate() {
                *v = spec.data[(l, k, i)];
            }
            let inst = CMat::outer(&y);
            let phi = match &prev {
                None => inst,
                Some(p) => p.axpby(lambda, &inst, 1.0 - lambda),
            };
            data.push(phi.clone());
            prev = Some(phi);
        }
    }
    Ok(CovarianceField {
        bins: f,
        frames: t,
        channels: c,
        lambda,
        data,
    })
}

/// Per-point complex `C`-vectors stored as `F × T × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub data: Array3<Complex64>,
}

impl VectorField {
    pub fn zeros(bins: usize, frames: usize, channels: usize) -> Self {
        Self {
            data: Array3::zeros((bins, frames, channels)),
        }
    }

    pub fn at(&self, k: usize, i: usize) -> Vec<Complex64> {
        self.data.slice(ndarray::s![k, i, ..]).to_vec()
    }

    fn set(&mut self, k: usize, i: usize, v: &[Complex64]) {
        for (l, z) in v.iter().enumerate() {
            self.data[(k, i, l)] = *z;
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// The same vector at every point.
    pub fn constant(bins: usize, frames: usize, v: &[Complex64]) -> Self {
        Self {
            data: Array3::from_shape_fn((bins, frames, v.len()), |(_, _, l)| v[l]),
        }
    }
}

/// Which covariance multiplies the principal generalized eigenvector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringMethod {
    #[default]
    SpeechCovariance,
    NoiseCovariance,
}

#[derive(Debug, Clone)]
pub struct SteeringField {
    /// Unit norm, channel 0 real and non-negative.
    pub vectors: VectorField,
    /// Points where the eigenproblem had no unique solution; the previous
    /// frame's vector (or `e₁` at frame 0) was used.
    pub degenerate: usize,
    /// Points where `Φ_V` needed diagonal loading.
    pub loaded: usize,
}

fn loading_for(m: &CMat) -> f64 {
    LOADING * m.trace().re / m.rows() as f64
}

/// Runs `f` on `m`, retrying once with diagonal loading if `m` is not positive definite.
fn with_loading<T>(m: &CMat, f: impl Fn(&CMat) -> Result<T>) -> Result<(T, bool)> {
    match f(m) {
        Ok(v) => Ok((v, false)),
        Err(Error::NotPositiveDefinite { .. }) => f(&m.load_diagonal(loading_for(m))).map(|v| (v, true)),
        Err(e) => Err(e),
    }
}

/// Relative transfer function per point: the principal generalized eigenvector
/// of `(Φ_S, Φ_V)` mapped back through `Φ_S` (or `Φ_V`), normalized.
pub fn estimate_steering(phi_s: &CovarianceField, phi_v: &CovarianceField, method: SteeringMethod) -> Result<SteeringField> {
    if (phi_s.bins, phi_s.frames, phi_s.channels) != (phi_v.bins, phi_v.frames, phi_v.channels) {
        return Err(Error::Shape("speech and noise covariance fields differ in shape".into()));
    }
    let (f, t, c) = (phi_s.bins, phi_s.frames, phi_s.channels);
    let mut e1 = vec![zero(); c];
    e1[0] = Complex64::new(1.0, 0.0);
    let mut out = VectorField::zeros(f, t, c);
    let (mut degenerate, mut loaded) = (0, 0);
    for k in 0..f {
        let mut last = e1.clone();
        for i in 0..t {
            let s = phi_s.at(k, i);
            let v = phi_v.at(k, i);
            let (g, was_loaded) = with_loading(v, |vv| gevd_principal(s, vv)).map_err(|e| e.at_bin(k, i))?;
            loaded += was_loaded as usize;
            let mapped = match method {
                SteeringMethod::SpeechCovariance => s.mul_vec(&g.vector),
                SteeringMethod::NoiseCovariance => v.mul_vec(&g.vector),
            };
            let scale = match method {
                SteeringMethod::SpeechCovariance => s.frobenius_norm(),
                SteeringMethod::NoiseCovariance => v.frobenius_norm(),
            };
            let d = if g.degenerate || vec_norm(&mapped) <= 1e-300_f64.max(1e-12 * scale) {
                degenerate += 1;
                last.clone()
            } else {
                anchor_to_reference(&mapped)
            };
            out.set(k, i, &d);
            last = d;
        }
    }
    Ok(SteeringField {
        vectors: out,
        degenerate,
        loaded,
    })
}

/// Unit norm with channel 0 real and non-negative (falls back to the first
/// non-negligible channel when channel 0 vanishes).
pub fn anchor_to_reference(v: &[Complex64]) -> Vec<Complex64> {
    let n = vec_norm(v);
    if n == 0.0 {
        return v.to_vec();
    }
    if v[0].norm() > 1e-12 * n {
        let rot = v[0].conj() / v[0].norm();
        v.iter().map(|z| z * rot / n).collect()
    } else {
        normalize_phase(v)
    }
}

/// `h = Φ_V⁻¹ d / (dᴴ Φ_V⁻¹ d)`.
pub fn mvdr_weights(phi_v: &CMat, d: &[Complex64]) -> Result<Vec<Complex64>> {
    let (x, _) = with_loading(phi_v, |m| solve_hpd(m, d))?;
    let denom = inner(d, &x);
    if !(denom.norm() > 0.0) || !denom.re.is_finite() {
        return Err(Error::InvalidArgument("steering vector is null for this noise covariance".into()));
    }
    Ok(x.iter().map(|z| z / denom).collect())
}

/// `h = d / (dᴴ d)`.
pub fn delay_and_sum_weights(d: &[Complex64]) -> Result<Vec<Complex64>> {
    let n2 = inner(d, d).re;
    if !(n2 > 0.0) {
        return Err(Error::InvalidArgument("zero steering vector".into()));
    }
    Ok(d.iter().map(|z| z / n2).collect())
}

/// MVDR weights at every point, with the worst distortionless error `|hᴴd − 1|`.
pub fn mvdr_field(phi_v: &CovarianceField, steering: &VectorField) -> Result<(VectorField, f64)> {
    let (f, t, c) = steering.dims();
    if (f, t, c) != (phi_v.bins, phi_v.frames, phi_v.channels) {
        return Err(Error::Shape("steering field and noise covariance differ in shape".into()));
    }
    let mut out = VectorField::zeros(f, t, c);
    let mut worst = 0.0f64;
    for k in 0..f {
        for i in 0..t {
            let d = steering.at(k, i);
            let h = mvdr_weights(phi_v.at(k, i), &d).map_err(|e| e.at_bin(k, i))?;
            worst = worst.max((inner(&h, &d) - 1.0).norm());
            out.set(k, i, &h);
        }
    }
    Ok((out, worst))
}

pub fn delay_and_sum_field(steering: &VectorField) -> Result<VectorField> {
    let (f, t, c) = steering.dims();
    let mut out = VectorField::zeros(f, t, c);
    for k in 0..f {
        for i in 0..t {
            let h = delay_and_sum_weights(&steering.at(k, i)).map_err(|e| e.at_bin(k, i))?;
            out.set(k, i, &h);
        }
    }
    Ok(out)
}

/// Filter-and-sum `Ŝ(k,i) = h(k,i)ᴴ Y(k,i)`.
pub fn apply_filter(h: &VectorField, spec: &Spectrogram) -> Result<Spectrogram> {
    let (c, f, t) = spec.data.dim();
    if h.dims() != (f, t, c) {
        return Err(Error::Shape(format!(
            "filter field {:?} does not match spectrogram {:?}",
            h.dims(),
            (f, t, c)
        )));
    }
    let out = Array3::from_shape_fn((1, f, t), |(_, k, i)| {
        (0..c).map(|l| h.data[(k, i, l)].conj() * spec.data[(l, k, i)]).sum()
    });
    Spectrogram::new(out, spec.params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvdrReport {
    pub max_distortion: f64,
    pub degenerate_points: usize,
    pub loaded_points: usize,
}

/// Oracle MVDR: `Φ_S` from the reverberant target, `Φ_V` from the noise, both
/// recursively averaged; applied to the mixture.
pub fn oracle_mvdr(
    mixture: &Spectrogram,
    target: &Spectrogram,
    noise: &Spectrogram,
    lambda: f64,
    method: SteeringMethod,
) -> Result<(Spectrogram, MvdrReport)> {
    let phi_s = recursive_cov(target, lambda)?;
    let phi_v = recursive_cov(noise, lambda)?;
    let steering = estimate_steering(&phi_s, &phi_v, method)?;
    let (h, max_distortion) = mvdr_field(&phi_v, &steering.vectors)?;
    let out = apply_filter(&h, mixture)?;
    Ok((
        out,
        MvdrReport {
            max_distortion,
            degenerate_points: steering.degenerate,
            loaded_points: steering.loaded,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MultiWave;
    use crate::roomsim::{anechoic_probe, probe_array, SPEED_OF_SOUND};
    use crate::stft::{analyze, FrameParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rand_vec(n: usize, rng: &mut impl Rng) -> Vec<Complex64> {
        (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    fn rand_hpd(n: usize, rng: &mut impl Rng) -> CMat {
        let a = CMat::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        a.matmul(&a.adjoint()).load_diagonal(0.1)
    }

    fn spec_from(frames: Vec<Vec<Complex64>>) -> Spectrogram {
        let ch = frames[0].len();
        let t = frames.len();
        let p = FrameParams::new(2, 16000);
        let data = Array3::from_shape_fn((ch, 2, t), |(l, k, i)| if k == 0 { frames[i][l] } else { zero() });
        Spectrogram::new(data, p).unwrap()
    }

    fn close(a: &CMat, b: &CMat, tol: f64) -> bool {
        a.sub(b).frobenius_norm() <= tol * b.frobenius_norm().max(1.0)
    }

    #[test]
    fn constant_frames_reach_outer_product() {
        let v = vec![c(1.0, 0.5), c(-0.3, 2.0)];
        let s = spec_from(vec![v.clone(); 50]);
        let phi = recursive_cov(&s, 0.95).unwrap();
        assert!(close(phi.at(0, 49), &CMat::outer(&v), 1e-12));
    }

    #[test]
    fn lambda_near_one_keeps_first_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames: Vec<_> = (0..5).map(|_| rand_vec(2, &mut rng)).collect();
        let s = spec_from(frames.clone());
        let phi = recursive_cov(&s, 1.0 - 1e-9).unwrap();
        assert!(close(phi.at(0, 4), &CMat::outer(&frames[0]), 1e-7));
    }

    #[test]
    fn recursion_matches_unrolled_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames: Vec<_> = (0..30).map(|_| rand_vec(2, &mut rng)).collect();
        let lam: f64 = 0.95;
        let phi = recursive_cov(&spec_from(frames.clone()), lam).unwrap();
        for i in [0, 1, 7, 29] {
            let mut expect = CMat::outer(&frames[0]).scale(lam.powi(i as i32));
            for j in 1..=i {
                expect = expect.axpby(1.0, &CMat::outer(&frames[j]), (1.0 - lam) * lam.powi((i - j) as i32));
            }
            assert!(close(phi.at(0, i), &expect, 1e-12), "frame {i}");
        }
    }

    #[test]
    fn lambda_outside_unit_interval_rejected() {
        let s = spec_from(vec![vec![c(1.0, 0.0)]; 3]);
        assert!(recursive_cov(&s, 1.0).is_err());
        assert!(recursive_cov(&s, 0.0).is_err());
    }

    fn field_of(m: CMat) -> CovarianceField {
        let n = m.rows();
        CovarianceField {
            bins: 1,
            frames: 1,
            channels: n,
            lambda: 0.95,
            data: vec![m],
        }
    }

    #[test]
    fn rank_one_speech_gives_its_direction() {
        let a = vec![c(0.5, 0.1), c(-0.2, 0.7), c(0.3, -0.4)];
        let s = field_of(CMat::outer(&a));
        let v = field_of(CMat::identity(3));
        let d = estimate_steering(&s, &v, SteeringMethod::SpeechCovariance).unwrap();
        let expect = anchor_to_reference(&a);
        let got = d.vectors.at(0, 0);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).norm() < 1e-10);
        }
        assert_eq!(d.degenerate, 0);
    }

    #[test]
    fn identity_pair_is_degenerate() {
        let d = estimate_steering(&field_of(CMat::identity(3)), &field_of(CMat::identity(3)), SteeringMethod::SpeechCovariance)
            .unwrap();
        assert_eq!(d.degenerate, 1);
        assert_eq!(d.vectors.at(0, 0), vec![c(1.0, 0.0), zero(), zero()]);
    }

    #[test]
    fn anechoic_steering_matches_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 16000;
        let white = |rng: &mut ChaCha8Rng| MultiWave::mono(16000, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let array = probe_array(3, 0.1);
        let target = anechoic_probe(&array, 0.0, 1.0, &white(&mut rng)).unwrap();
        let noise = anechoic_probe(&array, 120.0, 2.0, &white(&mut rng)).unwrap();
        let p = FrameParams::default();
        let (ts, ns) = (analyze(&target, p).unwrap(), analyze(&noise, p).unwrap());
        let phi_s = recursive_cov(&ts, 0.95).unwrap();
        let phi_v = recursive_cov(&ns, 0.95).unwrap();
        let d = estimate_steering(&phi_s, &phi_v, SteeringMethod::SpeechCovariance).unwrap();

        let src = array.point_at(0.0, 1.0);
        let mics = array.mic_positions();
        let r0 = crate::roomsim::rir::distance(src, mics[0]);
        let i = ts.frames() - 1;
        let mut worst = 0.0f64;
        // Above 7 kHz the simulator's interpolation filter rolls off.
        for k in 5..=224 {
            let f = p.bin_frequency(k);
            let est = d.vectors.at(k, i);
            for (l, m) in mics.iter().enumerate().skip(1) {
                let tau = (crate::roomsim::rir::distance(src, *m) - r0) / SPEED_OF_SOUND;
                let truth = -2.0 * std::f64::consts::PI * f * tau;
                let got = (est[l] / est[0]).arg();
                let err = (got - truth + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
                worst = worst.max(err.abs().to_degrees());
            }
        }
        assert!(worst < 5.0, "worst phase error {worst}°");
    }

    #[test]
    fn mvdr_identity_noise() {
        let h = mvdr_weights(&CMat::identity(3), &[c(1.0, 0.0), zero(), zero()]).unwrap();
        assert_eq!(h, vec![c(1.0, 0.0), zero(), zero()]);
    }

    #[test]
    fn mvdr_closed_form_example() {
        let d = [c(1.0 / 2f64.sqrt(), 0.0), c(1.0 / 2f64.sqrt(), 0.0)];
        let h = mvdr_weights(&CMat::from_diag(&[2.0, 1.0]), &d).unwrap();
        let k = 1.0 / (2f64.sqrt() * 0.75);
        assert!((h[0] - c(0.5 * k, 0.0)).norm() < 1e-12);
        assert!((h[1] - c(k, 0.0)).norm() < 1e-12);
        assert!((h[0].re - 0.4714).abs() < 1e-4 && (h[1].re - 0.9428).abs() < 1e-4);
        assert!((inner(&h, &d) - 1.0).norm() < 1e-12);
        // Numeric constrained minimization over g = (a, (1 − a/√2)·√2).
        let cost = |a: f64| {
            let b = (1.0 - a / 2f64.sqrt()) * 2f64.sqrt();
            2.0 * a * a + b * b
        };
        let best = (0..=20000).map(|i| i as f64 * 1e-4).min_by(|x, y| cost(*x).total_cmp(&cost(*y))).unwrap();
        assert!((best - h[0].re).abs() < 2e-4);
    }

    #[test]
    fn mvdr_beats_random_distortionless_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = rand_hpd(4, &mut rng);
        let d = rand_vec(4, &mut rng);
        let h = mvdr_weights(&phi, &d).unwrap();
        let power = |g: &[Complex64]| inner(g, &phi.mul_vec(g)).re;
        let best = power(&h);
        for _ in 0..1000 {
            let g = rand_vec(4, &mut rng);
            let gd = inner(&g, &d);
            let g: Vec<Complex64> = g.iter().map(|z| z / gd.conj()).collect();
            assert!((inner(&g, &d) - 1.0).norm() < 1e-9);
            assert!(power(&g) >= best * (1.0 - 1e-12));
        }
    }

    #[test]
    fn delay_and_sum_examples() {
        assert_eq!(delay_and_sum_weights(&[c(1.0, 0.0), zero()]).unwrap(), vec![c(1.0, 0.0), zero()]);
        let d = [c(1.0, 0.0), c(0.0, 1.0), Complex64::from_polar(1.0, 0.7)];
        let h = delay_and_sum_weights(&d).unwrap();
        for (a, b) in h.iter().zip(&d) {
            assert!((a - b / 3.0).norm() < 1e-15);
        }
        assert!(delay_and_sum_weights(&[zero(), zero()]).is_err());
    }

    #[test]
    fn delay_and_sum_is_mvdr_for_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = rand_vec(3, &mut rng);
        let a = delay_and_sum_weights(&d).unwrap();
        let b = mvdr_weights(&CMat::identity(3), &d).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn singular_noise_gets_loaded_once() {
        let v = vec![c(1.0, 0.0), c(0.5, 0.5)];
        let phi = CMat::outer(&v);
        let d = [c(0.0, 1.0), c(1.0, 0.0)];
        let h = mvdr_weights(&phi, &d).unwrap();
        assert!((inner(&h, &d) - 1.0).norm() < 1e-10);
        assert!(mvdr_weights(&CMat::zeros(2, 2), &d).is_err());
    }

    #[test]
    fn apply_filter_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = FrameParams::new(8, 16000);
        let y1 = Spectrogram::new(Array3::from_shape_fn((3, 5, 4), |_| c(rng.gen(), rng.gen())), p).unwrap();
        let y2 = Spectrogram::new(Array3::from_shape_fn((3, 5, 4), |_| c(rng.gen(), rng.gen())), p).unwrap();
        let e1 = VectorField::constant(5, 4, &[c(1.0, 0.0), zero(), zero()]);
        assert_eq!(apply_filter(&e1, &y1).unwrap().reference(), y1.reference());
        let z = VectorField::zeros(5, 4, 3);
        assert!(apply_filter(&z, &y1).unwrap().data.iter().all(|v| *v == zero()));
        let h = VectorField {
            data: Array3::from_shape_fn((5, 4, 3), |_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))),
        };
        let (a, b) = (c(0.3, -1.2), c(2.0, 0.5));
        let combo = Spectrogram::new(&y1.data * a + &y2.data * b, p).unwrap();
        let lhs = apply_filter(&h, &combo).unwrap();
        let rhs = &apply_filter(&h, &y1).unwrap().data * a + &apply_filter(&h, &y2).unwrap().data * b;
        for (x, y) in lhs.data.iter().zip(rhs.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
        assert!(apply_filter(&VectorField::zeros(5, 4, 2), &y1).is_err());
    }

    proptest! {
        #[test]
        fn mvdr_is_distortionless(seed in any::<u64>(), n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = rand_hpd(n, &mut rng);
            let d = rand_vec(n, &mut rng);
            let h = mvdr_weights(&phi, &d).unwrap();
            prop_assert!((inner(&h, &d) - 1.0).norm() < 1e-10);
            // MVDR output noise never exceeds delay-and-sum output noise.
            let ds = delay_and_sum_weights(&d).unwrap();
            let p = |g: &[Complex64]| inner(g, &phi.mul_vec(g)).re;
            prop_assert!(p(&h) <= p(&ds) * (1.0 + 1e-10));
        }

        #[test]
        fn recursive_cov_stays_hermitian_psd(seed in any::<u64>(), lam in 0.05f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<_> = (0..20).map(|_| rand_vec(3, &mut rng)).collect();
            let phi = recursive_cov(&spec_from(frames), lam).unwrap();
            for i in 0..20 {
                let m = phi.at(0, i);
                prop_assert_eq!(m.hermitian_asymmetry(), 0.0);
                let (vals, _) = crate::numerics::herm_eig(m).unwrap();
                prop_assert!(vals[0] >= -1e-10 * m.frobenius_norm().max(1.0));
            }
        }
    }
}
