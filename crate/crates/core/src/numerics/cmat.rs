//! Small dense complex matrices and the Hermitian kernels built on them.
//!
//! Everything here is sized for microphone-array work (a handful of
//! channels), so the algorithms favour robustness over asymptotics: cyclic
//! Jacobi for the Hermitian eigenproblem and Cholesky for positive-definite
//! solves and generalized problems.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;
const HERMITIAN_TOL: f64 = 1e-12;

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// `v vᴴ`.
    pub fn outer(v: &[Complex64]) -> Self {
        Self::from_fn(v.len(), v.len(), |r, c| v[r] * v[c].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, other: &CMat) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self[(r, c)] * v[c]).sum())
            .collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// `self · a + other · b`, elementwise.
    pub fn axpby(&self, a: f64, other: &CMat, b: f64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| x * a + y * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &CMat) -> Self {
        self.axpby(1.0, other, -1.0)
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest `|a_ij − conj(a_ji)|`.
    pub fn hermitian_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in r..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }

    fn check_hermitian(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::Shape(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !self.is_finite() {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        let asym = self.hermitian_asymmetry();
        if asym > HERMITIAN_TOL * self.frobenius_norm().max(f64::MIN_POSITIVE) {
            return Err(Error::NotHermitian { asymmetry: asym });
        }
        Ok(())
    }

    /// Adds `load` to every diagonal entry.
    pub fn load_diagonal(&self, load: f64) -> Self {
        let mut m = self.clone();
        for i in 0..m.rows.min(m.cols) {
            m[(i, i)] += load;
        }
        m
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `aᴴ b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi rotations.
///
/// Eigenvalues come back in ascending order; column `j` of the returned
/// matrix is the eigenvector belonging to eigenvalue `j`.
pub fn herm_eig(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    a.check_hermitian()?;
    let n = a.rows();
    let mut m = a.clone();
    let mut v = CMat::identity(n);
    let norm = m.frobenius_norm();

    let off_norm = |m: &CMat| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += m[(p, q)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&m) <= 1e-15 * norm {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let b = apq.norm();
                if b == 0.0 {
                    continue;
                }
                let phase = apq / b;
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let theta = (aqq - app) / (2.0 * b);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // U restricted to (p, q): phase alignment of q followed by a real rotation.
                let u_pp = Complex64::new(c, 0.0);
                let u_pq = Complex64::new(s, 0.0);
                let u_qp = -phase.conj() * s;
                let u_qq = phase.conj() * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = mkp * u_pp + mkq * u_qp;
                    m[(k, q)] = mkp * u_pq + mkq * u_qq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = u_pp.conj() * mpk + u_qp.conj() * mqk;
                    m[(q, k)] = u_pq.conj() * mpk + u_qq.conj() * mqk;
                }
                m[(p, q)] = Complex64::new(0.0, 0.0);
                m[(q, p)] = Complex64::new(0.0, 0.0);
                m[(p, p)].im = 0.0;
                m[(q, q)].im = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * u_pp + vkq * u_qp;
                    v[(k, q)] = vkp * u_pq + vkq * u_qq;
                }
            }
        }
    }
    if !converged {
        let off = off_norm(&m);
        if off > 1e-15 * norm {
            return Err(Error::NoConvergence {
                sweeps: JACOBI_MAX_SWEEPS,
                off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.total_cmp(&m[(j, j)].re));
    let values = order.iter().map(|&i| m[(i, i)].re).collect();
    let vectors = CMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᴴ`.
pub fn cholesky(a: &CMat) -> Result<CMat> {
    a.check_hermitian()?;
    let n = a.rows();
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
fn forward_sub(l: &CMat, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `Lᴴ x = b` for lower-triangular `L`.
fn backward_sub_adj(l: &CMat, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[(k, i)].conj() * x[k];
        }
        x[i] = s / l[(i, i)].conj();
    }
    x
}

/// Solves `A x = b` for Hermitian positive-definite `A` without forming an inverse.
pub fn solve_hpd(a: &CMat, b: &[Complex64]) -> Result<Vec<Complex64>> {
    if b.len() != a.rows() {
        return Err(Error::Shape(format!(
            "rhs has length {}, matrix is {}x{}",
            b.len(),
            a.rows(),
            a.cols()
        )));
    }
    let l = cholesky(a)?;
    Ok(backward_sub_adj(&l, &forward_sub(&l, b)))
}

/// Principal generalized eigenvector of a Hermitian pair.
#[derive(Debug, Clone)]
pub struct PrincipalGevd {
    /// Unit norm; first non-negligible entry real and positive.
    pub vector: Vec<Complex64>,
    pub eigenvalue: f64,
    /// The two largest generalized eigenvalues coincide, so the principal
    /// direction is not unique; `vector` is then the first basis vector.
    pub degenerate: bool,
}

/// Maximizer of the Rayleigh quotient `wᴴAw / wᴴBw`.
///
/// Solved by whitening with the Cholesky factor of `B` and running the
/// standard Hermitian eigenproblem on `L⁻¹ A L⁻ᴴ`.
pub fn gevd_principal(a: &CMat, b: &CMat) -> Result<PrincipalGevd> {
    a.check_hermitian()?;
    if a.rows() != b.rows() || !b.is_square() {
        return Err(Error::Shape("generalized eigenproblem needs equally sized square matrices".into()));
    }
    let n = a.rows();
    let l = cholesky(b)?;

    // Y = L⁻¹ A, then C = Y L⁻ᴴ = (L⁻¹ Yᴴ)ᴴ.
    let mut y = CMat::zeros(n, n);
    for c in 0..n {
        let col = forward_sub(&l, &a.column(c));
        for r in 0..n {
            y[(r, c)] = col[r];
        }
    }
    let yh = y.adjoint();
    let mut z = CMat::zeros(n, n);
    for c in 0..n {
        let col = forward_sub(&l, &yh.column(c));
        for r in 0..n {
            z[(r, c)] = col[r];
        }
    }
    let c_mat = z.adjoint();
    let c_mat = c_mat.axpby(0.5, &c_mat.adjoint(), 0.5);

    let (values, vectors) = herm_eig(&c_mat)?;
    let top = values[n - 1];
    let degenerate = n >= 2 && (top - values[n - 2]) <= 1e-12 * top.abs();
    if degenerate {
        let mut e1 = vec![Complex64::new(0.0, 0.0); n];
        e1[0] = Complex64::new(1.0, 0.0);
        return Ok(PrincipalGevd {
            vector: e1,
            eigenvalue: top,
            degenerate,
        });
    }

    let w = backward_sub_adj(&l, &vectors.column(n - 1));
    Ok(PrincipalGevd {
        vector: normalize_phase(&w),
        eigenvalue: top,
        degenerate,
    })
}

/// Scales `v` to unit norm and rotates it so its first non-negligible entry
/// is real and positive.
pub fn normalize_phase(v: &[Complex64]) -> Vec<Complex64> {
    let norm = vec_norm(v);
    if norm == 0.0 {
        return v.to_vec();
    }
    let anchor = v
        .iter()
        .find(|z| z.norm() > 1e-12 * norm)
        .copied()
        .unwrap_or(Complex64::new(1.0, 0.0));
    let rot = anchor.conj() / anchor.norm();
    v.iter().map(|z| z * rot / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(n: usize, rng: &mut impl Rng) -> CMat {
        let g = CMat::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        g.axpby(0.5, &g.adjoint(), 0.5)
    }

    fn random_hpd(n: usize, rng: &mut impl Rng) -> CMat {
        let g = CMat::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        g.matmul(&g.adjoint()).load_diagonal(0.1)
    }

    fn random_unit(n: usize, rng: &mut impl Rng) -> Vec<Complex64> {
        let v: Vec<_> = (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let nrm = vec_norm(&v);
        v.iter().map(|z| z / nrm).collect()
    }

    fn rayleigh(a: &CMat, b: &CMat, w: &[Complex64]) -> f64 {
        inner(w, &a.mul_vec(w)).re / inner(w, &b.mul_vec(w)).re
    }

    #[test]
    fn eig_identity() {
        let (vals, vecs) = herm_eig(&CMat::identity(2)).unwrap();
        assert_eq!(vals, vec![1.0, 1.0]);
        let gram = vecs.adjoint().matmul(&vecs);
        assert!(gram.sub(&CMat::identity(2)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn eig_diagonal() {
        let (vals, vecs) = herm_eig(&CMat::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(vals, vec![1.0, 3.0]);
        assert_eq!(vecs, CMat::identity(2));
    }

    #[test]
    fn eig_reconstruction_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=8 {
            for _ in 0..20 {
                let a = random_hermitian(n, &mut rng);
                let (vals, v) = herm_eig(&a).unwrap();
                assert!(vals.windows(2).all(|w| w[0] <= w[1]));
                let recon = v.matmul(&CMat::from_diag(&vals)).matmul(&v.adjoint());
                assert!(recon.sub(&a).frobenius_norm() < 1e-9 * a.frobenius_norm());
                let gram = v.adjoint().matmul(&v);
                assert!(gram.sub(&CMat::identity(n)).frobenius_norm() < 1e-9);
                for j in 0..n {
                    let col = v.column(j);
                    let av = a.mul_vec(&col);
                    let err: f64 = av
                        .iter()
                        .zip(&col)
                        .map(|(x, y)| (x - y * vals[j]).norm_sqr())
                        .sum::<f64>()
                        .sqrt();
                    assert!(err < 1e-9 * a.frobenius_norm());
                }
            }
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut a = CMat::identity(2);
        a[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(herm_eig(&a), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn gevd_trivial_cases() {
        let g = gevd_principal(&CMat::from_diag(&[2.0, 1.0]), &CMat::identity(2)).unwrap();
        assert!((g.vector[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!(g.vector[1].norm() < 1e-12);

        let g = gevd_principal(&CMat::identity(2), &CMat::from_diag(&[1.0, 4.0])).unwrap();
        assert!((g.vector[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((g.eigenvalue - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gevd_grid_oracle_two_by_two() {
        // Exhaustive scan of real unit directions for A = I, B = diag(1, 4).
        let a = CMat::identity(2);
        let b = CMat::from_diag(&[1.0, 4.0]);
        let mut best = (f64::MIN, 0.0);
        for step in 0..3600 {
            let t = step as f64 * std::f64::consts::PI / 3600.0;
            let w = [c(t.cos(), 0.0), c(t.sin(), 0.0)];
            let q = rayleigh(&a, &b, &w);
            if q > best.0 {
                best = (q, t);
            }
        }
        assert!((best.0 - 1.0).abs() < 1e-12 && best.1.abs() < 1e-12);
        let g = gevd_principal(&a, &b).unwrap();
        assert!((rayleigh(&a, &b, &g.vector) - best.0).abs() < 1e-12);
    }

    #[test]
    fn gevd_monte_carlo_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_hermitian(3, &mut rng);
            let b = random_hpd(3, &mut rng);
            let g = gevd_principal(&a, &b).unwrap();
            let q = rayleigh(&a, &b, &g.vector);
            for _ in 0..1000 {
                let w = random_unit(3, &mut rng);
                assert!(rayleigh(&a, &b, &w) <= q + 1e-12);
            }
            let aw = a.mul_vec(&g.vector);
            let bw = b.mul_vec(&g.vector);
            let resid: Vec<_> = aw.iter().zip(&bw).map(|(x, y)| x - y * g.eigenvalue).collect();
            assert!(vec_norm(&resid) <= 1e-8 * vec_norm(&aw).max(1.0));
            assert!((vec_norm(&g.vector) - 1.0).abs() < 1e-12);
            assert!(g.vector[0].im.abs() < 1e-12 && g.vector[0].re > 0.0);
        }
    }

    #[test]
    fn gevd_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_hermitian(4, &mut rng);
            let b = random_hpd(4, &mut rng);
            let w1 = gevd_principal(&a, &b).unwrap().vector;
            let w2 = gevd_principal(&a.scale(7.5), &b).unwrap().vector;
            let diff: Vec<_> = w1.iter().zip(&w2).map(|(x, y)| x - y).collect();
            assert!(vec_norm(&diff) < 1e-10);
        }
    }

    #[test]
    fn gevd_names_failed_pivot() {
        let b = CMat::from_diag(&[1.0, 0.0]);
        match gevd_principal(&CMat::identity(2), &b) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gevd_degenerate_identity_pair() {
        let g = gevd_principal(&CMat::identity(3), &CMat::identity(3)).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.vector[0], c(1.0, 0.0));
    }

    #[test]
    fn solve_examples() {
        let b = vec![c(1.0, 2.0), c(-3.0, 0.5)];
        assert_eq!(solve_hpd(&CMat::identity(2), &b).unwrap(), b);
        let x = solve_hpd(&CMat::from_diag(&[2.0, 4.0]), &[c(2.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15 && (x[1] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn solve_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_hpd(5, &mut rng);
            let b = random_unit(5, &mut rng);
            let x = solve_hpd(&a, &b).unwrap();
            let ax = a.mul_vec(&x);
            let r: Vec<_> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
            assert!(vec_norm(&r) <= 1e-10 * (a.frobenius_norm() * vec_norm(&x) + vec_norm(&b)));
        }
    }

    #[test]
    fn solve_rejects_indefinite() {
        let a = CMat::from_diag(&[1.0, -1.0]);
        assert!(matches!(
            solve_hpd(&a, &[c(1.0, 0.0), c(1.0, 0.0)]),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }
}
