//! Dense complex matrix helpers shared by the mesh model and the tasks.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;
pub type RMat = DMatrix<f64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const J: Complex64 = Complex64::new(0.0, 1.0);

pub fn identity(k: usize) -> CMat {
    CMat::identity(k, k)
}

/// Column vector `K x 1` from a slice.
pub fn column(values: &[Complex64]) -> CMat {
    CMat::from_column_slice(values.len(), 1, values)
}

pub fn real_to_complex(m: &RMat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// `sum_ij Re(conj(a_ij) * b_ij)`, the real inner product that pairs a
/// cotangent with a tangent.
pub fn re_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn frobenius_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// `||U^H U - I||_F`.
pub fn unitarity_error(u: &CMat) -> f64 {
    let k = u.ncols();
    let g = u.adjoint() * u;
    frobenius_sq(&(g - identity(k))).sqrt()
}

/// Random unitary from QR of a complex Gaussian matrix with the phase
/// of R's diagonal folded back in (Haar distributed).
pub fn random_unitary<R: Rng + ?Sized>(k: usize, rng: &mut R) -> CMat {
    let g = CMat::from_fn(k, k, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..k {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Random `m x n` matrix `U diag(s) V` with the given singular values.
pub fn random_with_singular_values<R: Rng + ?Sized>(m: usize, n: usize, singular: &[f64], rng: &mut R) -> CMat {
    let u = random_unitary(m, rng);
    let v = random_unitary(n, rng);
    let mut s = CMat::zeros(m, n);
    for (i, &sv) in singular.iter().enumerate().take(m.min(n)) {
        s[(i, i)] = Complex64::new(sv, 0.0);
    }
    u * s * v
}
