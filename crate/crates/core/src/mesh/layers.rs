use crate::error::{PtcError, Result};
use crate::linalg::{real_to_complex, CMat, RMat, J};
use crate::pdk::{T_BAR, T_COUPLER};
use crate::perm::{init_smoothed_identity, reparametrize, Permutation, Reparametrized};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

fn check_rows(x: &CMat, k: usize) -> Result<()> {
    if x.nrows() != k {
        return Err(PtcError::Dimension { expected: k, actual: x.nrows() });
    }
    Ok(())
}

/// A full column of `K` phase shifters, `diag(exp(-j phi))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseColumn {
    pub phi: Vec<f64>,
}

impl PhaseColumn {
    pub fn zeros(k: usize) -> Self {
        Self { phi: vec![0.0; k] }
    }

    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        Self { phi: (0..k).map(|_| rng.random_range(-PI..PI)).collect() }
    }

    pub fn apply(&self, x: &CMat) -> Result<CMat> {
        check_rows(x, self.phi.len())?;
        Ok(apply_phases(&self.phi, x))
    }
}

pub(crate) fn apply_phases(phi: &[f64], x: &CMat) -> CMat {
    let mut y = x.clone();
    for (i, &p) in phi.iter().enumerate() {
        let f = Complex64::from_polar(1.0, -p);
        y.row_mut(i).iter_mut().for_each(|z| *z *= f);
    }
    y
}

/// Given the layer output `y` and its cotangent, returns the input
/// cotangent and `dL/dphi`.
pub(crate) fn phases_vjp(phi: &[f64], y: &CMat, grad_y: &CMat) -> (CMat, Vec<f64>) {
    let mut gx = grad_y.clone();
    let mut gphi = vec![0.0; phi.len()];
    for (i, &p) in phi.iter().enumerate() {
        let f = Complex64::from_polar(1.0, p);
        let mut acc = 0.0;
        for c in 0..y.ncols() {
            // dY/dphi = -j Y
            acc += (grad_y[(i, c)].conj() * (-J * y[(i, c)])).re;
            gx[(i, c)] *= f;
        }
        gphi[i] = acc;
    }
    (gx, gphi)
}

/// Slope of the binarizer's straight-through surrogate.
pub const STE_SLOPE: f64 = (2.0 - SQRT_2) / 4.0;

/// Binarizes a coupler latent: negative places a 50:50 coupler, nonnegative
/// leaves a bare waveguide.
pub fn quantize_coupler(t_latent: f64) -> f64 {
    let sign = if t_latent < 0.0 { -1.0 } else { 1.0 };
    (sign + 1.0) * STE_SLOPE + FRAC_1_SQRT_2
}

/// Straight-through backward: scale by the surrogate slope and clip.
pub fn ste_backward(grad_t_q: f64) -> f64 {
    (grad_t_q * STE_SLOPE).clamp(-1.0, 1.0)
}

/// A column of 2x2 directional couplers starting at waveguide `offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplerColumn {
    pub offset: usize,
    pub t_latent: Vec<f64>,
}

impl CouplerColumn {
    pub fn slots(k: usize, offset: usize) -> usize {
        k.saturating_sub(offset) / 2
    }

    /// Interleaved placement: the `b`-th block (zero-based) starts at
    /// waveguide 0 when `b + 1` is odd and at waveguide 1 when it is even.
    pub fn offset_for_block(index: usize) -> usize {
        usize::from((index + 1).is_multiple_of(2))
    }

    pub fn new(k: usize, offset: usize, t_latent: Vec<f64>) -> Result<Self> {
        if offset > 1 {
            return Err(PtcError::Domain(format!("coupler offset must be 0 or 1, got {offset}")));
        }
        let n = Self::slots(k, offset);
        if t_latent.len() != n {
            return Err(PtcError::Dimension { expected: n, actual: t_latent.len() });
        }
        Ok(Self { offset, t_latent })
    }

    pub fn random<R: Rng + ?Sized>(k: usize, offset: usize, spread: f64, rng: &mut R) -> Self {
        let n = Self::slots(k, offset);
        Self { offset, t_latent: (0..n).map(|_| rng.random_range(-spread..spread)).collect() }
    }

    /// Fixed placement: `true` slots hold a coupler.
    pub fn from_mask(offset: usize, mask: &[bool]) -> Self {
        Self { offset, t_latent: mask.iter().map(|&on| if on { -1.0 } else { 1.0 }).collect() }
    }

    pub fn transmissions(&self) -> Vec<f64> {
        self.t_latent.iter().map(|&t| quantize_coupler(t)).collect()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.t_latent.iter().map(|&t| t < 0.0).collect()
    }

    pub fn count(&self) -> usize {
        self.mask().iter().filter(|&&b| b).count()
    }

    /// Physical transfer. With `binarize` the latents go through the
    /// quantizer, otherwise they are used as transmissions in `[0, 1]`.
    pub fn apply(&self, x: &CMat, binarize: bool) -> Result<CMat> {
        let k = x.nrows();
        if Self::slots(k, self.offset) != self.t_latent.len() {
            return Err(PtcError::Dimension { expected: Self::slots(k, self.offset), actual: self.t_latent.len() });
        }
        let t = if binarize {
            self.transmissions()
        } else {
            if let Some(bad) = self.t_latent.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(PtcError::Domain(format!("transmission {bad} outside [0, 1]")));
            }
            self.t_latent.clone()
        };
        Ok(apply_couplers_physical(self.offset, &t, x))
    }
}

/// `[[t, j sqrt(1-t^2)], [j sqrt(1-t^2), t]]` on each adjacent pair.
pub fn apply_couplers_physical(offset: usize, t: &[f64], x: &CMat) -> CMat {
    let mut y = x.clone();
    for (q, &tq) in t.iter().enumerate() {
        let (a, b) = (offset + 2 * q, offset + 2 * q + 1);
        let d = Complex64::new(tq, 0.0);
        let o = J * (1.0 - tq * tq).max(0.0).sqrt();
        for c in 0..x.ncols() {
            let (xa, xb) = (x[(a, c)], x[(b, c)]);
            y[(a, c)] = d * xa + o * xb;
            y[(b, c)] = o * xa + d * xb;
        }
    }
    y
}

/// Chord weight `c(t)`: 0 for a bare waveguide, 1 for a 50:50 coupler.
fn chord(t: f64) -> f64 {
    (T_BAR - t) / (T_BAR - T_COUPLER)
}

const CHORD_SLOPE: f64 = -1.0 / (T_BAR - T_COUPLER);

fn chord_entries(t: f64) -> (Complex64, Complex64) {
    let c = chord(t);
    (Complex64::new(1.0 + c * (T_COUPLER - 1.0), 0.0), J * (T_COUPLER * c))
}

/// Transfer interpolated linearly in `t` between the bar state and the
/// 50:50 coupler. Identical to the physical transfer at both binarized
/// values; in between it is the surrogate the straight-through gradient
/// differentiates (the physical transfer has an unbounded slope at `t = 1`).
pub fn apply_couplers_linearized(offset: usize, t_q: &[f64], x: &CMat) -> CMat {
    let mut y = x.clone();
    for (q, &tq) in t_q.iter().enumerate() {
        let (a, b) = (offset + 2 * q, offset + 2 * q + 1);
        let (d, o) = chord_entries(tq);
        for c in 0..x.ncols() {
            let (xa, xb) = (x[(a, c)], x[(b, c)]);
            y[(a, c)] = d * xa + o * xb;
            y[(b, c)] = o * xa + d * xb;
        }
    }
    y
}

/// Input cotangent and `dL/dt_q` of [`apply_couplers_linearized`].
pub fn couplers_linearized_vjp(offset: usize, t_q: &[f64], x: &CMat, grad_y: &CMat) -> (CMat, Vec<f64>) {
    let mut gx = grad_y.clone();
    let mut gt = vec![0.0; t_q.len()];
    let dd = Complex64::new(CHORD_SLOPE * (T_COUPLER - 1.0), 0.0);
    let dodt = J * (T_COUPLER * CHORD_SLOPE);
    for (q, &tq) in t_q.iter().enumerate() {
        let (a, b) = (offset + 2 * q, offset + 2 * q + 1);
        let (d, o) = chord_entries(tq);
        let mut acc = 0.0;
        for c in 0..x.ncols() {
            let (ga, gb) = (grad_y[(a, c)], grad_y[(b, c)]);
            let (xa, xb) = (x[(a, c)], x[(b, c)]);
            gx[(a, c)] = d.conj() * ga + o.conj() * gb;
            gx[(b, c)] = o.conj() * ga + d.conj() * gb;
            acc += (ga.conj() * (dd * xa + dodt * xb) + gb.conj() * (dodt * xa + dd * xb)).re;
        }
        gt[q] = acc;
    }
    (gx, gt)
}

/// Waveguide-crossing layer: a trainable relaxed permutation, or a legal
/// one once legalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationLayer {
    pub p_raw: RMat,
    pub legal: Option<Permutation>,
}

/// Current crossing matrix of a layer.
#[derive(Clone, Debug)]
pub enum RelaxedPerm {
    Legal(RMat),
    Relaxed(Reparametrized),
}

impl RelaxedPerm {
    pub fn matrix(&self) -> &RMat {
        match self {
            Self::Legal(m) => m,
            Self::Relaxed(r) => &r.p_tilde,
        }
    }

    pub fn is_legal(&self) -> bool {
        matches!(self, Self::Legal(_))
    }
}

impl PermutationLayer {
    pub fn smoothed_identity(k: usize) -> Result<Self> {
        Ok(Self { p_raw: init_smoothed_identity(k)?, legal: None })
    }

    pub fn fixed(perm: Permutation) -> Self {
        Self { p_raw: perm.to_matrix(), legal: Some(perm) }
    }

    pub fn k(&self) -> usize {
        self.p_raw.nrows()
    }

    pub fn p_tilde(&self, epsilon: f64) -> Result<RelaxedPerm> {
        match &self.legal {
            Some(p) => Ok(RelaxedPerm::Legal(p.to_matrix())),
            None => reparametrize(&self.p_raw, epsilon).map(RelaxedPerm::Relaxed),
        }
    }

    /// `y = P~ x` with the current crossing matrix.
    pub fn apply(&self, x: &CMat, epsilon: f64) -> Result<CMat> {
        check_rows(x, self.k())?;
        let p = self.p_tilde(epsilon)?;
        Ok(real_to_complex(p.matrix()) * x)
    }
}

/// Input cotangent and `dL/dP~` of `y = P~ x` for real `P~`.
pub fn cr_vjp(p: &RMat, x: &CMat, grad_y: &CMat) -> (CMat, RMat) {
    let gx = real_to_complex(&p.transpose()) * grad_y;
    let gp = (grad_y * x.adjoint()).map(|z| z.re);
    (gx, gp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{column, frobenius_sq, ONE, ZERO};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_cmat<R: Rng>(k: usize, n: usize, rng: &mut R) -> CMat {
        CMat::from_fn(k, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn phase_column_examples() {
        let x = column(&[ONE, Complex64::new(0.3, -0.2), ZERO]);
        assert_eq!(PhaseColumn::zeros(3).apply(&x).unwrap(), x);
        let y = PhaseColumn { phi: vec![PI, 0.0, 0.0] }.apply(&column(&[ONE, ZERO, ZERO])).unwrap();
        assert!((y[(0, 0)] + ONE).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_cmat(6, 1, &mut rng);
        let y = PhaseColumn::random(6, &mut rng).apply(&x).unwrap();
        for i in 0..6 {
            assert!((y[(i, 0)].norm() - x[(i, 0)].norm()).abs() < 1e-12);
        }
        assert!(PhaseColumn::zeros(2).apply(&x).is_err());
    }

    #[test]
    fn coupler_column_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_cmat(5, 1, &mut rng);
        let bar = CouplerColumn::new(5, 0, vec![1.0, 1.0]).unwrap();
        assert_eq!(bar.apply(&x, false).unwrap(), x);
        let half = CouplerColumn::new(2, 0, vec![FRAC_1_SQRT_2]).unwrap();
        let y = half.apply(&column(&[ONE, ZERO]), false).unwrap();
        assert!((y[(0, 0)] - Complex64::new(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        assert!((y[(1, 0)] - Complex64::new(0.0, FRAC_1_SQRT_2)).norm() < 1e-15);
        for t in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let col = CouplerColumn::new(5, 1, vec![t, 1.0 - t]).unwrap();
            let y = col.apply(&x, false).unwrap();
            assert!((frobenius_sq(&y) - frobenius_sq(&x)).abs() < 1e-12);
        }
        // last channel of an odd mesh passes through
        let y = CouplerColumn::new(5, 0, vec![0.3, 0.6]).unwrap().apply(&x, false).unwrap();
        assert_eq!(y[(4, 0)], x[(4, 0)]);
        assert!(CouplerColumn::new(5, 0, vec![1.0]).is_err());
    }

    #[test]
    fn offsets_interleave() {
        assert_eq!(CouplerColumn::offset_for_block(0), 0);
        assert_eq!(CouplerColumn::offset_for_block(1), 1);
        assert_eq!(CouplerColumn::slots(8, 0), 4);
        assert_eq!(CouplerColumn::slots(8, 1), 3);
        assert_eq!(CouplerColumn::slots(7, 1), 3);
    }

    #[test]
    fn quantizer_and_ste() {
        assert_eq!(quantize_coupler(-0.3), FRAC_1_SQRT_2);
        assert_eq!(quantize_coupler(0.7), 1.0);
        assert_eq!(quantize_coupler(0.0), 1.0);
        assert_eq!(ste_backward(100.0), 1.0);
        assert_eq!(ste_backward(-100.0), -1.0);
        assert!((ste_backward(2.0) - 2.0 * STE_SLOPE).abs() < 1e-15);
    }

    #[test]
    fn linearized_matches_physical_on_binarized_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_cmat(6, 3, &mut rng);
        let t = [FRAC_1_SQRT_2, 1.0, FRAC_1_SQRT_2];
        let a = apply_couplers_physical(0, &t, &x);
        let b = apply_couplers_linearized(0, &t, &x);
        assert!(frobenius_sq(&(a - b)) < 1e-28);
    }

    #[test]
    fn crossing_examples() {
        let layer = PermutationLayer::fixed(Permutation::new(vec![1, 0, 2]).unwrap());
        let x = column(&[Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0), Complex64::new(3.0, 0.0)]);
        let y = layer.apply(&x, 0.05).unwrap();
        assert_eq!(y[(0, 0)].re, 2.0);
        assert_eq!(y[(1, 0)].re, 1.0);
        let eye = PermutationLayer::fixed(Permutation::identity(3));
        assert_eq!(eye.apply(&x, 0.05).unwrap(), x);
        // a doubly stochastic matrix never grows the l1 norm of nonnegative input
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let relaxed = PermutationLayer::smoothed_identity(6).unwrap();
        for _ in 0..20 {
            let x = CMat::from_fn(6, 1, |_, _| Complex64::new(rng.random_range(0.0..1.0), 0.0));
            let y = relaxed.apply(&x, 0.05).unwrap();
            let l1 = |m: &CMat| m.iter().map(|z| z.re.abs()).sum::<f64>();
            assert!(l1(&y) <= l1(&x) + 1e-12);
        }
    }

    #[test]
    fn vjps_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 5;
        let x = rand_cmat(k, 2, &mut rng);
        let w = rand_cmat(k, 2, &mut rng);
        let loss = |y: &CMat| crate::linalg::re_inner(&w, y);
        let h = 1e-6;

        let phi: Vec<f64> = (0..k).map(|_| rng.random_range(-PI..PI)).collect();
        let y = apply_phases(&phi, &x);
        let (gx, gphi) = phases_vjp(&phi, &y, &w);
        for i in 0..k {
            let mut p = phi.clone();
            p[i] += h;
            let mut m = phi.clone();
            m[i] -= h;
            let fd = (loss(&apply_phases(&p, &x)) - loss(&apply_phases(&m, &x))) / (2.0 * h);
            assert!((fd - gphi[i]).abs() < 1e-8);
        }
        // input cotangent: L is linear in x, so <gx, x> == L
        assert!((crate::linalg::re_inner(&gx, &x) - loss(&y)).abs() < 1e-12);

        let t = [0.8, 0.75];
        let (gx, gt) = couplers_linearized_vjp(1, &t, &x, &w);
        for q in 0..2 {
            let mut p = t;
            p[q] += h;
            let mut m = t;
            m[q] -= h;
            let fd =
                (loss(&apply_couplers_linearized(1, &p, &x)) - loss(&apply_couplers_linearized(1, &m, &x))) / (2.0 * h);
            assert!((fd - gt[q]).abs() < 1e-8);
        }
        assert!((crate::linalg::re_inner(&gx, &x) - loss(&apply_couplers_linearized(1, &t, &x))).abs() < 1e-12);

        let p = RMat::from_fn(k, k, |_, _| rng.random_range(0.0..1.0));
        let (gx, gp) = cr_vjp(&p, &x, &w);
        let f = |p: &RMat| loss(&(real_to_complex(p) * &x));
        for i in 0..k {
            for j in 0..k {
                let mut a = p.clone();
                a[(i, j)] += h;
                let mut b = p.clone();
                b[(i, j)] -= h;
                assert!(((f(&a) - f(&b)) / (2.0 * h) - gp[(i, j)]).abs() < 1e-8);
            }
        }
        assert!((crate::linalg::re_inner(&gx, &x) - f(&p)).abs() < 1e-12);
    }
}
