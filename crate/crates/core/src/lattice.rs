//! Wave-vector lattice, dispersion relation and the free flow.
//!
//! Fields are stored densely over a rectangular box
//! `{ (n1, n2) : 1 <= |n1| <= N1, |n2| <= N2 }`. Modes with `n1 = 0` are not
//! part of the box at all. The storage order is chosen so that the index of
//! `-n` is `len - 1 - index(n)`.

use std::fmt;
use std::ops::Neg;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KpError, Result};

/// Fourier index `(n1, n2)` of a mode `e^{i(n1 x + n2 y)}` with `n1 != 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WaveVector {
    pub n1: i32,
    pub n2: i32,
}

impl WaveVector {
    pub fn new(n1: i32, n2: i32) -> Result<Self> {
        if n1 == 0 {
            return Err(KpError::ZeroFirstComponent { n1, n2 });
        }
        Ok(Self { n1, n2 })
    }

    /// `|n| = |n1| + |n2|`.
    pub fn l1_norm(self) -> f64 {
        (self.n1.abs() + self.n2.abs()) as f64
    }

    /// Sum of two wave vectors, `None` when the first component cancels.
    pub fn checked_add(self, other: WaveVector) -> Option<WaveVector> {
        WaveVector::new(self.n1 + other.n1, self.n2 + other.n2).ok()
    }

    pub fn checked_sub(self, other: WaveVector) -> Option<WaveVector> {
        self.checked_add(-other)
    }

    /// `n / 2` when both components are even.
    pub fn half(self) -> Option<WaveVector> {
        if self.n1 % 2 == 0 && self.n2 % 2 == 0 {
            WaveVector::new(self.n1 / 2, self.n2 / 2).ok()
        } else {
            None
        }
    }

    pub fn scaled(self, k: i32) -> Option<WaveVector> {
        WaveVector::new(self.n1 * k, self.n2 * k).ok()
    }
}

impl Neg for WaveVector {
    type Output = WaveVector;
    fn neg(self) -> WaveVector {
        WaveVector {
            n1: -self.n1,
            n2: -self.n2,
        }
    }
}

impl fmt::Display for WaveVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.n1, self.n2)
    }
}

/// Dispersion `omega_n = n1^3 - n2^2 / n1`.
pub fn omega(n: WaveVector) -> f64 {
    let n1 = n.n1 as f64;
    let n2 = n.n2 as f64;
    n1 * n1 * n1 - n2 * n2 / n1
}

/// Checked dispersion for raw integer pairs.
pub fn omega_checked(n1: i32, n2: i32) -> Result<f64> {
    WaveVector::new(n1, n2).map(omega)
}

/// Three-wave frequency `omega_k + omega_l - omega_n` for `k + l = n`.
pub fn delta(n: WaveVector, k: WaveVector, l: WaveVector) -> Result<f64> {
    let sum = (k.n1 + l.n1, k.n2 + l.n2);
    if sum != (n.n1, n.n2) {
        return Err(KpError::NotATriad { n, sum });
    }
    Ok(omega(k) + omega(l) - omega(n))
}

/// Rectangular, negation-symmetric truncation of `Z* x Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBox {
    pub n1_max: i32,
    pub n2_max: i32,
}

impl LatticeBox {
    pub fn new(n1_max: i32, n2_max: i32) -> Result<Self> {
        if n1_max < 1 || n2_max < 0 {
            return Err(KpError::InvalidParameter(format!(
                "lattice box needs N1 >= 1 and N2 >= 0, got ({n1_max}, {n2_max})"
            )));
        }
        Ok(Self { n1_max, n2_max })
    }

    /// Square box `max(|n1|, |n2|) <= n`.
    pub fn square(n: i32) -> Result<Self> {
        Self::new(n, n)
    }

    fn width(&self) -> usize {
        (2 * self.n2_max + 1) as usize
    }

    pub fn len(&self) -> usize {
        2 * self.n1_max as usize * self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, n: WaveVector) -> bool {
        n.n1 != 0 && n.n1.abs() <= self.n1_max && n.n2.abs() <= self.n2_max
    }

    pub fn index_of(&self, n: WaveVector) -> Option<usize> {
        if !self.contains(n) {
            return None;
        }
        let i1 = if n.n1 < 0 {
            n.n1 + self.n1_max
        } else {
            n.n1 + self.n1_max - 1
        } as usize;
        let i2 = (n.n2 + self.n2_max) as usize;
        Some(i1 * self.width() + i2)
    }

    pub fn mode(&self, index: usize) -> WaveVector {
        let w = self.width();
        let i1 = (index / w) as i32;
        let i2 = (index % w) as i32;
        let n1 = if i1 < self.n1_max {
            i1 - self.n1_max
        } else {
            i1 - self.n1_max + 1
        };
        WaveVector {
            n1,
            n2: i2 - self.n2_max,
        }
    }

    /// Index of `-n` given the index of `n`.
    #[inline]
    pub fn neg_index(&self, index: usize) -> usize {
        self.len() - 1 - index
    }

    pub fn modes(&self) -> impl Iterator<Item = WaveVector> + '_ {
        (0..self.len()).map(move |i| self.mode(i))
    }

    /// Modes with `n1 > 0`; one representative of each conjugate pair.
    pub fn positive_modes(&self) -> impl Iterator<Item = WaveVector> + '_ {
        self.modes().filter(|n| n.n1 > 0)
    }

    pub fn max_abs_omega(&self) -> f64 {
        self.modes().map(|n| omega(n).abs()).fold(0.0, f64::max)
    }

    /// Every `(n, k, l)` with `k + l = n` and all three in the box.
    pub fn triads(&self) -> impl Iterator<Item = (WaveVector, WaveVector, WaveVector)> + '_ {
        self.modes().flat_map(move |n| {
            self.modes().filter_map(move |k| {
                let l = n.checked_sub(k)?;
                self.contains(l).then_some((n, k, l))
            })
        })
    }
}

/// `omega(n)` tabulated over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionTable {
    lattice: LatticeBox,
    omega: Vec<f64>,
}

impl DispersionTable {
    pub fn new(lattice: LatticeBox) -> Self {
        let omega = lattice.modes().map(omega).collect();
        Self { lattice, omega }
    }

    pub fn lattice(&self) -> LatticeBox {
        self.lattice
    }

    #[inline]
    pub fn at(&self, index: usize) -> f64 {
        self.omega[index]
    }

    pub fn get(&self, n: WaveVector) -> Option<f64> {
        self.lattice.index_of(n).map(|i| self.omega[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.omega
    }
}

/// Complex Fourier coefficients over a lattice box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    lattice: LatticeBox,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(lattice: LatticeBox) -> Self {
        Self {
            lattice,
            coeffs: vec![Complex64::new(0.0, 0.0); lattice.len()],
        }
    }

    pub fn from_fn(lattice: LatticeBox, mut f: impl FnMut(WaveVector) -> Complex64) -> Self {
        let coeffs = lattice.modes().map(&mut f).collect();
        Self { lattice, coeffs }
    }

    /// Builds a field from raw coefficients in box storage order.
    pub fn from_vec(lattice: LatticeBox, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(KpError::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                lattice.len(),
                coeffs.len()
            )));
        }
        Ok(Self { lattice, coeffs })
    }

    /// Real-symmetric field from values on the `n1 > 0` half; the other half is
    /// filled with conjugates.
    pub fn real_from_fn(lattice: LatticeBox, mut f: impl FnMut(WaveVector) -> Complex64) -> Self {
        let mut out = Self::zeros(lattice);
        for i in 0..lattice.len() {
            let n = lattice.mode(i);
            if n.n1 > 0 {
                let c = f(n);
                out.coeffs[i] = c;
                out.coeffs[lattice.neg_index(i)] = c.conj();
            }
        }
        out
    }

    /// Sets `u_n = c` and `u_{-n} = conj(c)`.
    pub fn set_real_pair(&mut self, n: WaveVector, c: Complex64) -> Result<()> {
        let i = self.lattice.index_of(n).ok_or(KpError::OutsideBox(n))?;
        let j = self.lattice.neg_index(i);
        self.coeffs[i] = c;
        self.coeffs[j] = c.conj();
        Ok(())
    }

    pub fn lattice(&self) -> LatticeBox {
        self.lattice
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn get(&self, n: WaveVector) -> Option<Complex64> {
        self.lattice.index_of(n).map(|i| self.coeffs[i])
    }

    pub fn set(&mut self, n: WaveVector, c: Complex64) -> Result<()> {
        let i = self.lattice.index_of(n).ok_or(KpError::OutsideBox(n))?;
        self.coeffs[i] = c;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (WaveVector, Complex64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(i, c)| (self.lattice.mode(i), *c))
    }

    pub fn check_same_box(&self, other: &SpectralField) -> Result<()> {
        if self.lattice == other.lattice {
            Ok(())
        } else {
            Err(KpError::BoxMismatch)
        }
    }

    /// Largest `|u_n - conj(u_{-n})|`; zero for a real field.
    pub fn reality_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[i] - self.coeffs[self.lattice.neg_index(i)].conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        self.reality_defect() <= tol
    }

    /// `sqrt( sum |n|^{2s} |u_n|^2 )` with `|n| = |n1| + |n2|`.
    pub fn hs_norm(&self, s: f64) -> f64 {
        self.iter()
            .map(|(n, c)| n.l1_norm().powf(2.0 * s) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `sum |u_n|^2`.
    pub fn l2_norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&self, factor: Complex64) -> SpectralField {
        SpectralField {
            lattice: self.lattice,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn scale_real(&self, factor: f64) -> SpectralField {
        self.scale(Complex64::new(factor, 0.0))
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &SpectralField, factor: f64) -> SpectralField {
        debug_assert_eq!(self.lattice, other.lattice);
        SpectralField {
            lattice: self.lattice,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b * factor)
                .collect(),
        }
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        self.add_scaled(other, -1.0)
    }

    /// In-place `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &SpectralField) {
        debug_assert_eq!(self.lattice, other.lattice);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * factor;
        }
    }

    /// Largest coefficient difference.
    pub fn max_abs_diff(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Coefficientwise residual scaled by the larger of the two fields.
    pub fn relative_diff(&self, other: &SpectralField) -> f64 {
        let scale = self.max_abs().max(other.max_abs());
        if scale == 0.0 {
            0.0
        } else {
            self.max_abs_diff(other) / scale
        }
    }

    /// Multiplies coefficient `n` by `i omega_n` (the linear operator `L`).
    pub fn apply_l(&self) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| Complex64::new(0.0, omega(self.lattice.mode(i))) * c)
            .collect();
        SpectralField {
            lattice: self.lattice,
            coeffs,
        }
    }
}

/// Free flow `U(t)`: multiplies coefficient `n` by `e^{i omega_n t}`.
pub fn apply_free_flow(u: &SpectralField, t: f64) -> SpectralField {
    let lattice = u.lattice();
    let coeffs = u
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| c * Complex64::cis(omega(lattice.mode(i)) * t))
        .collect();
    SpectralField { lattice, coeffs }
}

/// Every triad of the box checked against `|Delta| >= 3 |n1 k1 l1|`.
///
/// Returns the number of triads, the smallest ratio `|Delta| / (3|n1 k1 l1|)`
/// and the triad attaining it.
pub fn resonance_scan(lattice: LatticeBox) -> (usize, f64, Option<(WaveVector, WaveVector, WaveVector)>) {
    let mut count = 0;
    let mut worst = f64::INFINITY;
    let mut arg = None;
    for (n, k, l) in lattice.triads() {
        count += 1;
        let d = omega(k) + omega(l) - omega(n);
        let bound = 3.0 * (n.n1 as f64 * k.n1 as f64 * l.n1 as f64).abs();
        let ratio = d.abs() / bound;
        if ratio < worst {
            worst = ratio;
            arg = Some((n, k, l));
        }
    }
    (count, worst, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wv(n1: i32, n2: i32) -> WaveVector {
        WaveVector::new(n1, n2).unwrap()
    }

    #[test]
    fn omega_examples() {
        assert_eq!(omega(wv(1, 0)), 1.0);
        assert_eq!(omega(wv(1, 1)), 0.0);
        assert_eq!(omega(wv(-2, 1)), -7.5);
        assert_eq!(omega(wv(2, 1)), 7.5);
        assert!(matches!(
            omega_checked(0, 3),
            Err(KpError::ZeroFirstComponent { .. })
        ));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(wv(2, 0), wv(1, 0), wv(1, 0)).unwrap(), -6.0);
        assert_eq!(delta(wv(2, 1), wv(1, 0), wv(1, 1)).unwrap(), -6.5);
        assert_eq!(
            delta(wv(2, 1), wv(1, 0), wv(1, 1)).unwrap(),
            delta(wv(2, 1), wv(1, 1), wv(1, 0)).unwrap()
        );
        assert!(matches!(
            delta(wv(2, 0), wv(1, 0), wv(1, 1)),
            Err(KpError::NotATriad { .. })
        ));
    }

    #[test]
    fn box_indexing_round_trips() {
        let b = LatticeBox::new(3, 2).unwrap();
        assert_eq!(b.len(), 30);
        for i in 0..b.len() {
            let n = b.mode(i);
            assert!(b.contains(n));
            assert_eq!(b.index_of(n), Some(i));
            assert_eq!(b.mode(b.neg_index(i)), -n);
        }
        assert_eq!(b.index_of(WaveVector { n1: 4, n2: 0 }), None);
        assert_eq!(b.index_of(WaveVector { n1: 1, n2: 3 }), None);
    }

    #[test]
    fn omega_is_odd_over_box() {
        let b = LatticeBox::new(5, 5).unwrap();
        for n in b.modes() {
            assert_eq!(omega(-n), -omega(n));
        }
    }

    #[test]
    fn hs_norm_examples() {
        let b = LatticeBox::new(2, 2).unwrap();
        assert_eq!(SpectralField::zeros(b).hs_norm(1.3), 0.0);
        let mut u = SpectralField::zeros(b);
        u.set_real_pair(wv(1, 0), Complex64::new(1.0, 0.0)).unwrap();
        for s in [0.0, 0.5, 1.0, 2.7] {
            assert!((u.hs_norm(s) - 2f64.sqrt()).abs() < 1e-15);
        }
        let c = Complex64::new(-0.3, 1.2);
        assert!((u.scale(c).hs_norm(1.5) - c.norm() * u.hs_norm(1.5)).abs() < 1e-14);
    }

    #[test]
    fn free_flow_identity_at_zero() {
        let b = LatticeBox::new(2, 1).unwrap();
        let u = SpectralField::real_from_fn(b, |n| Complex64::new(n.n1 as f64, n.n2 as f64));
        assert_eq!(apply_free_flow(&u, 0.0), u);
    }

    #[test]
    fn resonance_bound_small_box() {
        let (count, worst, arg) = resonance_scan(LatticeBox::new(3, 3).unwrap());
        assert!(count > 0);
        assert!(worst >= 1.0 - 1e-12);
        assert!(arg.is_some());
    }
}
