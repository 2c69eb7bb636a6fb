//! Quadratic and cubic interaction operators on the truncated lattice.
//!
//! All sums run over `k + l = n` with `k`, `l` and `n` in the box (Galerkin
//! projection after every product), which makes the normal-form identities
//! exact for the finite system.

use num_complex::Complex64;

use crate::error::Result;
use crate::lattice::{DispersionTable, LatticeBox, SpectralField, WaveVector};

/// An ordered pair `(k, l)` contributing to mode `n = k + l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub k: usize,
    pub l: usize,
    /// `Delta_n^{k,l} = omega_k + omega_l - omega_n`.
    pub delta: f64,
}

/// Box, dispersion and the precomputed interaction lists.
#[derive(Debug, Clone)]
pub struct OperatorContext {
    lattice: LatticeBox,
    dispersion: DispersionTable,
    interactions: Vec<Interaction>,
    offsets: Vec<usize>,
}

impl OperatorContext {
    pub fn new(lattice: LatticeBox) -> Self {
        let dispersion = DispersionTable::new(lattice);
        let mut interactions = Vec::new();
        let mut offsets = Vec::with_capacity(lattice.len() + 1);
        offsets.push(0);
        for ni in 0..lattice.len() {
            let n = lattice.mode(ni);
            for ki in 0..lattice.len() {
                let k = lattice.mode(ki);
                let Some(l) = n.checked_sub(k) else { continue };
                let Some(li) = lattice.index_of(l) else { continue };
                interactions.push(Interaction {
                    k: ki,
                    l: li,
                    delta: dispersion.at(ki) + dispersion.at(li) - dispersion.at(ni),
                });
            }
            offsets.push(interactions.len());
        }
        Self {
            lattice,
            dispersion,
            interactions,
            offsets,
        }
    }

    pub fn lattice(&self) -> LatticeBox {
        self.lattice
    }

    pub fn dispersion(&self) -> &DispersionTable {
        &self.dispersion
    }

    #[inline]
    pub fn omega_at(&self, index: usize) -> f64 {
        self.dispersion.at(index)
    }

    /// Ordered pairs `(k, l)` with `k + l = n` for the mode at `n_index`.
    #[inline]
    pub fn interactions(&self, n_index: usize) -> &[Interaction] {
        &self.interactions[self.offsets[n_index]..self.offsets[n_index + 1]]
    }

    pub fn interaction_count(&self) -> usize {
        self.interactions.len()
    }

    #[inline]
    fn n1(&self, index: usize) -> f64 {
        self.lattice.mode(index).n1 as f64
    }

    fn check(&self, fields: &[&SpectralField]) -> Result<()> {
        for f in fields {
            if f.lattice() != self.lattice {
                return Err(crate::error::KpError::BoxMismatch);
            }
        }
        Ok(())
    }

    /// `∂x Π(u v)`: coefficient `i n1 sum_{k+l=n} u_k v_l`.
    pub fn dx_product(&self, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
        self.check(&[u, v])?;
        let mut out = SpectralField::zeros(self.lattice);
        self.dx_product_into(u.coeffs(), v.coeffs(), out.coeffs_mut());
        Ok(out)
    }

    /// Allocation-free kernel of [`Self::dx_product`] on raw coefficients.
    pub fn dx_product_into(&self, u: &[Complex64], v: &[Complex64], out: &mut [Complex64]) {
        for (ni, slot) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for it in self.interactions(ni) {
                acc += u[it.k] * v[it.l];
            }
            *slot = Complex64::new(0.0, self.n1(ni)) * acc;
        }
    }

    /// Normal-form bilinear map `S(u, v)_n = (n1/2) sum u_k v_l / Delta_n^{k,l}`.
    pub fn s_map(&self, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
        self.check(&[u, v])?;
        let (uc, vc) = (u.coeffs(), v.coeffs());
        let mut out = SpectralField::zeros(self.lattice);
        for (ni, slot) in out.coeffs_mut().iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for it in self.interactions(ni) {
                acc += uc[it.k] * vc[it.l] / it.delta;
            }
            *slot = acc * (0.5 * self.n1(ni));
        }
        Ok(out)
    }

    /// Trilinear map `F(a, b, c) = -S(c, ∂x Π(a b))`.
    pub fn f_map(
        &self,
        a: &SpectralField,
        b: &SpectralField,
        c: &SpectralField,
    ) -> Result<SpectralField> {
        self.check(&[a, b, c])?;
        let ab = self.dx_product(a, b)?;
        Ok(self.s_map(c, &ab)?.scale_real(-1.0))
    }

    /// Triple-sum evaluation of `F`,
    /// `F_n = (n1/2) sum_{j+k+l=n} (j1+k1) / (i Delta_n^{j+k,l}) a_j b_k c_l`,
    /// restricted to `j, k, l, j+k, n` in the box. Reference path for checking
    /// [`Self::f_map`].
    pub fn f_map_direct(
        &self,
        a: &SpectralField,
        b: &SpectralField,
        c: &SpectralField,
    ) -> Result<SpectralField> {
        self.check(&[a, b, c])?;
        let lat = self.lattice;
        let omega = crate::lattice::omega;
        let out = SpectralField::from_fn(lat, |n| {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in lat.modes() {
                for k in lat.modes() {
                    let Some(q) = j.checked_add(k) else { continue };
                    if !lat.contains(q) {
                        continue;
                    }
                    let Some(l) = n.checked_sub(q) else { continue };
                    if !lat.contains(l) {
                        continue;
                    }
                    let d = omega(q) + omega(l) - omega(n);
                    let w = Complex64::new(0.0, -(q.n1 as f64) / d);
                    acc += w * a.get(j).unwrap() * b.get(k).unwrap() * c.get(l).unwrap();
                }
            }
            acc * (0.5 * n.n1 as f64)
        });
        Ok(out)
    }

    /// `F(u, u, u)`.
    pub fn f_cubic(&self, u: &SpectralField) -> Result<SpectralField> {
        self.f_map(u, u, u)
    }

    pub fn mode(&self, index: usize) -> WaveVector {
        self.lattice.mode(index)
    }
}
