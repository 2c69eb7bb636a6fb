//! Closed-form second- and third-moment corrections
//!
//! `E|u_n(t)|^2 = m2 lambda_n^2 + eps^2 F_nn(t) + ...` and
//! `E(u_n u_m u_p) = eps F_nmp(t) + ...`, with every mode sum restricted to the
//! simulation box.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::{g_moments, RandomLaw, SpectrumProfile};
use crate::error::{KpError, Result};
use crate::lattice::{omega, DispersionTable, LatticeBox, WaveVector};

/// Sign convention for `F_nn`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairConvention {
    /// `F_nn = int_0^t G_n`, oscillatory factor `(1 - cos(Delta t)) / Delta^2`.
    #[default]
    Integral,
    /// Oscillatory factor `(cos(Delta t) - 1) / Delta^2`, i.e. `-int_0^t G_n`.
    Reversed,
}

/// Coefficient convention for `F_nmp`. With `P = (1 - e^{i Omega t}) / Omega`,
/// `A` the `m2^2` term and `K = d_mp n1 l_m^4 + d_pn m1 l_p^4 + d_nm p1 l_n^4`:
///
/// * `Derived`: `P (A + mu K / 2)`
/// * `Negated`: `-P (A + mu K / 2)`
/// * `CrossIndexed`: `-P (A + mu K')`, `K' = d_mp m1 l_m^4 + d_pn p1 l_p^4 + d_nm n1 l_n^4`,
///   which equals `-P (A - mu K / 2)` on zero-sum triples.
///
/// Here `mu = m4 - 2 m2^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleConvention {
    #[default]
    Derived,
    Negated,
    CrossIndexed,
}

impl TripleConvention {
    pub const ALL: [TripleConvention; 3] = [Self::Derived, Self::Negated, Self::CrossIndexed];

    /// `(overall sign, sign of the mu K / 2 term)`.
    fn signs(self) -> (f64, f64) {
        match self {
            TripleConvention::Derived => (-1.0, 1.0),
            TripleConvention::Negated => (1.0, 1.0),
            TripleConvention::CrossIndexed => (1.0, -1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TripleConvention::Derived => "derived",
            TripleConvention::Negated => "negated",
            TripleConvention::CrossIndexed => "cross_indexed",
        }
    }
}

/// `(1 - cos(delta t)) / delta^2`.
#[inline]
fn one_minus_cos(delta: f64, t: f64) -> f64 {
    let h = (0.5 * delta * t).sin();
    2.0 * h * h / (delta * delta)
}

/// One term `weight * osc(Delta, t)` of `F_nn` or `G_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub delta: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct TheoryContext {
    pub profile: SpectrumProfile,
    pub m2: f64,
    pub m4: f64,
    lattice: LatticeBox,
    dispersion: DispersionTable,
}

impl TheoryContext {
    pub fn new(profile: SpectrumProfile, law: &RandomLaw) -> Result<Self> {
        law.validate()?;
        let (m2, m4) = g_moments(law);
        Ok(Self::with_moments(profile, m2, m4))
    }

    pub fn with_moments(profile: SpectrumProfile, m2: f64, m4: f64) -> Self {
        let lattice = profile.lattice();
        Self {
            profile,
            m2,
            m4,
            lattice,
            dispersion: DispersionTable::new(lattice),
        }
    }

    pub fn lattice(&self) -> LatticeBox {
        self.lattice
    }

    /// `m4 - 2 m2^2`.
    pub fn mu(&self) -> f64 {
        self.m4 - 2.0 * self.m2 * self.m2
    }

    fn lam2(&self, n: WaveVector) -> f64 {
        let l = self.profile.lambda(n);
        l * l
    }

    fn om(&self, n: WaveVector) -> f64 {
        self.dispersion.get(n).unwrap_or_else(|| omega(n))
    }

    /// `delta_n^m m2 lambda_n^2`.
    pub fn pair_zeroth_order(&self, n: WaveVector, m: WaveVector) -> f64 {
        if n == m {
            self.m2 * self.lam2(n)
        } else {
            0.0
        }
    }

    /// Frequencies and weights with `G_n(t) = sum w sin(Delta t)/Delta` and
    /// `F_nn(t) = sum w (1 - cos(Delta t))/Delta^2`.
    pub fn pair_terms(&self, n: WaveVector) -> Vec<PairTerm> {
        let lat = self.lattice;
        let mut out = Vec::new();
        if !lat.contains(n) {
            return out;
        }
        let n1 = n.n1 as f64;
        let ln = self.lam2(n);
        let m22 = self.m2 * self.m2;
        for k in lat.modes() {
            let Some(l) = n.checked_sub(k) else { continue };
            if !lat.contains(l) {
                continue;
            }
            let (lk, ll) = (self.lam2(k), self.lam2(l));
            let x = k.n1 as f64 * ln * ll + l.n1 as f64 * ln * lk - n1 * lk * ll;
            let delta = self.om(k) + self.om(l) - self.om(n);
            out.push(PairTerm {
                delta,
                weight: -n1 * m22 * x,
            });
        }
        let mu = self.mu();
        if mu != 0.0 {
            if let Some(two_n) = n.scaled(2).filter(|m| lat.contains(*m)) {
                let delta = self.om(-n) + self.om(two_n) - self.om(n);
                out.push(PairTerm {
                    delta,
                    weight: -n1 * mu * 2.0 * n1 * ln * ln,
                });
            }
            if let Some(half) = n.half().filter(|m| lat.contains(*m)) {
                let lh = self.lam2(half);
                let delta = 2.0 * self.om(half) - self.om(n);
                out.push(PairTerm {
                    delta,
                    weight: n1 * mu * 0.5 * n1 * lh * lh,
                });
            }
        }
        out
    }

    /// `G_n(t) = d/dt F_nn(t)`.
    pub fn g_n_rate(&self, n: WaveVector, t: f64) -> f64 {
        self.pair_terms(n)
            .iter()
            .map(|p| p.weight * (p.delta * t).sin() / p.delta)
            .sum()
    }

    pub fn f2_diag(&self, n: WaveVector, t: f64, conv: PairConvention) -> f64 {
        let f: f64 = self
            .pair_terms(n)
            .iter()
            .map(|p| p.weight * one_minus_cos(p.delta, t))
            .sum();
        match conv {
            PairConvention::Integral => f,
            PairConvention::Reversed => -f,
        }
    }

    /// `F_nm`, zero off the diagonal.
    pub fn f2(&self, n: WaveVector, m: WaveVector, t: f64, conv: PairConvention) -> f64 {
        if n == m {
            self.f2_diag(n, t, conv)
        } else {
            0.0
        }
    }

    /// `(Omega, A, K)` for a zero-sum triple, `None` otherwise.
    fn triple_parts(&self, n: WaveVector, m: WaveVector, p: WaveVector) -> Option<(f64, f64, f64)> {
        if n.n1 + m.n1 + p.n1 != 0 || n.n2 + m.n2 + p.n2 != 0 {
            return None;
        }
        let (ln, lm, lp) = (self.lam2(n), self.lam2(m), self.lam2(p));
        let (n1, m1, p1) = (n.n1 as f64, m.n1 as f64, p.n1 as f64);
        let a = self.m2 * self.m2 * (n1 * lm * lp + m1 * lp * ln + p1 * ln * lm);
        let mut k = 0.0;
        if m == p {
            k += n1 * lm * lm;
        }
        if p == n {
            k += m1 * lp * lp;
        }
        if n == m {
            k += p1 * ln * ln;
        }
        Some((self.om(n) + self.om(m) + self.om(p), a, k))
    }

    /// `F_nmp(t)`, zero unless `n + m + p = 0`.
    pub fn f3(&self, n: WaveVector, m: WaveVector, p: WaveVector, t: f64, conv: TripleConvention) -> Complex64 {
        let Some((big_omega, a, k)) = self.triple_parts(n, m, p) else {
            return Complex64::new(0.0, 0.0);
        };
        let (sign, ksign) = conv.signs();
        let prefactor = (Complex64::new(1.0, 0.0) - Complex64::cis(big_omega * t)) / big_omega;
        -prefactor * sign * (a + ksign * 0.5 * self.mu() * k)
    }

    /// `H_nmp(t)` with `d/dt (e^{-i Omega t} F_nmp) = H_nmp`.
    pub fn h_nmp(&self, n: WaveVector, m: WaveVector, p: WaveVector, t: f64, conv: TripleConvention) -> Complex64 {
        let Some((big_omega, a, k)) = self.triple_parts(n, m, p) else {
            return Complex64::new(0.0, 0.0);
        };
        let (sign, ksign) = conv.signs();
        Complex64::i() * Complex64::cis(-big_omega * t) * sign * (a + ksign * 0.5 * self.mu() * k)
    }

    /// Precomputes the summands of both weighted sums at regularity `s`.
    pub fn weighted_sums(&self, s: f64, conv: TripleConvention) -> WeightedSums {
        let lat = self.lattice;
        let modes: Vec<WaveVector> = lat.modes().collect();
        let mut pairs = Vec::new();
        let mut pair_majorant = 0.0;
        for &n in &modes {
            let w = n.n1.abs() as f64 * n.l1_norm().powf(2.0 * s);
            let terms = self.pair_terms(n);
            pair_majorant += w * terms
                .iter()
                .map(|p| 2.0 * p.weight.abs() / (p.delta * p.delta))
                .sum::<f64>();
            pairs.push((w, terms));
        }
        let mut triples = Vec::new();
        let mut triple_majorant = 0.0;
        let (sign, ksign) = conv.signs();
        let mu = self.mu();
        let m22 = self.m2 * self.m2;
        for &m in &modes {
            for &p in &modes {
                let Some(n) = (-m).checked_sub(p) else { continue };
                if !lat.contains(n) {
                    continue;
                }
                let (big_omega, a, k) = self.triple_parts(n, m, p).expect("zero-sum by construction");
                let w = ((n.n1 * m.n1 * p.n1).abs() as f64).sqrt()
                    * (n.l1_norm() * m.l1_norm() * p.l1_norm()).powf(s);
                let coeff = -sign * (a + ksign * 0.5 * mu * k) / big_omega;
                let (ln, lm, lp) = (self.lam2(n), self.lam2(m), self.lam2(p));
                let a_abs = m22
                    * ((n.n1.abs() as f64) * lm * lp
                        + (m.n1.abs() as f64) * lp * ln
                        + (p.n1.abs() as f64) * ln * lm);
                triple_majorant += w * 2.0 * (a_abs + 0.5 * mu.abs() * k.abs()) / big_omega.abs();
                triples.push((w, big_omega, coeff));
            }
        }
        WeightedSums {
            pairs,
            triples,
            pair_majorant,
            triple_majorant,
        }
    }
}

/// `sum |n1| |n|^{2s} |F_nn(t)|` and
/// `sum sqrt|n1 m1 p1| (|n||m||p|)^s |F_nmp(t)|` over the box, together with
/// majorants obtained by bounding each oscillating factor by 2.
#[derive(Debug, Clone)]
pub struct WeightedSums {
    pairs: Vec<(f64, Vec<PairTerm>)>,
    triples: Vec<(f64, f64, f64)>,
    pub pair_majorant: f64,
    pub triple_majorant: f64,
}

impl WeightedSums {
    pub fn pair(&self, t: f64) -> f64 {
        self.pairs
            .iter()
            .map(|(w, terms)| {
                w * terms
                    .iter()
                    .map(|p| p.weight * one_minus_cos(p.delta, t))
                    .sum::<f64>()
                    .abs()
            })
            .sum()
    }

    pub fn triple(&self, t: f64) -> f64 {
        self.triples
            .iter()
            .map(|&(w, big_omega, coeff)| {
                w * (Complex64::new(1.0, 0.0) - Complex64::cis(big_omega * t)).norm() * coeff.abs()
            })
            .sum()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }
}

/// Split of `F_n^N` into the part with `k`, `l` both inside the square box and
/// the part with exactly one of them outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxLimitParts {
    pub interior: f64,
    pub boundary: f64,
}

impl BoxLimitParts {
    pub fn total(&self) -> f64 {
        self.interior + self.boundary
    }
}

/// Second-order coefficient of `E|u_n(t)|^2` for the profile equal to
/// `lambda_n` on the square `max(|n1|, |n2|) <= big_n` and zero outside,
/// summed over all of `Z* x Z`. Requires `m4 = 2 m2^2`.
pub fn box_limit_parts(n: WaveVector, big_n: i32, lambda_n: f64, t: f64, m2: f64, m4: f64) -> Result<BoxLimitParts> {
    if (m4 - 2.0 * m2 * m2).abs() > 1e-12 * m4.abs().max(1.0) {
        return Err(KpError::NonGaussianMoments { m2, m4 });
    }
    if big_n < 1 {
        return Err(KpError::InvalidParameter(format!("box size must be >= 1, got {big_n}")));
    }
    let inside = |m: WaveVector| m.n1.abs() <= big_n && m.n2.abs() <= big_n;
    let lam2 = |m: WaveVector| if inside(m) { lambda_n * lambda_n } else { 0.0 };
    let n1 = n.n1 as f64;
    let ln = lam2(n);
    // every k with lambda_k or lambda_{n-k} nonzero
    let lo1 = (-big_n).min(n.n1 - big_n);
    let hi1 = big_n.max(n.n1 + big_n);
    let lo2 = (-big_n).min(n.n2 - big_n);
    let hi2 = big_n.max(n.n2 + big_n);
    let mut parts = BoxLimitParts {
        interior: 0.0,
        boundary: 0.0,
    };
    for k1 in lo1..=hi1 {
        if k1 == 0 || k1 == n.n1 {
            continue;
        }
        for k2 in lo2..=hi2 {
            let k = WaveVector { n1: k1, n2: k2 };
            let l = WaveVector {
                n1: n.n1 - k1,
                n2: n.n2 - k2,
            };
            let (lk, ll) = (lam2(k), lam2(l));
            let x = k1 as f64 * ln * ll + l.n1 as f64 * ln * lk - n1 * lk * ll;
            if x == 0.0 && !(inside(k) && inside(l)) {
                continue;
            }
            let delta = omega(k) + omega(l) - omega(n);
            let term = -n1 * m2 * m2 * x * one_minus_cos(delta, t);
            if inside(k) && inside(l) {
                parts.interior += term;
            } else {
                parts.boundary += term;
            }
        }
    }
    Ok(parts)
}

/// `F_n^N(t)`.
pub fn box_limit_f2(n: WaveVector, big_n: i32, lambda_n: f64, t: f64, m2: f64, m4: f64) -> Result<f64> {
    box_limit_parts(n, big_n, lambda_n, t, m2, m4).map(|p| p.total())
}
