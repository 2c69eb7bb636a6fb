//! Random initial data `u0 = sum g_n lambda_n e^{inz}` and Monte Carlo moment
//! estimates.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, IntegratorConfig};
use crate::error::{KpError, Result};
use crate::lattice::{LatticeBox, SpectralField, WaveVector};
use crate::multilinear::OperatorContext;
use crate::theory::{PairConvention, TheoryContext, TripleConvention};

/// Law of the multipliers `g_n = R e^{i Theta}` with `Theta` uniform on
/// `[0, 2 pi)` and independent of the modulus `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomLaw {
    /// `R = r` almost surely. With `r = 1` this is the Steinhaus law.
    Constant { r: f64 },
    /// `R = r2` with probability `p`, otherwise `r1`.
    TwoPoint { r1: f64, r2: f64, p: f64 },
    /// `R = min(|Z|, r_max)` for a complex Gaussian `Z` with `E|Z|^2 = sigma^2`.
    ClippedGaussian { sigma: f64, r_max: f64 },
}

impl Default for RandomLaw {
    fn default() -> Self {
        RandomLaw::Constant { r: 1.0 }
    }
}

impl RandomLaw {
    pub fn steinhaus() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RandomLaw::Constant { r } => r.is_finite() && r >= 0.0,
            RandomLaw::TwoPoint { r1, r2, p } => {
                r1.is_finite() && r2.is_finite() && r1 >= 0.0 && r2 >= 0.0 && (0.0..=1.0).contains(&p)
            }
            RandomLaw::ClippedGaussian { sigma, r_max } => {
                sigma.is_finite() && r_max.is_finite() && sigma > 0.0 && r_max > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(KpError::InvalidParameter(format!("invalid random law {self:?}")))
        }
    }

    /// Essential supremum of the modulus.
    pub fn r_max(&self) -> f64 {
        match *self {
            RandomLaw::Constant { r } => r,
            RandomLaw::TwoPoint { r1, r2, p } => {
                if p == 0.0 {
                    r1
                } else if p == 1.0 {
                    r2
                } else {
                    r1.max(r2)
                }
            }
            RandomLaw::ClippedGaussian { r_max, .. } => r_max,
        }
    }

    pub fn draw_modulus<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RandomLaw::Constant { r } => r,
            RandomLaw::TwoPoint { r1, r2, p } => {
                if rng.random::<f64>() < p {
                    r2
                } else {
                    r1
                }
            }
            RandomLaw::ClippedGaussian { sigma, r_max } => {
                // |Z|^2 is exponential with mean sigma^2
                let u: f64 = rng.random();
                let sq = -(sigma * sigma) * (1.0 - u).ln();
                sq.sqrt().min(r_max)
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let r = self.draw_modulus(rng);
        let theta = TAU * rng.random::<f64>();
        Complex64::from_polar(r, theta)
    }
}

/// `(E|g|^2, E|g|^4)`.
pub fn g_moments(law: &RandomLaw) -> (f64, f64) {
    match *law {
        RandomLaw::Constant { r } => (r * r, r.powi(4)),
        RandomLaw::TwoPoint { r1, r2, p } => (
            (1.0 - p) * r1 * r1 + p * r2 * r2,
            (1.0 - p) * r1.powi(4) + p * r2.powi(4),
        ),
        RandomLaw::ClippedGaussian { sigma, r_max } => {
            let mu = sigma * sigma;
            let c = r_max * r_max;
            let tail = (-c / mu).exp();
            (
                mu * (1.0 - tail),
                2.0 * mu * mu * (1.0 - tail) - 2.0 * c * mu * tail,
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    /// `lambda_n = amplitude |n|^{-r}`.
    PowerDecay { amplitude: f64, r: f64 },
    /// `lambda_n = lambda` when `max(|n1|, |n2|) <= n`, zero otherwise.
    BoxConstant { n: i32, lambda: f64 },
    /// Values supplied directly.
    Explicit,
}

/// Real nonnegative amplitudes `lambda_n` with `lambda_{-n} = lambda_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    pub kind: ProfileKind,
    lattice: LatticeBox,
    values: Vec<f64>,
}

impl SpectrumProfile {
    pub fn power_decay(lattice: LatticeBox, amplitude: f64, r: f64) -> Result<Self> {
        if amplitude.is_nan() || amplitude < 0.0 || !r.is_finite() {
            return Err(KpError::InvalidParameter(format!(
                "power decay needs amplitude >= 0 and finite r, got {amplitude}, {r}"
            )));
        }
        let values = lattice.modes().map(|n| amplitude * n.l1_norm().powf(-r)).collect();
        Ok(Self {
            kind: ProfileKind::PowerDecay { amplitude, r },
            lattice,
            values,
        })
    }

    pub fn box_constant(lattice: LatticeBox, n: i32, lambda: f64) -> Result<Self> {
        if n < 1 || lambda.is_nan() || lambda < 0.0 {
            return Err(KpError::InvalidParameter(format!(
                "box profile needs n >= 1 and lambda >= 0, got {n}, {lambda}"
            )));
        }
        let values = lattice
            .modes()
            .map(|m| if m.n1.abs() <= n && m.n2.abs() <= n { lambda } else { 0.0 })
            .collect();
        Ok(Self {
            kind: ProfileKind::BoxConstant { n, lambda },
            lattice,
            values,
        })
    }

    /// `f` is evaluated on `n1 > 0` and mirrored.
    pub fn explicit(lattice: LatticeBox, mut f: impl FnMut(WaveVector) -> f64) -> Result<Self> {
        let mut values = vec![0.0; lattice.len()];
        for (i, n) in lattice.modes().enumerate() {
            if n.n1 > 0 {
                let v = f(n);
                if !v.is_finite() || v < 0.0 {
                    return Err(KpError::InvalidParameter(format!(
                        "lambda at {n} must be finite and nonnegative, got {v}"
                    )));
                }
                values[i] = v;
                values[lattice.neg_index(i)] = v;
            }
        }
        Ok(Self {
            kind: ProfileKind::Explicit,
            lattice,
            values,
        })
    }

    pub fn lattice(&self) -> LatticeBox {
        self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Zero outside the box.
    pub fn lambda(&self, n: WaveVector) -> f64 {
        self.lattice.index_of(n).map_or(0.0, |i| self.values[i])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let kind = match self.kind {
            ProfileKind::PowerDecay { amplitude, r } => ProfileKind::PowerDecay {
                amplitude: amplitude * factor,
                r,
            },
            ProfileKind::BoxConstant { n, lambda } => ProfileKind::BoxConstant {
                n,
                lambda: lambda * factor,
            },
            ProfileKind::Explicit => ProfileKind::Explicit,
        };
        Self {
            kind,
            lattice: self.lattice,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// `sqrt(sum |n|^{2s} lambda_n^2)`.
    pub fn hs_weight(&self, s: f64) -> f64 {
        self.lattice
            .modes()
            .zip(&self.values)
            .map(|(n, v)| n.l1_norm().powf(2.0 * s) * v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Rescales so that `r_max * sqrt(sum |n|^{2s} lambda_n^2) = 1`, which makes
/// every sample have `H^s` norm at most one.
pub fn normalize_profile(profile: &SpectrumProfile, law: &RandomLaw, s: f64) -> Result<SpectrumProfile> {
    law.validate()?;
    let norm = law.r_max() * profile.hs_weight(s);
    if !norm.is_finite() || norm <= 0.0 {
        return Err(KpError::ZeroProfile);
    }
    Ok(profile.scaled(1.0 / norm))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream feeding `g_n` for sample `index`.
pub fn mode_seed(seed: u64, index: u64, n: WaveVector) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ index);
    h = splitmix64(h ^ (n.n1 as i64 as u64));
    splitmix64(h ^ ((n.n2 as i64 as u64).rotate_left(32)))
}

/// `g_n` of sample `index`; defined for `n1 > 0`, use the conjugate otherwise.
pub fn draw_g(law: &RandomLaw, seed: u64, index: u64, n: WaveVector) -> Complex64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mode_seed(seed, index, n));
    law.draw(&mut rng)
}

/// Sample `index` of the initial datum. Depends only on `(seed, index)`.
pub fn sample_u0(profile: &SpectrumProfile, law: &RandomLaw, seed: u64, index: u64) -> SpectralField {
    let lattice = profile.lattice();
    let mut out = SpectralField::zeros(lattice);
    for (i, n) in lattice.modes().enumerate() {
        if n.n1 > 0 {
            let c = draw_g(law, seed, index, n) * profile.at(i);
            out.coeffs_mut()[i] = c;
            out.coeffs_mut()[lattice.neg_index(i)] = c.conj();
        }
    }
    out
}

/// Running mean and spread of a complex statistic, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComplexAccumulator {
    pub count: u64,
    pub mean: Complex64,
    /// Sums of squared deviations of the real and imaginary parts.
    pub m2_re: f64,
    pub m2_im: f64,
}

impl ComplexAccumulator {
    pub fn push(&mut self, x: Complex64) {
        self.count += 1;
        let n = self.count as f64;
        let d = x - self.mean;
        self.mean += d / n;
        let d2 = x - self.mean;
        self.m2_re += d.re * d2.re;
        self.m2_im += d.im * d2.im;
    }

    pub fn merge(&mut self, other: &ComplexAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let d = other.mean - self.mean;
        self.mean += d * (nb / n);
        self.m2_re += other.m2_re + d.re * d.re * na * nb / n;
        self.m2_im += other.m2_im + d.im * d.im * na * nb / n;
        self.count += other.count;
    }

    /// `sqrt((var_re + var_im) / count)` with unbiased variances.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return f64::INFINITY;
        }
        let n = self.count as f64;
        ((self.m2_re + self.m2_im) / (n - 1.0) / n).sqrt()
    }
}

/// Number of samples folded together before the ordered reduction.
pub const CHUNK: u64 = 64;

/// Evaluates `f(index)` for `0..count` in parallel chunks and merges the
/// per-statistic accumulators in index order, so the result does not depend
/// on scheduling. Failed samples are counted when `skip_failures` is set and
/// reported with their index otherwise.
pub fn accumulate<F>(
    count: u64,
    width: usize,
    skip_failures: bool,
    f: F,
) -> Result<(Vec<ComplexAccumulator>, u64)>
where
    F: Fn(u64) -> Result<Vec<Complex64>> + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let partial: Vec<Result<(Vec<ComplexAccumulator>, u64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![ComplexAccumulator::default(); width];
            let mut failed = 0u64;
            for index in c * CHUNK..((c + 1) * CHUNK).min(count) {
                match f(index) {
                    Ok(values) => {
                        for (a, v) in acc.iter_mut().zip(values) {
                            a.push(v);
                        }
                    }
                    Err(_) if skip_failures => failed += 1,
                    Err(e) => {
                        return Err(KpError::SampleFailed {
                            index,
                            source: Box::new(e),
                        })
                    }
                }
            }
            Ok((acc, failed))
        })
        .collect();
    let mut total = vec![ComplexAccumulator::default(); width];
    let mut failed = 0;
    for part in partial {
        let (acc, f) = part?;
        for (t, a) in total.iter_mut().zip(&acc) {
            t.merge(a);
        }
        failed += f;
    }
    Ok((total, failed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub profile: SpectrumProfile,
    pub law: RandomLaw,
    pub eps: f64,
    pub t: f64,
    pub sample_count: u64,
    pub pairs: Vec<(WaveVector, WaveVector)>,
    pub triples: Vec<(WaveVector, WaveVector, WaveVector)>,
    pub seed: u64,
    /// Integrator step; calibrated on the first sample when absent.
    pub dt: Option<f64>,
    pub pair_convention: PairConvention,
    pub triple_convention: TripleConvention,
    /// Count failing samples instead of aborting.
    pub skip_failures: bool,
}

impl EnsembleConfig {
    pub fn new(profile: SpectrumProfile, law: RandomLaw, eps: f64, t: f64, sample_count: u64, seed: u64) -> Self {
        Self {
            profile,
            law,
            eps,
            t,
            sample_count,
            pairs: Vec::new(),
            triples: Vec::new(),
            seed,
            dt: None,
            pair_convention: PairConvention::default(),
            triple_convention: TripleConvention::default(),
            skip_failures: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub indices: Vec<WaveVector>,
    pub estimate: Complex64,
    pub std_error: f64,
    pub prediction: Complex64,
}

impl MomentEntry {
    /// `|estimate - prediction| / std_error`.
    pub fn z_score(&self) -> f64 {
        let diff = (self.estimate - self.prediction).norm();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error
        }
    }

    /// Passes when `|estimate - prediction| <= k * std_error + budget`.
    pub fn within(&self, k: f64, budget: f64) -> bool {
        (self.estimate - self.prediction).norm() <= k * self.std_error + budget
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub pair_moments: Vec<MomentEntry>,
    pub triple_moments: Vec<MomentEntry>,
    pub sample_count: u64,
    pub failures: u64,
    pub eps: f64,
    pub t: f64,
    pub seed: u64,
}

impl MomentReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Columns `kind,n1,n2,m1,m2,p1,p2,re_est,im_est,se,re_pred,im_pred,z`;
    /// the `p` columns are empty for pairs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,n1,n2,m1,m2,p1,p2,re_est,im_est,se,re_pred,im_pred,z\n");
        let rows = self
            .pair_moments
            .iter()
            .map(|e| ("pair", e))
            .chain(self.triple_moments.iter().map(|e| ("triple", e)));
        for (kind, e) in rows {
            let idx = &e.indices;
            let p = idx
                .get(2)
                .map_or_else(|| ",".to_string(), |p| format!("{},{}", p.n1, p.n2));
            let _ = writeln!(
                out,
                "{kind},{},{},{},{},{p},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                idx[0].n1,
                idx[0].n2,
                idx[1].n1,
                idx[1].n2,
                e.estimate.re,
                e.estimate.im,
                e.std_error,
                e.prediction.re,
                e.prediction.im,
                e.z_score()
            );
        }
        out
    }
}

/// Every pair `(n, m)` with `n` before or equal to `m` in storage order.
pub fn all_pairs(lattice: LatticeBox) -> Vec<(WaveVector, WaveVector)> {
    let modes: Vec<_> = lattice.modes().collect();
    let mut out = Vec::new();
    for (i, &n) in modes.iter().enumerate() {
        for &m in &modes[i..] {
            out.push((n, m));
        }
    }
    out
}

/// Unordered triples (as sorted index multisets), optionally only those with
/// `n + m + p = 0`.
pub fn all_triples(lattice: LatticeBox, zero_sum_only: bool) -> Vec<(WaveVector, WaveVector, WaveVector)> {
    let modes: Vec<_> = lattice.modes().collect();
    let mut out = Vec::new();
    for i in 0..modes.len() {
        for j in i..modes.len() {
            for k in j..modes.len() {
                let (n, m, p) = (modes[i], modes[j], modes[k]);
                let zero = n.n1 + m.n1 + p.n1 == 0 && n.n2 + m.n2 + p.n2 == 0;
                if zero || !zero_sum_only {
                    out.push((n, m, p));
                }
            }
        }
    }
    out
}

/// Monte Carlo estimates of `E(u_n conj(u_m))` and `E(u_n u_m u_p)` at time
/// `t` with the analytic predictions attached.
pub fn estimate_moments(ctx: &OperatorContext, cfg: &EnsembleConfig) -> Result<MomentReport> {
    let lattice = ctx.lattice();
    if cfg.profile.lattice() != lattice {
        return Err(KpError::BoxMismatch);
    }
    cfg.law.validate()?;
    let index = |n: WaveVector| lattice.index_of(n).ok_or(KpError::OutsideBox(n));
    let pairs: Vec<(usize, usize)> = cfg
        .pairs
        .iter()
        .map(|&(n, m)| Ok((index(n)?, index(m)?)))
        .collect::<Result<_>>()?;
    let triples: Vec<(usize, usize, usize)> = cfg
        .triples
        .iter()
        .map(|&(n, m, p)| Ok((index(n)?, index(m)?, index(p)?)))
        .collect::<Result<_>>()?;
    let dt = match cfg.dt {
        Some(dt) => IntegratorConfig::new(dt, 1)?.dt,
        None if cfg.sample_count == 0 => IntegratorConfig::default_dt(ctx),
        None => {
            let probe = sample_u0(&cfg.profile, &cfg.law, cfg.seed, 0);
            IntegratorConfig::calibrate(ctx, &probe, cfg.eps, cfg.t, 1e-8)?.dt
        }
    };
    let width = pairs.len() + triples.len();
    let (acc, failures) = accumulate(cfg.sample_count, width, cfg.skip_failures, |i| {
        let u0 = sample_u0(&cfg.profile, &cfg.law, cfg.seed, i);
        let u = evolve(ctx, &u0, cfg.eps, cfg.t, dt)?;
        let c = u.coeffs();
        let mut row = Vec::with_capacity(width);
        row.extend(pairs.iter().map(|&(n, m)| c[n] * c[m].conj()));
        row.extend(triples.iter().map(|&(n, m, p)| c[n] * c[m] * c[p]));
        Ok(row)
    })?;

    let theory = TheoryContext::new(cfg.profile.clone(), &cfg.law)?;
    let eps = cfg.eps;
    let pair_moments = cfg
        .pairs
        .iter()
        .zip(&acc)
        .map(|(&(n, m), a)| MomentEntry {
            indices: vec![n, m],
            estimate: a.mean,
            std_error: a.std_error(),
            prediction: Complex64::new(
                theory.pair_zeroth_order(n, m) + eps * eps * theory.f2(n, m, cfg.t, cfg.pair_convention),
                0.0,
            ),
        })
        .collect();
    let triple_moments = cfg
        .triples
        .iter()
        .zip(&acc[pairs.len()..])
        .map(|(&(n, m, p), a)| MomentEntry {
            indices: vec![n, m, p],
            estimate: a.mean,
            std_error: a.std_error(),
            prediction: theory.f3(n, m, p, cfg.t, cfg.triple_convention) * eps,
        })
        .collect();
    Ok(MomentReport {
        pair_moments,
        triple_moments,
        sample_count: cfg.sample_count - failures,
        failures,
        eps,
        t: cfg.t,
        seed: cfg.seed,
    })
}
