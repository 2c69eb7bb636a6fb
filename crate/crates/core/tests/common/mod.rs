#![allow(dead_code)]

use kpnf_core::ensemble::{normalize_profile, sample_u0, RandomLaw, SpectrumProfile};
use kpnf_core::{LatticeBox, SpectralField};
use num_complex::Complex64;

/// Random real field with `H^1` norm at most `scale`.
pub fn field(lattice: LatticeBox, seed: u64, scale: f64) -> SpectralField {
    let law = RandomLaw::TwoPoint { r1: 0.5, r2: 1.0, p: 0.5 };
    let prof = SpectrumProfile::power_decay(lattice, 1.0, 2.0).unwrap();
    let prof = normalize_profile(&prof, &law, 1.0).unwrap();
    sample_u0(&prof, &law, seed, 0).scale_real(scale)
}

/// Classical RK4 on a complex vector, `steps` equal steps from `t0` to `t1`.
pub fn rk4<F>(y0: &[Complex64], t0: f64, t1: f64, steps: usize, mut f: F) -> Vec<Complex64>
where
    F: FnMut(f64, &[Complex64]) -> Vec<Complex64>,
{
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |y: &[Complex64], k: &[Complex64], c: f64| -> Vec<Complex64> {
        y.iter().zip(k).map(|(a, b)| a + b * c).collect()
    };
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &axpy(&y, &k1, 0.5 * h));
        let k3 = f(t + 0.5 * h, &axpy(&y, &k2, 0.5 * h));
        let k4 = f(t + h, &axpy(&y, &k3, h));
        for i in 0..y.len() {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
    }
    y
}

/// Adaptive Simpson quadrature of a vector-valued integrand with a max-norm
/// error target.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64) -> Vec<Complex64>
where
    F: Fn(f64) -> Vec<Complex64>,
{
    fn simpson(fa: &[Complex64], fm: &[Complex64], fb: &[Complex64], h: f64) -> Vec<Complex64> {
        fa.iter()
            .zip(fm)
            .zip(fb)
            .map(|((a, m), b)| (a + m * 4.0 + b) * (h / 6.0))
            .collect()
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> Vec<Complex64>>(
        f: &F,
        a: f64,
        b: f64,
        fa: &[Complex64],
        fm: &[Complex64],
        fb: &[Complex64],
        whole: &[Complex64],
        tol: f64,
        depth: u32,
    ) -> Vec<Complex64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, &flm, fm, m - a);
        let right = simpson(fm, &frm, fb, b - m);
        let err = left
            .iter()
            .zip(&right)
            .zip(whole)
            .map(|((l, r), w)| (l + r - w).norm())
            .fold(0.0, f64::max);
        if depth == 0 || err <= 15.0 * tol {
            return left
                .iter()
                .zip(&right)
                .zip(whole)
                .map(|((l, r), w)| l + r + (l + r - w) / 15.0)
                .collect();
        }
        let mut out = rec(f, a, m, fa, &flm, fm, &left, 0.5 * tol, depth - 1);
        let r = rec(f, m, b, fm, &frm, fb, &right, 0.5 * tol, depth - 1);
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
        out
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(&fa, &fm, &fb, b - a);
    rec(f, a, b, &fa, &fm, &fb, &whole, tol, 40)
}

pub fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}
