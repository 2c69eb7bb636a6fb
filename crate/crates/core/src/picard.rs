//! Picard expansion `u = a + eps b + eps^2 c + eps^3 d` and the normal-form
//! variable `v = u + eps S(u, u) = a + eps U(t)S(u0, u0) + eps^2 f + eps^3 w`.
//!
//! `b`, `c` and `f` are evaluated in closed form. Every mode sum is restricted
//! to the same box as the dynamics, including the intermediate mode `j + q`
//! in the cubic terms.

use num_complex::Complex64;

use crate::error::{KpError, Result};
use crate::lattice::{apply_free_flow, SpectralField};
use crate::multilinear::OperatorContext;

/// Phases with `|theta|` at or below this are treated as exactly resonant.
pub const THETA_TOL: f64 = 1e-9;

/// `int_0^t e^{i theta s} ds = (e^{i theta t} - 1) / (i theta)`, equal to `t`
/// for a resonant phase.
#[inline]
pub fn phi1(theta: f64, t: f64) -> Complex64 {
    if theta.abs() <= THETA_TOL {
        Complex64::new(t, 0.0)
    } else {
        let x = theta * t;
        let h = (0.5 * x).sin();
        Complex64::new(x.sin() / theta, 2.0 * h * h / theta)
    }
}

/// First Picard iterate
/// `b_n(t) = -(n1/2) e^{i omega_n t} sum (e^{i Delta t} - 1)/Delta u0_k u0_l`.
pub fn picard_b(ctx: &OperatorContext, u0: &SpectralField, t: f64) -> Result<SpectralField> {
    check(ctx, u0)?;
    let u = u0.coeffs();
    let mut out = SpectralField::zeros(ctx.lattice());
    for (ni, slot) in out.coeffs_mut().iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for it in ctx.interactions(ni) {
            // (e^{i D t} - 1) / D = i phi1(D, t)
            acc += Complex64::i() * phi1(it.delta, t) * u[it.k] * u[it.l];
        }
        let n1 = ctx.mode(ni).n1 as f64;
        *slot = acc * Complex64::cis(ctx.omega_at(ni) * t) * (-0.5 * n1);
    }
    Ok(out)
}

/// Second Picard iterate `c_n(t)`, a triple sum over `k + (j + q) = n`.
pub fn picard_c(ctx: &OperatorContext, u0: &SpectralField, t: f64) -> Result<SpectralField> {
    check(ctx, u0)?;
    let u = u0.coeffs();
    let lat = ctx.lattice();
    let mut out = SpectralField::zeros(lat);
    for (ni, slot) in out.coeffs_mut().iter_mut().enumerate() {
        let wn = ctx.omega_at(ni);
        let mut acc = Complex64::new(0.0, 0.0);
        for outer in ctx.interactions(ni) {
            let (k, l) = (outer.k, outer.l);
            let l1 = lat.mode(l).n1 as f64;
            let p_outer = phi1(outer.delta, t);
            let wk = ctx.omega_at(k);
            let mut inner = Complex64::new(0.0, 0.0);
            for it in ctx.interactions(l) {
                let theta = wk + ctx.omega_at(it.k) + ctx.omega_at(it.l) - wn;
                inner += (phi1(theta, t) - p_outer) * (u[it.k] * u[it.l] / it.delta);
            }
            acc += inner * u[k] * (0.5 * l1);
        }
        let n1 = lat.mode(ni).n1 as f64;
        *slot = Complex64::new(0.0, n1) * Complex64::cis(wn * t) * acc;
    }
    Ok(out)
}

/// `f(t) = int_0^t U(t - s) F(a(s), a(s), a(s)) ds` in closed form.
pub fn f_integral(ctx: &OperatorContext, u0: &SpectralField, t: f64) -> Result<SpectralField> {
    check(ctx, u0)?;
    let u = u0.coeffs();
    let lat = ctx.lattice();
    let mut out = SpectralField::zeros(lat);
    for (ni, slot) in out.coeffs_mut().iter_mut().enumerate() {
        let wn = ctx.omega_at(ni);
        let mut acc = Complex64::new(0.0, 0.0);
        for outer in ctx.interactions(ni) {
            let (k, l) = (outer.k, outer.l);
            let l1 = lat.mode(l).n1 as f64;
            let wk = ctx.omega_at(k);
            let mut inner = Complex64::new(0.0, 0.0);
            for it in ctx.interactions(l) {
                let theta = wk + ctx.omega_at(it.k) + ctx.omega_at(it.l) - wn;
                inner += phi1(theta, t) * u[it.k] * u[it.l];
            }
            acc += inner * u[k] * (l1 / outer.delta);
        }
        let n1 = lat.mode(ni).n1 as f64;
        *slot = Complex64::new(0.0, -0.5 * n1) * Complex64::cis(wn * t) * acc;
    }
    Ok(out)
}

fn check(ctx: &OperatorContext, u: &SpectralField) -> Result<()> {
    if u.lattice() != ctx.lattice() {
        Err(KpError::BoxMismatch)
    } else {
        Ok(())
    }
}

/// The iterates of one initial datum at one time.
#[derive(Debug, Clone)]
pub struct PicardBundle {
    pub u0: SpectralField,
    pub t: f64,
    pub eps: f64,
    pub a: SpectralField,
    pub b: SpectralField,
    pub c: SpectralField,
    /// `int_0^t U(t-s) F(a, a, a) ds`.
    pub f: SpectralField,
    /// `U(t) S(u0, u0)`.
    pub flowed_s0: SpectralField,
}

impl PicardBundle {
    pub fn new(ctx: &OperatorContext, u0: &SpectralField, t: f64, eps: f64) -> Result<Self> {
        check(ctx, u0)?;
        Ok(Self {
            u0: u0.clone(),
            t,
            eps,
            a: apply_free_flow(u0, t),
            b: picard_b(ctx, u0, t)?,
            c: picard_c(ctx, u0, t)?,
            f: f_integral(ctx, u0, t)?,
            flowed_s0: apply_free_flow(&ctx.s_map(u0, u0)?, t),
        })
    }

    /// `a + eps b + eps^2 c`.
    pub fn truncated_expansion(&self) -> SpectralField {
        let mut out = self.a.clone();
        out.axpy(self.eps, &self.b);
        out.axpy(self.eps * self.eps, &self.c);
        out
    }

    /// `d = (u_t - a - eps b - eps^2 c) / eps^3`.
    pub fn extract_d(&self, u_t: &SpectralField) -> Result<SpectralField> {
        if self.eps == 0.0 {
            return Err(KpError::ZeroEps);
        }
        u_t.check_same_box(&self.a)?;
        Ok(u_t
            .sub(&self.truncated_expansion())
            .scale_real(self.eps.powi(-3)))
    }

    /// `w = (v - a - eps U(t)S(u0,u0) - eps^2 f) / eps^3` with `v = u_t + eps S(u_t, u_t)`.
    pub fn extract_w(&self, ctx: &OperatorContext, u_t: &SpectralField) -> Result<SpectralField> {
        if self.eps == 0.0 {
            return Err(KpError::ZeroEps);
        }
        let eps = self.eps;
        let mut v = u_t.add_scaled(&ctx.s_map(u_t, u_t)?, eps);
        v.axpy(-1.0, &self.a);
        v.axpy(-eps, &self.flowed_s0);
        v.axpy(-eps * eps, &self.f);
        Ok(v.scale_real(eps.powi(-3)))
    }

    /// `Lambda_eps(d) = d + 2 eps (S(a,d) + eps S(b,d) + eps^2 S(c,d)) + eps^4 S(d,d)`.
    pub fn lambda_eps(&self, ctx: &OperatorContext, d: &SpectralField) -> Result<SpectralField> {
        let eps = self.eps;
        let mut out = d.clone();
        if eps == 0.0 {
            return Ok(out);
        }
        out.axpy(2.0 * eps, &ctx.s_map(&self.a, d)?);
        out.axpy(2.0 * eps * eps, &ctx.s_map(&self.b, d)?);
        out.axpy(2.0 * eps.powi(3), &ctx.s_map(&self.c, d)?);
        out.axpy(eps.powi(4), &ctx.s_map(d, d)?);
        Ok(out)
    }

    /// Differential of `Lambda_eps` at `d` applied to `h`.
    pub fn lambda_eps_derivative(
        &self,
        ctx: &OperatorContext,
        d: &SpectralField,
        h: &SpectralField,
    ) -> Result<SpectralField> {
        let eps = self.eps;
        let mut out = h.clone();
        out.axpy(2.0 * eps, &ctx.s_map(&self.a, h)?);
        out.axpy(2.0 * eps * eps, &ctx.s_map(&self.b, h)?);
        out.axpy(2.0 * eps.powi(3), &ctx.s_map(&self.c, h)?);
        out.axpy(2.0 * eps.powi(4), &ctx.s_map(d, h)?);
        Ok(out)
    }

    /// `Lambda_eps(d) + S(b,b) + 2S(a,c) + 2 eps S(b,c) + eps^2 S(c,c)`, which
    /// equals `w` when `d` is the remainder of the same solution.
    pub fn w_from_d(&self, ctx: &OperatorContext, d: &SpectralField) -> Result<SpectralField> {
        let eps = self.eps;
        let mut out = self.lambda_eps(ctx, d)?;
        out.axpy(1.0, &ctx.s_map(&self.b, &self.b)?);
        out.axpy(2.0, &ctx.s_map(&self.a, &self.c)?);
        out.axpy(2.0 * eps, &ctx.s_map(&self.b, &self.c)?);
        out.axpy(eps * eps, &ctx.s_map(&self.c, &self.c)?);
        Ok(out)
    }

    /// Solves `Lambda_eps(d) = g` by the iteration `d <- d - (Lambda_eps(d) - g)`
    /// started from `d = g`.
    pub fn invert_lambda_eps(
        &self,
        ctx: &OperatorContext,
        g: &SpectralField,
        opts: &InversionOptions,
    ) -> Result<Inversion> {
        let mut d = g.clone();
        let mut prev = f64::INFINITY;
        let mut slow = 0usize;
        for iteration in 1..=opts.max_iter {
            let resid_field = self.lambda_eps(ctx, &d)?.sub(g);
            let residual = resid_field.hs_norm(opts.s);
            if !residual.is_finite() {
                return Err(KpError::NonContraction {
                    iterations: iteration,
                    residual,
                });
            }
            if residual <= opts.tol {
                return Ok(Inversion {
                    d,
                    iterations: iteration,
                    residual,
                });
            }
            if residual > 0.9 * prev {
                slow += 1;
                if slow >= 5 {
                    return Err(KpError::NonContraction {
                        iterations: iteration,
                        residual,
                    });
                }
            } else {
                slow = 0;
            }
            prev = residual;
            d.axpy(-1.0, &resid_field);
        }
        let residual = self.lambda_eps(ctx, &d)?.sub(g).hs_norm(opts.s);
        Err(KpError::MaxIterExceeded {
            iterations: opts.max_iter,
            residual,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InversionOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Sobolev index of the norm used for the residual.
    pub s: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 200,
            s: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub d: SpectralField,
    pub iterations: usize,
    pub residual: f64,
}

/// `d = (u_t - a - eps b - eps^2 c) / eps^3`.
pub fn extract_d(
    ctx: &OperatorContext,
    u_t: &SpectralField,
    u0: &SpectralField,
    t: f64,
    eps: f64,
) -> Result<SpectralField> {
    if eps == 0.0 {
        return Err(KpError::ZeroEps);
    }
    PicardBundle::new(ctx, u0, t, eps)?.extract_d(u_t)
}

/// `w` of the normal-form expansion of `v = u_t + eps S(u_t, u_t)`.
pub fn extract_w(
    ctx: &OperatorContext,
    u_t: &SpectralField,
    u0: &SpectralField,
    t: f64,
    eps: f64,
) -> Result<SpectralField> {
    if eps == 0.0 {
        return Err(KpError::ZeroEps);
    }
    PicardBundle::new(ctx, u0, t, eps)?.extract_w(ctx, u_t)
}
