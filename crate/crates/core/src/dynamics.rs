//! Integrating-factor RK4 for the truncated system
//! `du_n/dt = i omega_n u_n - (i n1 eps / 2) sum_{k+l=n} u_k u_l`.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{KpError, Result};
use crate::lattice::SpectralField;
use crate::multilinear::OperatorContext;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Step size; the sign is taken from `t_end`.
    pub dt: f64,
    /// Record every `record_stride` steps. The final state is always recorded.
    pub record_stride: usize,
}

impl IntegratorConfig {
    pub fn new(dt: f64, record_stride: usize) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(KpError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if record_stride == 0 {
            return Err(KpError::InvalidParameter("record_stride must be positive".into()));
        }
        Ok(Self { dt, record_stride })
    }

    /// `0.5 / (1 + max |omega|)` over the box.
    pub fn default_dt(ctx: &OperatorContext) -> f64 {
        0.5 / (1.0 + ctx.lattice().max_abs_omega())
    }

    /// Starts at [`Self::default_dt`] and halves until the step-halving
    /// difference of the final state is below `tol` (at most 30 halvings).
    pub fn calibrate(
        ctx: &OperatorContext,
        u0: &SpectralField,
        eps: f64,
        t_end: f64,
        tol: f64,
    ) -> Result<Self> {
        let mut dt = Self::default_dt(ctx);
        let mut coarse = evolve(ctx, u0, eps, t_end, dt)?;
        for _ in 0..30 {
            let fine = evolve(ctx, u0, eps, t_end, 0.5 * dt)?;
            if coarse.max_abs_diff(&fine) < tol {
                return Self::new(dt, 1);
            }
            dt *= 0.5;
            coarse = fine;
        }
        Self::new(dt, 1)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Monotone sample times starting at 0, decreasing for backward runs.
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub eps: f64,
    pub u0: SpectralField,
    /// Signed integrator step.
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &SpectralField {
        self.states.last().expect("trajectory always holds u0")
    }

    /// Keeps every `k`-th sample.
    pub fn subsample(&self, k: usize) -> Trajectory {
        let k = k.max(1);
        Trajectory {
            times: self.times.iter().step_by(k).copied().collect(),
            states: self.states.iter().step_by(k).cloned().collect(),
            eps: self.eps,
            u0: self.u0.clone(),
            dt: self.dt,
        }
    }

    /// Rows `t,n1,n2,re,im`, one per mode and sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,n1,n2,re,im")?;
        for (t, state) in self.times.iter().zip(&self.states) {
            for (n, c) in state.iter() {
                writeln!(out, "{:.16e},{},{},{:.16e},{:.16e}", t, n.n1, n.n2, c.re, c.im)?;
            }
        }
        Ok(())
    }
}

struct Stepper<'a> {
    ctx: &'a OperatorContext,
    eps: f64,
    u: Vec<Complex64>,
    prod: Vec<Complex64>,
    phases: Vec<Complex64>,
    stages: [Vec<Complex64>; 5],
}

impl<'a> Stepper<'a> {
    fn new(ctx: &'a OperatorContext, eps: f64) -> Self {
        let zeros = vec![Complex64::new(0.0, 0.0); ctx.lattice().len()];
        Self {
            ctx,
            eps,
            u: zeros.clone(),
            prod: zeros.clone(),
            phases: zeros.clone(),
            stages: std::array::from_fn(|_| zeros.clone()),
        }
    }

    /// `dw/dt = -(eps/2) e^{-i omega t} dx_product(u, u)` with `u = e^{i omega t} w`.
    fn rhs(&mut self, t: f64, w: &[Complex64], out: &mut [Complex64]) {
        let omega = self.ctx.dispersion().values();
        for (p, &om) in self.phases.iter_mut().zip(omega) {
            *p = Complex64::cis(om * t);
        }
        for ((u, w), p) in self.u.iter_mut().zip(w).zip(&self.phases) {
            *u = w * p;
        }
        self.ctx.dx_product_into(&self.u, &self.u, &mut self.prod);
        let half = -0.5 * self.eps;
        for ((o, p), ph) in out.iter_mut().zip(&self.prod).zip(&self.phases) {
            *o = p * ph.conj() * half;
        }
    }

    fn step(&mut self, t: f64, h: f64, w: &mut [Complex64]) {
        let [mut k1, mut k2, mut k3, mut k4, mut tmp] = std::mem::take(&mut self.stages);
        self.rhs(t, w, &mut k1);
        for i in 0..w.len() {
            tmp[i] = w[i] + k1[i] * (0.5 * h);
        }
        self.rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..w.len() {
            tmp[i] = w[i] + k2[i] * (0.5 * h);
        }
        self.rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..w.len() {
            tmp[i] = w[i] + k3[i] * h;
        }
        self.rhs(t + h, &tmp, &mut k4);
        for i in 0..w.len() {
            w[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
        self.stages = [k1, k2, k3, k4, tmp];
    }
}

fn to_u(ctx: &OperatorContext, w: &[Complex64], t: f64) -> Result<SpectralField> {
    let omega = ctx.dispersion().values();
    let coeffs = w
        .iter()
        .zip(omega)
        .map(|(w, &om)| w * Complex64::cis(om * t))
        .collect();
    SpectralField::from_vec(ctx.lattice(), coeffs)
}

fn step_plan(t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !dt.is_finite() || dt <= 0.0 || !t_end.is_finite() {
        return Err(KpError::InvalidParameter(format!(
            "bad step plan: dt = {dt}, t_end = {t_end}"
        )));
    }
    let steps = (t_end.abs() / dt).ceil() as usize;
    if steps == 0 {
        return Ok((0, 0.0));
    }
    Ok((steps, t_end / steps as f64))
}

/// Integrates from 0 to `t_end` (which may be negative). The step is shrunk
/// so that a whole number of steps lands on `t_end`.
pub fn integrate(
    ctx: &OperatorContext,
    u0: &SpectralField,
    eps: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if u0.lattice() != ctx.lattice() {
        return Err(KpError::BoxMismatch);
    }
    let (steps, h) = step_plan(t_end, cfg.dt)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![u0.clone()],
        eps,
        u0: u0.clone(),
        dt: h,
    };
    let mut w = u0.coeffs().to_vec();
    let mut stepper = Stepper::new(ctx, eps);
    for s in 0..steps {
        let t = s as f64 * h;
        stepper.step(t, h, &mut w);
        let t_next = (s + 1) as f64 * h;
        if w.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(KpError::NonFinite { t: t_next });
        }
        if (s + 1) % cfg.record_stride == 0 || s + 1 == steps {
            traj.times.push(t_next);
            traj.states.push(to_u(ctx, &w, t_next)?);
        }
    }
    Ok(traj)
}

/// Final state only.
pub fn evolve(
    ctx: &OperatorContext,
    u0: &SpectralField,
    eps: f64,
    t_end: f64,
    dt: f64,
) -> Result<SpectralField> {
    if u0.lattice() != ctx.lattice() {
        return Err(KpError::BoxMismatch);
    }
    let (steps, h) = step_plan(t_end, dt)?;
    let mut w = u0.coeffs().to_vec();
    let mut stepper = Stepper::new(ctx, eps);
    for s in 0..steps {
        stepper.step(s as f64 * h, h, &mut w);
    }
    if w.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(KpError::NonFinite { t: t_end });
    }
    to_u(ctx, &w, t_end)
}

/// States at each of the increasing nonnegative `times`, stepping with at
/// most `dt` between consecutive targets.
pub fn evolve_to_times(
    ctx: &OperatorContext,
    u0: &SpectralField,
    eps: f64,
    times: &[f64],
    dt: f64,
) -> Result<Vec<SpectralField>> {
    if u0.lattice() != ctx.lattice() {
        return Err(KpError::BoxMismatch);
    }
    let mut w = u0.coeffs().to_vec();
    let mut stepper = Stepper::new(ctx, eps);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        if target < t {
            return Err(KpError::InvalidParameter("times must be increasing".into()));
        }
        let (steps, h) = step_plan(target - t, dt)?;
        for s in 0..steps {
            stepper.step(t + s as f64 * h, h, &mut w);
        }
        t = target;
        if w.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(KpError::NonFinite { t });
        }
        out.push(to_u(ctx, &w, t)?);
    }
    Ok(out)
}

/// How the time derivative of `v` is differenced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifferencingFrame {
    /// Centered difference of `e^{-i omega t} v`, rotated back. The free flow
    /// is differenced exactly.
    Rotated,
    /// Centered difference of `v` itself minus `L v`.
    Lab,
}

/// `max_t || dv/dt - L v - eps^2 F(u,u,u) ||_{H^s}` over interior samples,
/// with `v = u + eps S(u,u)` and the derivative taken in the rotated frame.
pub fn normal_form_residual(ctx: &OperatorContext, traj: &Trajectory, s: f64) -> Result<f64> {
    normal_form_residual_in(ctx, traj, s, DifferencingFrame::Rotated)
}

pub fn normal_form_residual_in(
    ctx: &OperatorContext,
    traj: &Trajectory,
    s: f64,
    frame: DifferencingFrame,
) -> Result<f64> {
    if traj.len() < 3 {
        return Err(KpError::TooFewSamples {
            got: traj.len(),
            need: 3,
        });
    }
    let eps = traj.eps;
    let omega = ctx.dispersion().values();
    let v: Vec<SpectralField> = traj
        .states
        .iter()
        .map(|u| Ok(u.add_scaled(&ctx.s_map(u, u)?, eps)))
        .collect::<Result<_>>()?;
    let rotate = |f: &SpectralField, t: f64, sign: f64| -> SpectralField {
        let mut out = f.clone();
        for (c, &om) in out.coeffs_mut().iter_mut().zip(omega) {
            *c *= Complex64::cis(sign * om * t);
        }
        out
    };
    let mut worst: f64 = 0.0;
    for i in 1..traj.len() - 1 {
        let (tm, t, tp) = (traj.times[i - 1], traj.times[i], traj.times[i + 1]);
        let span = tp - tm;
        let deriv = match frame {
            DifferencingFrame::Rotated => {
                let diff = rotate(&v[i + 1], tp, -1.0).sub(&rotate(&v[i - 1], tm, -1.0));
                rotate(&diff.scale_real(1.0 / span), t, 1.0)
            }
            DifferencingFrame::Lab => v[i + 1]
                .sub(&v[i - 1])
                .scale_real(1.0 / span)
                .sub(&v[i].apply_l()),
        };
        let source = ctx.f_cubic(&traj.states[i])?.scale_real(eps * eps);
        worst = worst.max(deriv.sub(&source).hs_norm(s));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{apply_free_flow, LatticeBox};

    fn field(lattice: LatticeBox) -> SpectralField {
        SpectralField::real_from_fn(lattice, |n| {
            let a = (n.n1 * 7 + n.n2 * 3) as f64;
            Complex64::new(a.sin(), a.cos()) * (0.6 / n.l1_norm().powi(2))
        })
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::new(0.0, 1).is_err());
        assert!(IntegratorConfig::new(-1.0, 1).is_err());
        assert!(IntegratorConfig::new(0.1, 0).is_err());
    }

    #[test]
    fn free_flow_exact() {
        let lat = LatticeBox::new(3, 3).unwrap();
        let ctx = OperatorContext::new(lat);
        let u0 = field(lat);
        let cfg = IntegratorConfig::new(0.01, 10).unwrap();
        let traj = integrate(&ctx, &u0, 0.0, 1.5, &cfg).unwrap();
        assert_eq!(traj.len(), 16);
        for (t, u) in traj.times.iter().zip(&traj.states) {
            assert!(u.relative_diff(&apply_free_flow(&u0, *t)) < 1e-12);
        }
    }

    #[test]
    fn backward_run_times_decrease() {
        let lat = LatticeBox::new(2, 1).unwrap();
        let ctx = OperatorContext::new(lat);
        let u0 = field(lat);
        let cfg = IntegratorConfig::new(0.05, 1).unwrap();
        let traj = integrate(&ctx, &u0, 0.3, -1.0, &cfg).unwrap();
        assert!(traj.times.windows(2).all(|w| w[1] < w[0]));
        assert!((traj.times.last().unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_needs_three_samples() {
        let lat = LatticeBox::new(1, 1).unwrap();
        let ctx = OperatorContext::new(lat);
        let u0 = field(lat);
        let cfg = IntegratorConfig::new(0.5, 1).unwrap();
        let traj = integrate(&ctx, &u0, 0.1, 0.5, &cfg).unwrap();
        assert_eq!(
            normal_form_residual(&ctx, &traj, 1.0),
            Err(KpError::TooFewSamples { got: 2, need: 3 })
        );
    }

    #[test]
    fn blow_up_reported() {
        let lat = LatticeBox::new(2, 2).unwrap();
        let ctx = OperatorContext::new(lat);
        let u0 = field(lat).scale_real(1e6);
        let cfg = IntegratorConfig::new(0.5, 1).unwrap();
        let err = integrate(&ctx, &u0, 1.0, 100.0, &cfg).unwrap_err();
        assert!(matches!(err, KpError::NonFinite { .. }));
    }
}
