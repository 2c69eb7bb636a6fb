mod common;

use common::{adaptive_simpson, field, max_abs, max_diff, rk4};
use kpnf_core::dynamics::{evolve, integrate, IntegratorConfig};
use kpnf_core::lattice::apply_free_flow;
use kpnf_core::picard::{extract_d, extract_w, f_integral, picard_b, picard_c, InversionOptions, PicardBundle};
use kpnf_core::{LatticeBox, OperatorContext, SpectralField};
use num_complex::Complex64;

fn rotate(ctx: &OperatorContext, v: &[Complex64], t: f64) -> Vec<Complex64> {
    v.iter()
        .enumerate()
        .map(|(i, c)| c * Complex64::cis(ctx.omega_at(i) * t))
        .collect()
}

fn as_field(ctx: &OperatorContext, v: Vec<Complex64>) -> SpectralField {
    SpectralField::from_vec(ctx.lattice(), v).unwrap()
}

#[test]
fn b_matches_first_picard_iterate() {
    let lat = LatticeBox::new(3, 3).unwrap();
    let ctx = OperatorContext::new(lat);
    let u0 = field(lat, 1, 1.0);
    let t = 0.5;
    // beta' = -1/2 e^{-i omega s} dx(a, a)
    let beta = rk4(&vec![Complex64::new(0.0, 0.0); lat.len()], 0.0, t, 4000, |s, _| {
        let a = apply_free_flow(&u0, s);
        let p = ctx.dx_product(&a, &a).unwrap();
        rotate(&ctx, p.coeffs(), -s).iter().map(|c| c * -0.5).collect()
    });
    let b_num = rotate(&ctx, &beta, t);
    let b = picard_b(&ctx, &u0, t).unwrap();
    let err = max_diff(b.coeffs(), &b_num);
    assert!(err < 1e-8, "b error {err}");
}

#[test]
fn c_matches_second_picard_iterate() {
    let lat = LatticeBox::new(3, 3).unwrap();
    let ctx = OperatorContext::new(lat);
    let u0 = field(lat, 2, 1.0);
    let t = 0.5;
    let len = lat.len();
    // (beta, gamma) with gamma' = -e^{-i omega s} dx(a, b)
    let y = rk4(&vec![Complex64::new(0.0, 0.0); 2 * len], 0.0, t, 4000, |s, y| {
        let a = apply_free_flow(&u0, s);
        let b = as_field(&ctx, rotate(&ctx, &y[..len], s));
        let mut out = rotate(&ctx, ctx.dx_product(&a, &a).unwrap().coeffs(), -s);
        out.iter_mut().for_each(|c| *c *= -0.5);
        let g = rotate(&ctx, ctx.dx_product(&a, &b).unwrap().coeffs(), -s);
        out.extend(g.iter().map(|c| -c));
        out
    });
    let c_num = rotate(&ctx, &y[len..], t);
    let c = picard_c(&ctx, &u0, t).unwrap();
    let err = max_diff(c.coeffs(), &c_num);
    assert!(err < 1e-7, "c error {err}");
    assert!(max_abs(&c_num) > 1e-3);
}

#[test]
fn f_matches_quadrature() {
    let lat = LatticeBox::new(2, 2).unwrap();
    let ctx = OperatorContext::new(lat);
    let u0 = field(lat, 3, 1.0);
    let t = 1.0;
    let integrand = |s: f64| {
        let a = apply_free_flow(&u0, s);
        let fa = ctx.f_cubic(&a).unwrap();
        rotate(&ctx, fa.coeffs(), -s)
    };
    let q = rotate(&ctx, &adaptive_simpson(&integrand, 0.0, t, 1e-12), t);
    let f = f_integral(&ctx, &u0, t).unwrap();
    let err = max_diff(f.coeffs(), &q);
    assert!(err < 1e-9, "f error {err}");
}

#[test]
fn f_solves_forced_linear_equation() {
    let lat = LatticeBox::new(2, 2).unwrap();
    let ctx = OperatorContext::new(lat);
    let u0 = field(lat, 4, 1.0);
    let t = 0.8;
    let resid = |h: f64| {
        let fp = f_integral(&ctx, &u0, t + h).unwrap();
        let fm = f_integral(&ctx, &u0, t - h).unwrap();
        let f = f_integral(&ctx, &u0, t).unwrap();
        let a = apply_free_flow(&u0, t);
        let lhs = fp.sub(&fm).scale_real(0.5 / h).sub(&f.apply_l());
        lhs.sub(&ctx.f_cubic(&a).unwrap()).max_abs()
    };
    let (r1, r2) = (resid(1e-3), resid(5e-4));
    let ratio = r1 / r2;
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}, residuals {r1} {r2}");
    assert!(r1 < 1e-3);
}

#[test]
fn d_depends_weakly_on_eps() {
    let lat = LatticeBox::new(2, 2).unwrap();
    let ctx = OperatorContext::new(lat);
    let u0 = field(lat, 5, 1.0);
    let t = 1.0;
    let dt = 1e-3;
    let d = |eps: f64| {
        let u = evolve(&ctx, &u0, eps, t, dt).unwrap();
        extract_d(&ctx, &u, &u0, t, eps).unwrap()
    };
    let (d1, d2, d3) = (d(0.1), d(0.05), d(0.025));
    let (e1, e2) = (d1.max_abs_diff(&d2), d2.max_abs_diff(&d3));
    let ratio = e1 / e2;
    assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
    assert!(e1 < 0.2 * d1.max_abs());
}

#[test]
fn w_decomposition_on_evolved_samples() {
    let lat = LatticeBox::new(3, 3).unwrap();
    let ctx = OperatorContext::new(lat);
    for seed in 0..5 {
        let u0 = field(lat, 10 + seed, 5.0);
        let (t, eps) = (0.9, 0.1);
        let u = evolve(&ctx, &u0, eps, t, 5e-3).unwrap();
        let bundle = PicardBundle::new(&ctx, &u0, t, eps).unwrap();
        let d = bundle.extract_d(&u).unwrap();
        let w = bundle.extract_w(&ctx, &u).unwrap();
        let w_alt = bundle.w_from_d(&ctx, &d).unwrap();
        assert!(w.relative_diff(&w_alt) < 1e-10, "{}", w.relative_diff(&w_alt));
    }
}

#[test]
fn amplitude_rescaling() {
    // u -> 2u with eps -> eps/2 maps solutions to solutions
    let lat = LatticeBox::new(2, 2).unwrap();
    let ctx = OperatorContext::new(lat);
    let u0 = field(lat, 6, 1.0);
    let (t, eps) = (1.2, 0.2);
    let u = evolve(&ctx, &u0, eps, t, 1e-3).unwrap();
    let u0_2 = u0.scale_real(2.0);
    let u_2 = evolve(&ctx, &u0_2, 0.5 * eps, t, 1e-3).unwrap();
    assert!(u_2.relative_diff(&u.scale_real(2.0)) < 1e-13);
    let d = extract_d(&ctx, &u, &u0, t, eps).unwrap();
    let d_2 = extract_d(&ctx, &u_2, &u0_2, t, 0.5 * eps).unwrap();
    assert!(d_2.relative_diff(&d.scale_real(16.0)) < 1e-9);
    let w = extract_w(&ctx, &u, &u0, t, eps).unwrap();
    let w_2 = extract_w(&ctx, &u_2, &u0_2, t, 0.5 * eps).unwrap();
    assert!(w_2.relative_diff(&w.scale_real(16.0)) < 1e-9);
}

#[test]
fn inverse_is_two_lipschitz() {
    let lat = LatticeBox::new(2, 2).unwrap();
    let ctx = OperatorContext::new(lat);
    let opts = InversionOptions::default();
    for seed in 0..10 {
        let u0 = field(lat, 20 + seed, 1.0);
        let bundle = PicardBundle::new(&ctx, &u0, 1.0, 0.1).unwrap();
        let g1 = field(lat, 100 + seed, 3.0);
        let g2 = g1.add(&field(lat, 200 + seed, 0.5));
        let d1 = bundle.invert_lambda_eps(&ctx, &g1, &opts).unwrap().d;
        let d2 = bundle.invert_lambda_eps(&ctx, &g2, &opts).unwrap().d;
        let lhs = d1.sub(&d2).hs_norm(opts.s);
        let rhs = g1.sub(&g2).hs_norm(opts.s);
        assert!(lhs <= 2.0 * rhs, "{lhs} > 2 * {rhs}");
        let back = bundle.lambda_eps(&ctx, &d1).unwrap();
        assert!(back.sub(&g1).hs_norm(opts.s) <= opts.tol);
    }
}

#[test]
fn trajectory_extraction_at_time_zero() {
    let lat = LatticeBox::new(2, 1).unwrap();
    let ctx = OperatorContext::new(lat);
    let u0 = field(lat, 7, 1.0);
    let traj = integrate(&ctx, &u0, 0.1, 0.1, &IntegratorConfig::new(0.01, 1).unwrap()).unwrap();
    let d0 = extract_d(&ctx, &traj.states[0], &u0, traj.times[0], 0.1).unwrap();
    assert_eq!(d0.max_abs(), 0.0);
}
