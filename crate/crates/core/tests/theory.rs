mod common;

use common::adaptive_simpson;
use kpnf_core::ensemble::{normalize_profile, RandomLaw, SpectrumProfile};
use kpnf_core::theory::{box_limit_f2, box_limit_parts, PairConvention, TheoryContext, TripleConvention};
use kpnf_core::{LatticeBox, WaveVector};
use num_complex::Complex64;

fn theory(lat: LatticeBox, law: RandomLaw) -> TheoryContext {
    let prof = SpectrumProfile::power_decay(lat, 1.0, 3.0).unwrap();
    let prof = normalize_profile(&prof, &law, 1.5).unwrap();
    TheoryContext::new(prof, &law).unwrap()
}

fn laws() -> [RandomLaw; 2] {
    [RandomLaw::steinhaus(), RandomLaw::TwoPoint { r1: 0.3, r2: 1.4, p: 0.5 }]
}

#[test]
fn pair_rate_is_time_derivative() {
    for law in laws() {
        let th = theory(LatticeBox::new(3, 3).unwrap(), law);
        let (t, h) = (0.7, 1e-4);
        for n in th.lattice().modes() {
            let fd = (th.f2_diag(n, t + h, PairConvention::Integral) - th.f2_diag(n, t - h, PairConvention::Integral))
                / (2.0 * h);
            let g = th.g_n_rate(n, t);
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-6), "{n}: {fd} vs {g}");
        }
    }
}

#[test]
fn pair_coefficient_is_integral_of_rate() {
    for law in laws() {
        let th = theory(LatticeBox::new(3, 2).unwrap(), law);
        let t = 1.3;
        for n in th.lattice().modes() {
            let q = adaptive_simpson(&|s| vec![Complex64::new(th.g_n_rate(n, s), 0.0)], 0.0, t, 1e-13)[0].re;
            let f = th.f2_diag(n, t, PairConvention::Integral);
            assert!((q - f).abs() <= 1e-10, "{n}: {q} vs {f}");
            assert_eq!(th.f2_diag(n, t, PairConvention::Reversed), -f);
        }
    }
}

#[test]
fn triple_gauge_derivative_matches_h() {
    for law in laws() {
        let th = theory(LatticeBox::new(2, 2).unwrap(), law);
        let lat = th.lattice();
        let (t, h) = (0.9, 1e-5);
        for conv in TripleConvention::ALL {
            for m in lat.modes() {
                for p in lat.modes() {
                    let Some(n) = (-m).checked_sub(p).filter(|n| lat.contains(*n)) else {
                        continue;
                    };
                    let big_omega = kpnf_core::omega(n) + kpnf_core::omega(m) + kpnf_core::omega(p);
                    let gauged = |s: f64| Complex64::cis(-big_omega * s) * th.f3(n, m, p, s, conv);
                    let fd = (gauged(t + h) - gauged(t - h)) / (2.0 * h);
                    let hv = th.h_nmp(n, m, p, t, conv);
                    assert!((fd - hv).norm() <= 1e-7 * hv.norm().max(1e-8));
                }
            }
        }
    }
}

#[test]
fn weighted_sums_stay_below_majorants() {
    for law in laws() {
        let th = theory(LatticeBox::new(4, 4).unwrap(), law);
        let sums = th.weighted_sums(1.5, TripleConvention::Derived);
        assert!(sums.triple_count() > 0);
        for i in 0..=200 {
            let t = 0.5 * i as f64;
            assert!(sums.pair(t) <= sums.pair_majorant);
            assert!(sums.triple(t) <= sums.triple_majorant);
        }
    }
}

#[test]
fn majorants_grow_with_the_box() {
    let law = RandomLaw::steinhaus();
    let mut last = (0.0, 0.0);
    for n in 1..=4 {
        let lat = LatticeBox::square(n).unwrap();
        let prof = SpectrumProfile::power_decay(lat, 0.5, 3.0).unwrap();
        let th = TheoryContext::new(prof, &law).unwrap();
        let s = th.weighted_sums(1.0, TripleConvention::Derived);
        assert!(s.pair_majorant >= last.0 && s.triple_majorant >= last.1);
        last = (s.pair_majorant, s.triple_majorant);
    }
}

#[test]
fn box_profile_limit() {
    let n = WaveVector::new(1, 0).unwrap();
    let mut last = f64::INFINITY;
    for big_n in [4, 8, 16, 32] {
        let lambda = (big_n as f64).powf(-0.25);
        let parts = box_limit_parts(n, big_n, lambda, 1.0, 1.0, 2.0).unwrap();
        assert!(parts.interior.abs() <= 1e-13 * parts.boundary.abs());
        let f = parts.total().abs();
        assert!(f < last);
        last = f;
        // the proof's bound: |F| <= C sum over outside l of |n1| |l1| lambda^4 / Delta^2
        assert!(f <= lambda.powi(4));
    }
    // constant lambda: ratio bounded too
    let r4 = box_limit_f2(n, 4, 1.0, 1.0, 1.0, 2.0).unwrap();
    let r32 = box_limit_f2(n, 32, 1.0, 1.0, 1.0, 2.0).unwrap();
    assert!(r32.abs() <= r4.abs());
}
