//! The second-order coefficient of E|u_n|^2 is E(|b_n|^2 + 2 Re(a_n conj c_n))
//! and the first-order coefficient of E(u_n u_m u_p) is
//! E(b_n a_m a_p + a_n b_m a_p + a_n a_m b_p). Both are sampled here from the
//! closed-form iterates (no time stepping) and compared with the theory.

use kpnf_core::ensemble::{accumulate, all_triples, normalize_profile, sample_u0, RandomLaw, SpectrumProfile};
use kpnf_core::picard::PicardBundle;
use kpnf_core::theory::{PairConvention, TheoryContext, TripleConvention};
use kpnf_core::{LatticeBox, OperatorContext};
use num_complex::Complex64;

struct Oracle {
    pair_z: Vec<(f64, f64)>,
    triple_z: Vec<[f64; 3]>,
}

fn run(law: RandomLaw, samples: u64, t: f64) -> Oracle {
    let lat = LatticeBox::new(2, 2).unwrap();
    let ctx = OperatorContext::new(lat);
    let prof = SpectrumProfile::power_decay(lat, 1.0, 1.2).unwrap();
    let prof = normalize_profile(&prof, &law, 1.0).unwrap().scaled(3.0);
    let theory = TheoryContext::new(prof.clone(), &law).unwrap();
    let modes: Vec<_> = lat.modes().collect();
    let triples = all_triples(lat, true);
    let idx: Vec<[usize; 3]> = triples
        .iter()
        .map(|&(n, m, p)| [lat.index_of(n).unwrap(), lat.index_of(m).unwrap(), lat.index_of(p).unwrap()])
        .collect();
    let width = modes.len() + triples.len();
    let (acc, _) = accumulate(samples, width, false, |i| {
        let u0 = sample_u0(&prof, &law, 2024, i);
        let pb = PicardBundle::new(&ctx, &u0, t, 1.0)?;
        let (a, b, c) = (pb.a.coeffs(), pb.b.coeffs(), pb.c.coeffs());
        let mut row: Vec<Complex64> = (0..modes.len())
            .map(|n| Complex64::new(b[n].norm_sqr() + 2.0 * (a[n] * c[n].conj()).re, 0.0))
            .collect();
        row.extend(
            idx.iter()
                .map(|&[n, m, p]| b[n] * a[m] * a[p] + a[n] * b[m] * a[p] + a[n] * a[m] * b[p]),
        );
        Ok(row)
    })
    .unwrap();
    let pair_z = modes
        .iter()
        .zip(&acc)
        .map(|(&n, s)| {
            let z = |conv| (s.mean - theory.f2_diag(n, t, conv)).norm() / s.std_error();
            (z(PairConvention::Integral), z(PairConvention::Reversed))
        })
        .collect();
    let triple_z = triples
        .iter()
        .zip(&acc[modes.len()..])
        .map(|(&(n, m, p), s)| {
            TripleConvention::ALL.map(|conv| (s.mean - theory.f3(n, m, p, t, conv)).norm() / s.std_error())
        })
        .collect();
    Oracle { pair_z, triple_z }
}

fn check(law: RandomLaw) {
    let o = run(law, 40_000, 1.0);
    let worst_pair = o.pair_z.iter().map(|z| z.0).fold(0.0, f64::max);
    let worst_reversed = o.pair_z.iter().map(|z| z.1).fold(0.0, f64::max);
    assert!(worst_pair < 4.0, "pair z = {worst_pair}");
    assert!(worst_reversed > 10.0, "reversed sign not rejected: {worst_reversed}");
    let worst = |k: usize| o.triple_z.iter().map(|z| z[k]).fold(0.0, f64::max);
    eprintln!(
        "{law:?}: pair {worst_pair:.2} / reversed {worst_reversed:.1}; triple derived {:.2} negated {:.1} cross-indexed {:.1}",
        worst(0),
        worst(1),
        worst(2)
    );
    assert!(worst(0) < 4.0, "derived triple z = {}", worst(0));
    assert!(worst(1) > 10.0);
    assert!(worst(2) > 10.0);
}

#[test]
fn steinhaus_coefficients() {
    check(RandomLaw::steinhaus());
}

#[test]
fn two_point_coefficients() {
    check(RandomLaw::TwoPoint { r1: 0.3, r2: 1.6, p: 0.4 });
}
