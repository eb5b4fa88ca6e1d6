mod common;

use std::collections::BTreeMap;

use common::{integrate_pieces, product_knots, SpatialStage};
use diolab::exact::rat;
use diolab::lattice::StageMode;
use diolab::params::{generate_sequence, GrowthMode, ParamSet, SequenceOptions, StageSequence};
use diolab::spectrum::*;
use num_complex::Complex64;
use proptest::prelude::*;

const PI: f64 = std::f64::consts::PI;

fn seq(exps: Vec<u64>) -> StageSequence {
    StageSequence { base: 2, compliant: vec![true; exps.len()], exps, mode: GrowthMode::Explicit }
}

/// q = 16, q^β = 2, 𝒫 = {3}
fn single_three() -> StageFactor {
    StageFactor::primes(1, &seq(vec![4]), &rat(1, 4), vec![3], BumpProfile::default()).unwrap()
}

fn relaxed_pair() -> Vec<StageFactor> {
    let ps = ParamSet::one_dim(rat(1, 2), rat(1, 4), GrowthMode::Relaxed, 2);
    let qs = generate_sequence(&ps, &SequenceOptions::default()).unwrap();
    stage_factors(&ps, &qs, &StageMode::PrimesExcluding, BumpProfile::default()).unwrap()
}

#[test]
fn phi_hat_examples() {
    assert_eq!(BumpProfile::new(4).phi_hat(0.0), 1.0);
    assert!(BumpProfile::new(2).phi_hat(1.0).abs() < 1e-15);
    assert!((BumpProfile::new(4).phi_hat(1.0) - (2.0 / PI).powi(4)).abs() < 1e-15);
}

#[test]
fn bump_is_a_probability_density() {
    for n in [2u32, 4, 6] {
        let b = BumpProfile::new(n);
        let (mass, _) = integrate_pieces(|x| (b.phi(x), 0.0), &b.knots(), n as usize);
        assert!((mass - 1.0).abs() < 1e-13, "n={n}: {mass}");
        assert_eq!(b.phi(1.0), 0.0);
        assert_eq!(b.phi(-1.5), 0.0);
        assert!(b.phi(0.1) > 0.0 && b.phi(-0.1) > 0.0);
    }
    assert!((BumpProfile::new(4).phi(0.0) - 4.0 / 3.0).abs() < 1e-14);
}

#[test]
fn phi_coeff_examples() {
    let b = BumpProfile::default();
    assert!((phi_coeff(3, 0, 16.0, 2, &b).re - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(phi_coeff(3, 1, 16.0, 2, &b).re, 0.0);
    assert!((phi_coeff(3, 2, 16.0, 2, &b).re + b.phi_hat(1.0 / 8.0) / 3.0).abs() < 1e-15);
    assert_eq!(phi_amplitude(3, 6, 2), rat(2, 3));
    assert_eq!(phi_amplitude(3, 4, 2), rat(-1, 3));
}

#[test]
fn f_coeff_examples() {
    let f = single_three();
    let b = BumpProfile::default();
    assert!((f.coeff(0) - 1.0).abs() < 1e-15);
    for n in -5i128..=5 {
        assert!((f.coeff(6 * n) - b.phi_hat(6.0 * n as f64 / 16.0)).abs() < 1e-15);
    }
    assert!((f.coeff(2) + b.phi_hat(1.0 / 8.0) / 2.0).abs() < 1e-15);
    assert_eq!(f.coeff(3), 0.0);
}

#[test]
fn density_examples() {
    let f = single_three();
    assert_eq!(evaluate_density(std::slice::from_ref(&f), &rat(0, 1)), 0.0);
    assert!((evaluate_density(std::slice::from_ref(&f), &rat(1, 6)) - 16.0 / 3.0).abs() < 1e-12);
    let st = SpatialStage { n: 4, q: 16.0, qb: 2, primes: vec![3] };
    let (mass, _) = integrate_pieces(|x| (f.spatial_f64(x), 0.0), &product_knots(&[st]), 4);
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn delta_is_the_identity() {
    let f = single_three();
    let fk = f_coeffs(&f, 200).unwrap();
    let g = product_spectrum(&SparseSpectrum::delta0(), &fk, 100, 1e-6).unwrap();
    for k in -100..=100 {
        assert!((g.get(k) - fk.get(k)).norm() < 1e-15);
    }
}

#[test]
fn spectrum_is_hermitian_with_unit_mass() {
    let g = build_spectrum(&relaxed_pair(), &EngineConfig::new(512, 1e-6)).unwrap();
    assert!(g.hermitian_defect() < 1e-12);
    let m = mass_window_check(&g).unwrap();
    assert!(m.drift < 0.5, "{m:?}");
    let g1 = build_spectrum(&relaxed_pair()[..1], &EngineConfig::new(512, 1e-6)).unwrap();
    assert!(mass_window_check(&g1).unwrap().drift < 1e-15);
}

#[test]
fn mass_escape_is_an_error() {
    let mut map = BTreeMap::new();
    map.insert(0i128, Complex64::new(2.0, 0.0));
    let g = SparseSpectrum::from_map(map, 0, 0.0, 0.0, vec![]);
    assert!(mass_window_check(&g).is_err());
}

#[test]
fn fit_recovers_exact_power_law() {
    for gamma in [0.25, 0.5, 0.8] {
        let shells: Vec<Shell> = (1..20).map(|j| {
            let m = 2f64.powf(-(j as f64) * gamma);
            Shell { j, max: m, upper: m, argmax: 1 << j, exact: true }
        }).collect();
        let fit = fit_fourier_dimension(&shells, &FitOptions { band: None, divisor_prime: None }).unwrap();
        assert!((fit.estimate - 2.0 * gamma).abs() < 1e-9, "{gamma}: {}", fit.estimate);
    }
}

#[test]
fn smoothed_mass_of_uniform_measure() {
    let psi = BumpProfile::default();
    for r in [0.01, 0.1, 0.3] {
        assert!((fourier_side_ball_mass(&SparseSpectrum::delta0(), 0.4, r, &psi) - r).abs() < 1e-15);
    }
}

#[test]
fn transfer_of_uniform_is_delta() {
    let t = transfer_rescale(&SparseSpectrum::delta0(), 4, 64.0, &BumpProfile::default());
    assert_eq!(t.get(0), Complex64::new(1.0, 0.0));
    assert!(t.entries.iter().all(|&(k, v)| k == 0 || v.norm() == 0.0));
}

#[test]
fn last_stage_matches_full_build() {
    let f = relaxed_pair();
    let cfg = EngineConfig::new(256, 1e-6);
    let full = build_spectrum(&f, &cfg).unwrap();
    let last = LastStage::new(&f[..1], f[1].clone(), Some(256), &cfg).unwrap();
    for k in -256..=256 {
        assert!((last.coeff(k) - full.get(k).re).abs() < 1e-9, "k={k}");
    }
    let dense = build_dense(&f, &cfg).unwrap();
    for k in -256..=256 {
        assert!((dense.get(k) - full.get(k).re).abs() < 1e-9, "k={k}");
    }
    let want = shell_maxima(&full);
    for s in last.shells().unwrap() {
        if let Some(w) = want.iter().find(|w| w.j == s.j) {
            assert!(s.max <= w.max + 1e-9 && w.max <= s.upper + 1e-9, "shell {}: {s:?} vs {w:?}", s.j);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bump_decay_envelope(n in 2u32..10, xi in 0.01f64..1e4) {
        let b = BumpProfile::new(n);
        let v = b.phi_hat(xi).abs();
        prop_assert!(v <= b.envelope(xi) * (1.0 + 1e-12));
        prop_assert!(v <= 1.0 + 1e-15);
        prop_assert!((b.phi_hat(-xi) - b.phi_hat(xi)).abs() < 1e-15);
    }

    #[test]
    fn single_stage_spectrum_hermitian(p_idx in 0usize..4, k in -300i128..300) {
        let p = [3u64, 5, 7, 11][p_idx];
        let f = StageFactor::primes(1, &seq(vec![8]), &rat(1, 4), vec![p], BumpProfile::default()).unwrap();
        prop_assert_eq!(f.coeff(k), f.coeff(-k));
        prop_assert!(f.coeff(k).abs() <= 1.0 + 1e-15);
    }
}
