//! One PASS/FAIL line per acceptance criterion; exits 1 if any fails.

mod common;

use std::time::Instant;

use common::{phi_coeff_oracle, product_coeffs, SpatialStage};
use diolab::exact::{int, rat, Rational, RealPower};
use diolab::lattice::{build_stage, min_gap, ImplicitStage, StageMode};
use diolab::measure::{build_implicit_tree, build_measure_tree, frostman_fit, frostman_lower_check_implicit, MeasureTree, Weighting};
use diolab::params::{generate_sequence, standard_window, GrowthMode, ParamSet, SequenceOptions, StageSequence};
use diolab::projections::{piecewise_f, product_direction_bound, sumset_sweep, AbcParams};
use diolab::restriction::{implicit_dims_report, knapp_indicator, nongeometric_window, restriction_ratio, RestrictionParams};
use diolab::spectrum::*;
use num::{BigInt, One};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn seq(ps: &ParamSet, explicit: Option<Vec<u64>>) -> StageSequence {
    generate_sequence(ps, &SequenceOptions { explicit, ..Default::default() }).expect("sequence")
}

fn spatial(f: &[StageFactor]) -> Vec<SpatialStage> {
    f.iter()
        .map(|f| SpatialStage {
            n: f.profile.order,
            q: f.q,
            qb: f.qb as u64,
            primes: match &f.kind {
                FactorKind::Primes { primes, .. } => primes.clone(),
                FactorKind::Lattice => vec![],
            },
        })
        .collect()
}

/// γ = 1/2, β = 1/4: q₁ = 16 with window {3}, relaxed q₂ = 2^12.
fn small_factors() -> Vec<StageFactor> {
    let ps = ParamSet::one_dim(rat(1, 2), rat(1, 4), GrowthMode::Relaxed, 2);
    let qs = seq(&ps, None);
    stage_factors(&ps, &qs, &StageMode::PrimesExcluding, BumpProfile::default()).expect("factors")
}

fn c1_exact_formulas() -> Outcome {
    let f = small_factors();
    let prof = BumpProfile::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let st = &f[rng.gen_range(0..f.len())];
        let primes = match &st.kind {
            FactorKind::Primes { primes, .. } => primes,
            FactorKind::Lattice => unreachable!(),
        };
        let p = primes[rng.gen_range(0..primes.len())];
        let span = 4 * st.q as i64;
        let k = rng.gen_range(-span..=span);
        let got = phi_coeff(p, k as i128, st.q, st.qb, &prof);
        let (re, im) = phi_coeff_oracle(4, p, k, st.q as u64, st.qb as u64);
        worst = worst.max((got.re - re).abs()).max((got.im - im).abs());
    }
    let mut exact = true;
    for st in &f {
        if let FactorKind::Primes { primes, .. } = &st.kind {
            for &p in primes {
                exact &= phi_amplitude(p, 0, st.qb) == int(1) - rat(1, p as i64);
            }
        }
        exact &= st.c_exact(0) == int(1) && prof.phi_hat(0.0) == 1.0 && st.coeff(0) == 1.0;
    }
    outcome(worst <= 1e-9 && exact, format!("max |Φ̂ - quadrature| = {worst:.2e} over 1000 triples; Φ̂(0) = 1-1/p and F̂(0) = 1 exact: {exact}"))
}

fn c2_spectrum_oracle(g2_out: &mut Option<SparseSpectrum>) -> Outcome {
    let f = small_factors();
    let kmax = 256i128;
    let r1 = f[0].radius_for(1e-12);
    let g1 = product_spectrum(&SparseSpectrum::delta0(), &f_coeffs(&f[0], r1).unwrap(), r1, 1e-6).unwrap();
    let g2 = product_spectrum(&g1, &f_coeffs(&f[1], r1 + kmax).unwrap(), kmax, 1e-6).unwrap();
    let sp = spatial(&f);
    let ks: Vec<i64> = (-256..=256).collect();
    let want1 = product_coeffs(&sp[..1], &ks);
    let want2 = product_coeffs(&sp, &ks);
    let mut worst = 0.0f64;
    for (j, &k) in ks.iter().enumerate() {
        for (g, w) in [(&g1, want1[j]), (&g2, want2[j])] {
            let v = g.get(k as i128);
            worst = worst.max((v.re - w.0).abs()).max((v.im - w.1).abs());
        }
    }
    let window: Vec<u64> = match &f[0].kind {
        FactorKind::Primes { primes, .. } => primes.clone(),
        FactorKind::Lattice => vec![],
    };
    *g2_out = Some(g2);
    outcome(worst <= 1e-9 && window == vec![3] && f[0].q == 16.0, format!("q₁ = 16, window {window:?}, K = 256: max deviation {worst:.2e} for Ĝ₁ and Ĝ₂"))
}

fn c3_separation() -> Outcome {
    let mut checked = 0usize;
    let mut failures = 0usize;
    let mut tightest = f64::INFINITY;
    let cases = [((1, 4), (1, 4)), ((1, 10), (3, 5)), ((3, 10), (1, 5)), ((1, 3), (0, 1)), ((1, 6), (1, 2)), ((2, 5), (1, 10))];
    for (g, b) in cases {
        let ps = ParamSet::one_dim(rat(g.0, g.1), rat(b.0, b.1), GrowthMode::Explicit, 1);
        let s = ps.s();
        let unit = ps.exponent_unit();
        let mut e = unit;
        while e <= 24 {
            let qs = StageSequence { base: 2, exps: vec![e], mode: GrowthMode::Explicit, compliant: vec![true] };
            let stage = match build_stage(1, &ps, &qs, &StageMode::PrimesExcluding) {
                Ok(st) if st.len() >= 2 => st,
                _ => {
                    e += unit;
                    continue;
                }
            };
            let gap = min_gap(&stage).unwrap();
            // gap ≥ q^(-s)  ⇔  gap·q^s ≥ 1
            let ok = RealPower::new(gap.clone(), BigInt::from(2), &s * int(e as i64)).ge(&int(1));
            checked += 1;
            failures += usize::from(!ok);
            tightest = tightest.min(diolab::exact::log2_rat(&gap) + diolab::exact::to_f64(&s) * e as f64);
            e += unit;
        }
    }
    outcome(failures == 0 && checked > 20, format!("{checked} stages with q ≤ 2^24, {failures} failures, tightest log₂(gap·q^s) = {tightest:.3}"))
}

fn c4_box_dimension() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (g, b) in [((0, 1), (1, 2)), ((1, 4), (1, 4)), ((1, 10), (3, 5))] {
        let ps = ParamSet::one_dim(rat(g.0, g.1), rat(b.0, b.1), GrowthMode::Strict, 2);
        let qs = seq(&ps, None);
        let mode = if g.0 == 0 { StageMode::AllH } else { StageMode::PrimesExcluding };
        let s1 = build_stage(1, &ps, &qs, &mode).unwrap();
        let s2 = ImplicitStage::new(2, &ps, &qs, &mode).unwrap();
        let cells = s2.cover_count_at_radius(Some(&s1)).unwrap();
        let est = diolab::exact::log2_int(&cells) / qs.log2_q(2);
        let target = diolab::exact::to_f64(&ps.target_dim());
        let ok = (est - target).abs() <= 0.1 && qs.compliant.iter().all(|&c| c);
        pass &= ok;
        parts.push(format!("({},{}) q₂=2^{} est {est:.4} target {target}", diolab::exact::to_f64(&ps.gamma), diolab::exact::to_f64(ps.beta()), qs.exps[1]));
    }
    outcome(pass, parts.join("; "))
}

fn lazy_fit(g: (i64, i64), b: (i64, i64)) -> (FourierFit, f64) {
    let ps = ParamSet::one_dim(rat(g.0, g.1), rat(b.0, b.1), GrowthMode::Strict, 2);
    let qs = seq(&ps, None);
    let mode = if g.0 == 0 { StageMode::AllH } else { StageMode::PrimesExcluding };
    let f = stage_factors(&ps, &qs, &mode, BumpProfile::default()).unwrap();
    let lazy = LazyLastStage::new(&f[..1], f[1].clone(), None, &EngineConfig::new(0, 1e-6)).unwrap();
    let fit = fit_fourier_dimension(&lazy.shells(), &FitOptions { band: Some(f[1].q), divisor_prime: f[1].smallest_prime() }).unwrap();
    (fit, lazy.coeff(0))
}

fn c5_fourier_fit(g0: &mut Vec<f64>) -> Outcome {
    let (geo, m1) = lazy_fit((1, 4), (1, 4));
    let (flat, m2) = lazy_fit((0, 1), (1, 2));
    g0.extend([m1, m2]);
    let pass = (geo.slope + 0.25).abs() <= 0.15 && flat.estimate <= 0.1;
    outcome(pass, format!("(0.25,0.25): slope {:.4} (dimension {:.4}); γ = 0: dimension {:.4}", geo.slope, geo.estimate, flat.estimate))
}

fn c6_mass_window(g2: &SparseSpectrum, extra: &[f64]) -> Outcome {
    let mut vals = vec![g2.get(0).re];
    vals.extend_from_slice(extra);
    let ok = mass_window_check(g2).is_ok() && vals.iter().all(|v| (0.5..=1.5).contains(v));
    outcome(ok, format!("Ĝ_m(0) over {} multi-stage spectra: {}", vals.len(), vals.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")))
}

fn c7_frostman() -> Outcome {
    let ps = ParamSet::one_dim(rat(0, 1), rat(1, 2), GrowthMode::Strict, 2);
    let qs = generate_sequence(&ps, &SequenceOptions { first_exp: Some(12), ..Default::default() }).unwrap();
    let s1 = build_stage(1, &ps, &qs, &StageMode::AllH).unwrap();
    let s2 = ImplicitStage::new(2, &ps, &qs, &StageMode::AllH).unwrap();
    let tree = build_implicit_tree(&s1, s2).unwrap();
    let mut samples = Vec::new();
    let xs: Vec<Rational> = s1.centers.iter().step_by(7).map(|c| c[0].clone()).chain(tree.ranges.iter().step_by(5).map(|r| r.threshold.clone())).collect();
    let top = qs.exps[1] as i64;
    for x in &xs {
        // radii between the two stage scales, q₂⁻¹ ≤ r ≤ q₁⁻¹
        for j in [qs.exps[0] as i64, 13, 16, 20, 40, 60, 90, 120, 121, 122, 150, 200, top] {
            samples.push((vec![x.clone()], Rational::new(BigInt::one(), num::pow(BigInt::from(2), j as usize))));
        }
    }
    let s = 0.5;
    let fit = frostman_fit(&tree, &samples, s, 0.15);
    let low = frostman_lower_check_implicit(&tree, &qs, s, 0.1);
    outcome(
        fit.pass && low.pass,
        format!("(0,0.5) q = 2^{:?}: min slope {:.4} over {} samples (need ≥ {:.2}); lower check fitted {:.4} ≤ {:.2}", qs.exps, fit.min_slope, fit.samples.len(), s - 0.15, low.fitted, low.exponent),
    )
}

/// γ = 3/10, β = 1/5, q = (2^10, 2^30), prime-weighted.
fn knapp_tree() -> (MeasureTree, StageSequence) {
    let ps = ParamSet::one_dim(rat(3, 10), rat(1, 5), GrowthMode::Relaxed, 2);
    let qs = seq(&ps, Some(vec![10, 30]));
    let s1 = build_stage(1, &ps, &qs, &StageMode::PrimesExcluding).unwrap();
    let s2 = build_stage(2, &ps, &qs, &StageMode::PrimesExcluding).unwrap();
    (build_measure_tree(&[s1, s2], Weighting::PrimeWeighted).unwrap(), qs)
}

fn c8_c9_knapp(tree: &MeasureTree, qs: &StageSequence) -> (Outcome, Outcome) {
    let params = RestrictionParams::from_gamma_beta(0.3, 0.2, 3.0, 2.0).unwrap();
    let mut min_ratio = f64::INFINITY;
    let mut dist_ok = true;
    let mut worst_dist = 0.0f64;
    let mut evaluated = 0u64;
    let mut certs = [Vec::new(), Vec::new()];
    for i in 1..=2 {
        let w = standard_window(qs, i, &rat(3, 10)).unwrap();
        let n = w.primes.len();
        for (k, &p) in w.primes.iter().enumerate() {
            let ind = knapp_indicator(tree, qs, &rat(1, 5), &w, i, p).unwrap();
            let eval = i == 1 || k == 0 || k + 1 == n || k == n / 2;
            let r = restriction_ratio(&ind, &params, eval).unwrap();
            if eval {
                min_ratio = min_ratio.min(r.min_ext_ratio);
                dist_ok &= r.distance_ok;
                worst_dist = worst_dist.max(r.distance_bound);
                evaluated += r.dual_count;
            }
            certs[i - 1].push(r.certificate);
        }
    }
    let c8 = outcome(
        min_ratio >= 0.22 && dist_ok,
        format!("min |ext|/μ(E) = {min_ratio:.4} over {evaluated} dual points; max |xξ - mk| = {worst_dist:.6} ≤ 1/10 exact: {dist_ok}"),
    );
    let best1 = certs[0].iter().copied().fold(0.0, f64::max);
    let worst2 = certs[1].iter().copied().fold(f64::INFINITY, f64::min);
    let growth = worst2 / best1;
    let need = ((qs.log2_q(2) - qs.log2_q(1)) * 0.015).exp2();
    let c9 = outcome(growth >= need, format!("certificate growth {growth:.4} (min over stage-2 primes / max over stage-1) ≥ {need:.4}; exponent {:.5}", params.exponent()));
    (c8, c9)
}

fn c10_nongeometric(g0: &mut Vec<f64>) -> Outcome {
    let (a, b) = (rat(1, 2), rat(4, 5));
    let ps = ParamSet::one_dim(int(0), int(0), GrowthMode::Explicit, 2);
    let qs = seq(&ps, Some(vec![3, 36]));
    let mode = StageMode::Nongeometric { a: a.clone(), b: b.clone() };
    let f = stage_factors(&ps, &qs, &mode, BumpProfile::default()).unwrap();
    let last = ConvLastStage::new(&f[..1], f[1].clone(), None, &EngineConfig::new(0, 1e-6)).unwrap();
    g0.push(last.coeff(0));
    let shells = last.shells().unwrap();
    let fit = fit_fourier_dimension(&shells, &FitOptions { band: Some(f[1].q), divisor_prime: f[1].smallest_prime() }).unwrap();
    let exact = shells.iter().filter(|s| s.exact).count();
    let s1 = build_stage(1, &ps, &qs, &mode).unwrap();
    let t1 = build_measure_tree(&[s1], Weighting::PrimeWeighted).unwrap();
    let w = nongeometric_window(&a, &b, &int(0), 2, &qs).unwrap();
    let d = implicit_dims_report(&t1, &qs, &w.primes, 1, 0.5, 0.8, 0.0, 0.1).unwrap();
    let pass = d.inf_slope <= 0.6 && fit.estimate >= 0.6 && (d.typical_slope - 0.8).abs() <= 0.15;
    outcome(
        pass,
        format!(
            "q = 2^{:?}: inf slope {:.4} (tag {}), Fourier fit {:.4} ({} of {} shells exact), typical slope {:.4} over {} boxes",
            qs.exps,
            d.inf_slope,
            d.inf_tag,
            fit.estimate,
            exact,
            shells.len(),
            d.typical_slope,
            d.boxes
        ),
    )
}

fn c11_projections() -> Outcome {
    let abc = AbcParams::new(rat(2, 5), rat(2, 5), rat(1, 5)).unwrap();
    let qs = StageSequence { base: 2, exps: vec![20], mode: GrowthMode::Explicit, compliant: vec![true] };
    let rows = sumset_sweep(&abc, &qs, 1, 1).unwrap();
    let worst = rows.iter().map(|r| r.count).max().unwrap_or(0);
    let covers = !rows.is_empty() && rows.iter().all(|r| r.pass && r.count <= 3 * 1024);
    // special cases on a rational grid with s₁ ≥ s₂ ≥ s₃
    let mut cases = 0;
    let mut exact = true;
    for a in 1..=10i64 {
        for b in 1..=a {
            for c in 1..=b {
                let (s1, s2, s3) = (rat(a, 10), rat(b, 10), rat(c, 10));
                for t in 0..=20i64 {
                    let t = rat(t, 10);
                    let v = product_direction_bound(&s1, &s2, &s3, &t, &int(1));
                    if t <= &s1 - &s2 {
                        exact &= v == (&s1 + &s3).min(int(1));
                        cases += 1;
                    } else if t <= &s1 + &s2 {
                        exact &= v == ((&s1 + &s2 + &t) / int(2) + &s3).min(int(1));
                        cases += 1;
                    }
                    let f = piecewise_f(&s1, &s2, &s3, &t);
                    exact &= if t <= int(1) + &s1 - &s2 { f == &s1 + &s3 } else { f == (&s1 + &s2 + &t - int(1)) / int(2) + &s3 };
                }
            }
        }
    }
    outcome(covers && exact, format!("{} values of c at q = 2^20, max cover {worst} ≤ 3072; {cases} special cases exact: {exact}", rows.len()))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("{} criterion {n:>2} {name}: {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o, secs));
    };
    let mut g2 = None;
    let mut g0 = Vec::new();
    run(1, "exact formulas", &mut c1_exact_formulas);
    run(2, "spectrum oracle", &mut || c2_spectrum_oracle(&mut g2));
    run(3, "separation", &mut c3_separation);
    run(4, "box dimension", &mut c4_box_dimension);
    run(5, "Fourier fit", &mut || c5_fourier_fit(&mut g0));
    run(10, "nongeometric dissociation", &mut || c10_nongeometric(&mut g0));
    run(6, "mass window", &mut || c6_mass_window(g2.as_ref().unwrap(), &g0));
    run(7, "Frostman two-sided", &mut c7_frostman);
    let (tree, qs) = knapp_tree();
    let (c8, c9) = c8_c9_knapp(&tree, &qs);
    run(8, "Knapp lower bound", &mut || Outcome { pass: c8.pass, detail: c8.detail.clone() });
    run(9, "ratio blowup", &mut || Outcome { pass: c9.pass, detail: c9.detail.clone() });
    run(11, "projection covers", &mut c11_projections);
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
