use diolab::exact::{int, rat, to_f64, Rational};
use diolab::lattice::{build_stage, ImplicitStage, IntervalSet, StageMode};
use diolab::measure::*;
use diolab::params::{GrowthMode, ParamSet, StageSequence};
use diolab::LabError;
use proptest::prelude::*;

fn seq(exps: Vec<u64>) -> StageSequence {
    StageSequence { base: 2, compliant: vec![true; exps.len()], exps, mode: GrowthMode::Explicit }
}

fn lattice_tree(exps: Vec<u64>) -> (MeasureTree, IntervalSet, ParamSet, StageSequence) {
    let ps = ParamSet::one_dim(int(0), rat(1, 2), GrowthMode::Explicit, exps.len());
    let qs = seq(exps);
    let sets: Vec<IntervalSet> = (1..=qs.len()).map(|i| build_stage(i, &ps, &qs, &StageMode::AllH).unwrap()).collect();
    let first = sets[0].clone();
    (build_measure_tree(&sets, Weighting::Uniform).unwrap(), first, ps, qs)
}

#[test]
fn gamma_zero_first_stage() {
    // q₁ = 64, centers m/8 on [0,1)
    let (tree, ..) = lattice_tree(vec![6]);
    assert_eq!(tree.stages[0].n, Some(8));
    assert!(tree.stages[0].weight.iter().all(|w| *w == rat(1, 8)));
}

#[test]
fn single_box_has_unit_weight() {
    let one = IntervalSet::new(1, rat(1, 10), vec![vec![rat(1, 2)]], vec![1]);
    let tree = build_measure_tree(&[one], Weighting::Uniform).unwrap();
    assert_eq!(tree.stages[0].weight, vec![int(1)]);
}

#[test]
fn min_rule_picks_lexicographically() {
    let parents = IntervalSet::new(1, rat(1, 8), vec![vec![rat(1, 4)], vec![rat(3, 4)]], vec![1, 1]);
    let mut kids: Vec<Vec<Rational>> = (0..5).map(|k| vec![rat(1, 4) + rat(k, 100)]).collect();
    kids.extend((0..7).map(|k| vec![rat(3, 4) - rat(k, 100)]));
    let n = kids.len();
    let children = IntervalSet::new(1, rat(1, 1000), kids, vec![1; n]);
    let tree = build_measure_tree(&[parents, children], Weighting::Uniform).unwrap();
    let st = &tree.stages[1];
    assert_eq!(st.n, Some(5));
    assert_eq!(st.set.len(), 10);
    assert!(st.weight.iter().all(|w| *w == rat(1, 10)));
    // the 5 smallest under the second parent
    let under2: Vec<Rational> = st.set.centers.iter().filter(|c| c[0] > rat(1, 2)).map(|c| c[0].clone()).collect();
    assert_eq!(under2, (2..7).rev().map(|k| rat(3, 4) - rat(k, 100)).collect::<Vec<_>>());
}

#[test]
fn empty_parent_is_an_error() {
    let parents = IntervalSet::new(1, rat(1, 8), vec![vec![rat(1, 4)], vec![rat(3, 4)]], vec![1, 1]);
    let children = IntervalSet::new(1, rat(1, 1000), vec![vec![rat(1, 4)]], vec![1]);
    assert!(matches!(build_measure_tree(&[parents, children], Weighting::Uniform), Err(LabError::EmptyParent { stage: 2, parent: 1 })));
}

#[test]
fn ball_mass_examples() {
    let (tree, s1, ..) = lattice_tree(vec![4, 12]);
    assert_eq!(tree.ball_mass(&[rat(1, 2)], &int(1)), int(1));
    let deep = &tree.deepest().set;
    let tiny = rat(1, 1 << 20);
    assert_eq!(tree.ball_mass(&deep.centers[3], &tiny), tree.deepest().weight[3]);
    // a parent box carries n₂·w₂ = 1/n₁
    let n1 = s1.len() as i64;
    assert_eq!(tree.ball_mass(&s1.centers[1], &(&s1.radius - rat(1, 1 << 13))), rat(1, n1));
    for i in 1..=tree.depth() {
        assert_eq!(tree.stage_total(i), int(1));
    }
}

#[test]
fn uniform_measure_has_slope_one() {
    let n = 1024i64;
    let centers = (0..n).map(|k| vec![rat(2 * k + 1, 2 * n)]).collect();
    let tree = build_measure_tree(&[IntervalSet::new(1, rat(1, 2 * n), centers, vec![1; n as usize])], Weighting::Uniform).unwrap();
    // μ(B(x,r)) = 2r up to one box, so the slope is 1 + ln 2 / ln r
    let samples: Vec<(Vec<Rational>, Rational)> = [4i64, 16, 64].iter().map(|&r| (vec![rat(1, 2)], rat(1, r))).collect();
    let fit = frostman_fit(&tree, &samples, 1.0, 0.6);
    for s in &fit.samples {
        let r = s.r.to_string().trim_start_matches("1/").parse::<f64>().unwrap().recip();
        assert!((s.slope - (1.0 + 2f64.ln() / r.ln())).abs() < 0.02, "{s:?}");
    }
    assert!(fit.pass);
    let prof = local_dimension_profile(&tree, &[vec![rat(1, 3)]], &[rat(1, 8), rat(1, 64)]).unwrap();
    let m = &prof[0].masses;
    let two_scale = (to_f64(&m[0]) / to_f64(&m[1])).ln() / 8f64.ln();
    assert!((two_scale - 1.0).abs() < 0.05, "{two_scale}");
}

#[test]
fn lattice_frostman_slopes() {
    // γ = 0, β = 1/2, q₁ = 2^12: slope ≈ 1/2 at r = q₁⁻¹
    let ps = ParamSet::one_dim(int(0), rat(1, 2), GrowthMode::Explicit, 2);
    let qs = seq(vec![12, 40]);
    let s1 = build_stage(1, &ps, &qs, &StageMode::AllH).unwrap();
    let tree = build_implicit_tree(&s1, ImplicitStage::new(2, &ps, &qs, &StageMode::AllH).unwrap()).unwrap();
    let x = vec![s1.centers[5][0].clone()];
    for j in [12usize] {
        let fit = frostman_fit(&tree, &[(x.clone(), rat(1, 1) / int(2).pow(j as i32))], 0.5, 0.1);
        assert!((fit.min_slope - 0.5).abs() <= 0.1, "r = 2^-{j}: {}", fit.min_slope);
    }
}

#[test]
fn one_prime_window_holds_all_mass() {
    let ps = ParamSet::one_dim(rat(1, 2), rat(1, 4), GrowthMode::Explicit, 1);
    let qs = seq(vec![4]);
    let s1 = build_stage(1, &ps, &qs, &StageMode::PrimesExcluding).unwrap();
    let tree = build_measure_tree(&[s1], Weighting::PrimeWeighted).unwrap();
    assert_eq!(tree.tagged_mass(1, 3), int(1));
    let low = frostman_lower_check(&tree, &qs, 0.75, 0.1);
    assert!(low.pass && low.stages[0].min_mass == rat(1, 4));
}

#[test]
fn outside_support_is_an_error() {
    let (tree, ..) = lattice_tree(vec![4]);
    assert_eq!(local_dimension_profile(&tree, &[vec![rat(1, 8)]], &[rat(1, 8)]), Err(LabError::PointOutsideSupport));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn implicit_tree_matches_explicit(num in 0i64..4096, j in 1u32..14) {
        let (tree, s1, ps, qs) = lattice_tree(vec![4, 12]);
        let imp = build_implicit_tree(&s1, ImplicitStage::new(2, &ps, &qs, &StageMode::AllH).unwrap()).unwrap();
        let x = vec![rat(num, 4096)];
        let r = rat(1, 1i64 << j);
        prop_assert_eq!(tree.ball_mass(&x, &r), imp.ball_mass(&x, &r));
    }

    #[test]
    fn ball_mass_monotone_and_bounded(num in 0i64..1000, a in 1i64..500, b in 1i64..500) {
        let (tree, ..) = lattice_tree(vec![4, 12]);
        let x = vec![rat(num, 1000)];
        let (r1, r2) = (rat(a.min(b), 1000), rat(a.max(b), 1000));
        let (m1, m2) = (tree.ball_mass(&x, &r1), tree.ball_mass(&x, &r2));
        prop_assert!(m1 <= m2 && m2 <= int(1) && m1 >= int(0));
    }
}
