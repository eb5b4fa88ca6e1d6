//! Staged Frostman measures with exact rational masses.

use num::{BigInt, One, Signed, ToPrimitive, Zero};

use crate::error::{LabError, Result};
use crate::exact::{big, int, log2_rat, rat, to_f64, Rational};
use crate::lattice::{ImplicitStage, IntervalSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    /// Uniform child count per parent (min over parents), lexicographic pick.
    Uniform,
    /// All children kept; sibling weights proportional to 1/(p-1) of their prime tag.
    PrimeWeighted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasureStage {
    pub set: IntervalSet,
    /// Index of each box's parent in the previous stage (0 for stage 1).
    pub parent: Vec<usize>,
    pub weight: Vec<Rational>,
    /// Uniform child count, if the stage is uniform.
    pub n: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasureTree {
    pub stages: Vec<MeasureStage>,
    pub weighting: Weighting,
    prefix: Vec<Rational>,
}

/// Anything that can report exact ball masses.
pub trait MassOracle {
    fn dim(&self) -> usize;
    fn ball_mass(&self, x: &[Rational], r: &Rational) -> Rational;
    fn deepest_radius(&self) -> Rational;
    fn in_support(&self, x: &[Rational]) -> bool;
}

fn tag_weight(p: u64) -> Rational {
    if p <= 1 {
        int(1)
    } else {
        rat(1, p as i64 - 1)
    }
}

pub fn build_measure_tree(sets: &[IntervalSet], weighting: Weighting) -> Result<MeasureTree> {
    assert!(!sets.is_empty(), "at least one stage");
    let mut stages: Vec<MeasureStage> = Vec::with_capacity(sets.len());
    for (k, set) in sets.iter().enumerate() {
        let groups: Vec<Vec<usize>> = if k == 0 {
            vec![(0..set.len()).collect()]
        } else {
            let prev = &stages[k - 1].set;
            let mut g = vec![Vec::new(); prev.len()];
            for (c, x) in set.centers.iter().enumerate() {
                if let Some(pi) = prev.find_box(x) {
                    g[pi].push(c);
                }
            }
            g
        };
        if let Some(pi) = groups.iter().position(|g| g.is_empty()) {
            return Err(LabError::EmptyParent { stage: k + 1, parent: pi });
        }
        let parent_w = |pi: usize| if k == 0 { int(1) } else { stages[k - 1].weight[pi].clone() };
        let mut chosen: Vec<(usize, usize, Rational)> = Vec::new();
        let n = match weighting {
            Weighting::Uniform => {
                let n = groups.iter().map(Vec::len).min().unwrap();
                for (pi, g) in groups.iter().enumerate() {
                    let w = parent_w(pi) / int(n as i64);
                    for &c in &g[..n] {
                        chosen.push((c, pi, w.clone()));
                    }
                }
                Some(n)
            }
            Weighting::PrimeWeighted => {
                for (pi, g) in groups.iter().enumerate() {
                    let total: Rational = g.iter().map(|&c| tag_weight(set.tags[c])).sum();
                    let pw = parent_w(pi);
                    for &c in g {
                        chosen.push((c, pi, &pw * tag_weight(set.tags[c]) / &total));
                    }
                }
                None
            }
        };
        chosen.sort_by_key(|t| t.0);
        let centers = chosen.iter().map(|t| set.centers[t.0].clone()).collect();
        let tags = chosen.iter().map(|t| set.tags[t.0]).collect();
        stages.push(MeasureStage {
            set: IntervalSet { dim: set.dim, radius: set.radius.clone(), centers, tags },
            parent: chosen.iter().map(|t| t.1).collect(),
            weight: chosen.into_iter().map(|t| t.2).collect(),
            n,
        });
    }
    let mut prefix = Vec::with_capacity(stages.last().unwrap().weight.len() + 1);
    let mut acc = Rational::zero();
    prefix.push(acc.clone());
    for w in &stages.last().unwrap().weight {
        acc += w;
        prefix.push(acc.clone());
    }
    Ok(MeasureTree { stages, weighting, prefix })
}

impl MeasureTree {
    pub fn deepest(&self) -> &MeasureStage {
        self.stages.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_total(&self, i: usize) -> Rational {
        self.stages[i - 1].weight.iter().sum()
    }

    /// Mass of the subtree under each stage-i box, as the stage-i weight.
    pub fn tagged_mass(&self, i: usize, tag: u64) -> Rational {
        let st = &self.stages[i - 1];
        st.weight.iter().zip(&st.set.tags).filter(|(_, &t)| t == tag).map(|(w, _)| w).sum()
    }

    /// Exact weighted sum of deepest boxes with indices in the range.
    fn range_mass(&self, r: std::ops::Range<usize>) -> Rational {
        &self.prefix[r.end] - &self.prefix[r.start]
    }
}

impl MassOracle for MeasureTree {
    fn dim(&self) -> usize {
        self.deepest().set.dim
    }

    /// Sum of weights of deepest boxes meeting [x-r, x+r]^d.
    fn ball_mass(&self, x: &[Rational], r: &Rational) -> Rational {
        let st = self.deepest();
        let reach = r + &st.set.radius;
        let range = st.set.first_coord_range(&(&x[0] - &reach), &(&x[0] + &reach));
        if st.set.dim == 1 {
            return self.range_mass(range);
        }
        range
            .filter(|&k| st.set.centers[k].iter().zip(x).all(|(c, y)| (c - y).abs() <= reach))
            .map(|k| st.weight[k].clone())
            .sum()
    }

    fn deepest_radius(&self) -> Rational {
        self.deepest().set.radius.clone()
    }

    fn in_support(&self, x: &[Rational]) -> bool {
        self.deepest().set.contains_point(x)
    }
}

// ---------------------------------------------------------------- implicit two-stage tree

/// Children of one parent: centers in (lo, hi] or [lo, hi], of which those ≤ `threshold` are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct ParentRange {
    pub lo: Rational,
    pub lo_open: bool,
    pub hi: Rational,
    pub threshold: Rational,
}

/// Two-stage uniform tree whose second stage is too large to list.
#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitTree {
    pub stage1: IntervalSet,
    pub w1: Rational,
    pub stage2: ImplicitStage,
    pub ranges: Vec<ParentRange>,
    pub n2: BigInt,
    pub w2: Rational,
}

/// Smallest center c of the stage with count_le(c) ≥ target, searched in [a, b].
fn kth_center(st: &ImplicitStage, mut a: Rational, mut b: Rational, target: &BigInt) -> Rational {
    let gap = st.gap_lower_bound();
    // invariant: count_le(a) < target ≤ count_le(b)
    while &b - &a >= gap {
        let mid = (&a + &b) / int(2);
        if &st.count_le(&mid) >= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    st.center_at_or_below(&b).expect("a center lies in the final bracket")
}

pub fn build_implicit_tree(stage1: &IntervalSet, stage2: ImplicitStage) -> Result<ImplicitTree> {
    if stage1.dim != 1 {
        return Err(LabError::ConstraintViolation("d=1".into()));
    }
    let r1 = &stage1.radius;
    let mut raw: Vec<(Rational, bool, Rational, BigInt)> = Vec::new();
    for (k, c) in stage1.centers.iter().enumerate() {
        let hi = &c[0] + r1;
        let (lo, lo_open) = match raw.last() {
            Some(prev) if prev.2 >= &c[0] - r1 => (prev.2.clone(), true),
            _ => (&c[0] - r1, false),
        };
        let avail = stage2.count_in(&lo, lo_open, &hi);
        if avail.is_zero() {
            return Err(LabError::EmptyParent { stage: 2, parent: k });
        }
        raw.push((lo, lo_open, hi, avail));
    }
    let n2 = raw.iter().map(|t| t.3.clone()).min().unwrap();
    let ranges = raw
        .into_iter()
        .map(|(lo, lo_open, hi, _)| {
            let below = if lo_open { stage2.count_le(&lo) } else { stage2.count_lt(&lo) };
            let start = if lo_open { lo.clone() } else { &lo - &stage2.gap_lower_bound() };
            let threshold = kth_center(&stage2, start, hi.clone(), &(below + &n2));
            ParentRange { lo, lo_open, hi, threshold }
        })
        .collect();
    let n1 = stage1.len() as i64;
    let w1 = rat(1, n1);
    let w2 = &w1 / big(&n2);
    Ok(ImplicitTree { stage1: stage1.clone(), w1, stage2, ranges, n2, w2 })
}

impl ImplicitTree {
    /// Number of selected children in the closed window [a, b].
    pub fn selected_in(&self, a: &Rational, b: &Rational) -> BigInt {
        let mut total = BigInt::zero();
        for pr in &self.ranges {
            if &pr.lo > b || &pr.threshold < a {
                continue;
            }
            let (lo, open) = if a > &pr.lo { (a.clone(), false) } else { (pr.lo.clone(), pr.lo_open) };
            let hi = if b < &pr.threshold { b.clone() } else { pr.threshold.clone() };
            total += self.stage2.count_in(&lo, open, &hi);
        }
        total
    }

    /// Selected stage-2 centers: count and the kept interval per parent.
    pub fn total_selected(&self) -> BigInt {
        &self.n2 * BigInt::from(self.stage1.len())
    }
}

impl MassOracle for ImplicitTree {
    fn dim(&self) -> usize {
        1
    }

    fn ball_mass(&self, x: &[Rational], r: &Rational) -> Rational {
        let reach = r + &self.stage2.radius;
        let n = self.selected_in(&(&x[0] - &reach), &(&x[0] + &reach));
        &self.w2 * big(&n)
    }

    fn deepest_radius(&self) -> Rational {
        self.stage2.radius.clone()
    }

    fn in_support(&self, x: &[Rational]) -> bool {
        !self.selected_in(&(&x[0] - &self.stage2.radius), &(&x[0] + &self.stage2.radius)).is_zero()
    }
}

// ---------------------------------------------------------------- statistics

pub fn ln_rat(x: &Rational) -> f64 {
    log2_rat(x) * std::f64::consts::LN_2
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrostmanSample {
    pub x: Vec<Rational>,
    pub r: Rational,
    pub mass: Rational,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrostmanStats {
    pub samples: Vec<FrostmanSample>,
    pub min_slope: f64,
    pub max_slope: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// log mass / log r over the samples; passes when the minimum is ≥ target - tolerance.
pub fn frostman_fit(tree: &dyn MassOracle, samples: &[(Vec<Rational>, Rational)], target: f64, tolerance: f64) -> FrostmanStats {
    let mut out = Vec::new();
    for (x, r) in samples {
        let mass = tree.ball_mass(x, r);
        let slope = if mass.is_positive() && r < &int(1) { ln_rat(&mass) / ln_rat(r) } else { f64::NAN };
        out.push(FrostmanSample { x: x.clone(), r: r.clone(), mass, slope });
    }
    let finite: Vec<f64> = out.iter().map(|s| s.slope).filter(|s| s.is_finite()).collect();
    let min_slope = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let max_slope = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    FrostmanStats { samples: out, min_slope, max_slope, target, tolerance, pass: !finite.is_empty() && min_slope >= target - tolerance }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageLowerMass {
    pub stage: usize,
    pub log2_q: f64,
    pub intervals: usize,
    pub min_mass: Rational,
    /// min_mass · q^(s+ε)
    pub constant: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerReport {
    pub stages: Vec<StageLowerMass>,
    pub exponent: f64,
    /// -log(m_last/m_first)/log(q_last/q_first)
    pub fitted: f64,
    pub pass: bool,
}

fn lower_report(stages: Vec<StageLowerMass>, exponent: f64) -> LowerReport {
    let first = &stages[0];
    let last = stages.last().unwrap();
    let positive = stages.iter().all(|s| s.min_mass.is_positive());
    let fitted = if stages.len() > 1 && positive {
        -(log2_rat(&last.min_mass) - log2_rat(&first.min_mass)) / (last.log2_q - first.log2_q)
    } else {
        f64::NAN
    };
    let pass = positive && (stages.len() == 1 || fitted <= exponent);
    LowerReport { stages, exponent, fitted, pass }
}

/// m·q^exponent, zero for an empty interval.
fn lower_constant(m: &Rational, exponent: f64, log2_q: f64) -> f64 {
    if m.is_positive() {
        (log2_rat(m) + exponent * log2_q).exp2()
    } else {
        0.0
    }
}

/// Interval of length (10q)^-1 centered at each selected stage-i center: its exact mass.
fn tenth_radius(log2_q: u64, base: u64) -> Rational {
    Rational::new(BigInt::one(), num::pow(BigInt::from(base), log2_q as usize) * 20)
}

/// Every (10 q_i)^-1 interval around a selected stage-i center has mass ≥ c q_i^(-s-ε),
/// with c fitted at the first stage.
pub fn frostman_lower_check(tree: &MeasureTree, qs: &crate::params::StageSequence, s: f64, eps: f64) -> LowerReport {
    let exponent = s + eps;
    let mut stages = Vec::new();
    for i in 1..=tree.depth() {
        let st = &tree.stages[i - 1];
        let r = tenth_radius(qs.exps[i - 1], qs.base);
        let min_mass = st.set.centers.iter().map(|c| tree.ball_mass(c, &r)).min().unwrap_or_else(Rational::zero);
        let lq = qs.log2_q(i);
        let constant = lower_constant(&min_mass, exponent, lq);
        stages.push(StageLowerMass { stage: i, log2_q: lq, intervals: st.set.len(), min_mass, constant });
    }
    lower_report(stages, exponent)
}

pub fn frostman_lower_check_implicit(tree: &ImplicitTree, qs: &crate::params::StageSequence, s: f64, eps: f64) -> LowerReport {
    let exponent = s + eps;
    let r1 = tenth_radius(qs.exps[0], qs.base);
    let m1 = tree.stage1.centers.iter().map(|c| tree.ball_mass(c, &r1)).min().unwrap();
    let lq1 = qs.log2_q(1);
    let mut stages = vec![StageLowerMass {
        stage: 1,
        log2_q: lq1,
        intervals: tree.stage1.len(),
        constant: lower_constant(&m1, exponent, lq1),
        min_mass: m1,
    }];
    // an interval around a selected stage-2 center meets only its own box when centers are ≥ 4ρ apart
    let r2 = tenth_radius(qs.exps[1], qs.base);
    let reach = &r2 + &tree.stage2.radius;
    let m2 = if tree.stage2.gap_lower_bound() > &reach * int(2) {
        tree.w2.clone()
    } else {
        // fall back to sampled thresholds
        tree.ranges.iter().map(|pr| tree.ball_mass(std::slice::from_ref(&pr.threshold), &r2)).min().unwrap()
    };
    let lq2 = qs.log2_q(2);
    stages.push(StageLowerMass {
        stage: 2,
        log2_q: lq2,
        intervals: tree.total_selected().to_usize().unwrap_or(usize::MAX),
        constant: lower_constant(&m2, exponent, lq2),
        min_mass: m2,
    });
    lower_report(stages, exponent)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalDimSample {
    pub x: Vec<Rational>,
    pub scales: Vec<Rational>,
    pub masses: Vec<Rational>,
    pub slopes: Vec<f64>,
}

pub fn local_dimension_profile(tree: &dyn MassOracle, points: &[Vec<Rational>], scales: &[Rational]) -> Result<Vec<LocalDimSample>> {
    points
        .iter()
        .map(|x| {
            if !tree.in_support(x) {
                return Err(LabError::PointOutsideSupport);
            }
            let masses: Vec<Rational> = scales.iter().map(|r| tree.ball_mass(x, r)).collect();
            let slopes = scales
                .iter()
                .zip(&masses)
                .map(|(r, m)| if r < &int(1) && m.is_positive() { ln_rat(m) / ln_rat(r) } else { f64::NAN })
                .collect();
            Ok(LocalDimSample { x: x.clone(), scales: scales.to_vec(), masses, slopes })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DimsSummary {
    pub coarse: Rational,
    pub fine: Rational,
    /// Minimum two-scale slope over deepest boxes.
    pub inf_slope: f64,
    pub inf_at: Vec<Rational>,
    pub inf_tag: u64,
    /// Mass-weighted median two-scale slope.
    pub typical_slope: f64,
    pub boxes: usize,
}

/// Two-scale slopes log(μ(B(x,fine))/μ(B(x,coarse)))/log(fine/coarse) at every deepest center.
pub fn dims_summary(tree: &MeasureTree, coarse: &Rational, fine: &Rational) -> DimsSummary {
    let st = tree.deepest();
    let denom = ln_rat(fine) - ln_rat(coarse);
    let mut rows: Vec<(f64, f64, usize)> = st
        .set
        .centers
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mf = tree.ball_mass(c, fine);
            let mc = tree.ball_mass(c, coarse);
            ((ln_rat(&mf) - ln_rat(&mc)) / denom, to_f64(&st.weight[k]), k)
        })
        .collect();
    let (inf_slope, _, inf_k) = rows.iter().copied().fold((f64::INFINITY, 0.0, 0), |a, b| if b.0 < a.0 { b } else { a });
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half: f64 = rows.iter().map(|r| r.1).sum::<f64>() / 2.0;
    let mut acc = 0.0;
    let mut typical = f64::NAN;
    for r in &rows {
        acc += r.1;
        if acc >= half {
            typical = r.0;
            break;
        }
    }
    DimsSummary {
        coarse: coarse.clone(),
        fine: fine.clone(),
        inf_slope,
        inf_at: st.set.centers[inf_k].clone(),
        inf_tag: st.set.tags[inf_k],
        typical_slope: typical,
        boxes: st.set.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(centers: &[(i64, i64)], r: Rational) -> IntervalSet {
        IntervalSet::new(1, r, centers.iter().map(|&(a, b)| vec![rat(a, b)]).collect(), vec![1; centers.len()])
    }

    #[test]
    fn min_rule_and_lexicographic_pick() {
        let s1 = set(&[(1, 4), (3, 4)], rat(1, 8));
        let mut kids: Vec<(i64, i64)> = (0..5).map(|k| (8 + k, 64)).collect();
        kids.extend((0..7).map(|k| (40 + k, 64)));
        let s2 = set(&kids, rat(1, 128));
        let t = build_measure_tree(&[s1, s2], Weighting::Uniform).unwrap();
        assert_eq!(t.stages[1].n, Some(5));
        assert_eq!(t.deepest().set.centers[5][0], rat(40, 64));
        assert!(t.deepest().weight.iter().all(|w| w == &rat(1, 10)));
        assert_eq!(t.stage_total(2), int(1));
    }
}
