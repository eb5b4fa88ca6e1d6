//! Staged box sets with exact rational centers, intersections, pruning and cover counts.

use std::collections::HashSet;

use num::{BigInt, Integer, One, Signed, ToPrimitive, Zero};

use crate::error::{too_large, LabError, Result};
use crate::exact::{big, ceil, floor, int, log2_int, rat, Rational, RealPower};
use crate::params::{nongeometric_prime_window, standard_window, ParamSet, PrimeWindow, StageSequence};

/// Upper limit on centers materialized by one build.
pub const MAX_MATERIALIZED: u64 = 6_000_000;

#[derive(Clone, Debug, PartialEq)]
pub enum StageMode {
    /// Union over all integers 1 ≤ H ≤ q^γ.
    AllH,
    /// H ranges over the prime window.
    Primes,
    /// Prime window, numerators in pℤ removed.
    PrimesExcluding,
    /// Window (q^(a-b/2-β), q^(b/2)], numerators in pℤ removed.
    Nongeometric { a: Rational, b: Rational },
}

impl StageMode {
    pub fn name(&self) -> &'static str {
        match self {
            StageMode::AllH => "all_h",
            StageMode::Primes => "primes",
            StageMode::PrimesExcluding => "primes_excluding",
            StageMode::Nongeometric { .. } => "nongeometric",
        }
    }

    fn excludes(&self) -> bool {
        matches!(self, StageMode::PrimesExcluding | StageMode::Nongeometric { .. })
    }
}

/// Sorted union of closed boxes `[c - r, c + r]^d` with a common radius.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalSet {
    pub dim: usize,
    pub radius: Rational,
    pub centers: Vec<Vec<Rational>>,
    /// The H (or prime) whose lattice produced each center; smallest one after dedup.
    pub tags: Vec<u64>,
}

impl IntervalSet {
    pub fn new(dim: usize, radius: Rational, centers: Vec<Vec<Rational>>, tags: Vec<u64>) -> Self {
        let mut s = IntervalSet { dim, radius, centers, tags };
        s.canonicalize();
        s
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Sort lexicographically and merge duplicate centers.
    pub fn canonicalize(&mut self) {
        let mut idx: Vec<usize> = (0..self.centers.len()).collect();
        idx.sort_by(|&a, &b| self.centers[a].cmp(&self.centers[b]).then(self.tags[a].cmp(&self.tags[b])));
        let mut centers = Vec::with_capacity(idx.len());
        let mut tags = Vec::with_capacity(idx.len());
        for k in idx {
            if centers.last() == Some(&self.centers[k]) {
                continue;
            }
            centers.push(self.centers[k].clone());
            tags.push(self.tags[k]);
        }
        self.centers = centers;
        self.tags = tags;
    }

    pub fn contains_point(&self, x: &[Rational]) -> bool {
        self.find_box(x).is_some()
    }

    /// First box (in canonical order) containing `x`.
    pub fn find_box(&self, x: &[Rational]) -> Option<usize> {
        let lo = &x[0] - &self.radius;
        let start = self.centers.partition_point(|c| c[0] < lo);
        for k in start..self.centers.len() {
            let c = &self.centers[k];
            if c[0] > &x[0] + &self.radius {
                break;
            }
            if c.iter().zip(x).all(|(a, b)| (a - b).abs() <= self.radius) {
                return Some(k);
            }
        }
        None
    }

    /// Indices of boxes whose first coordinate lies in [lo, hi].
    pub fn first_coord_range(&self, lo: &Rational, hi: &Rational) -> std::ops::Range<usize> {
        let a = self.centers.partition_point(|c| &c[0] < lo);
        let b = self.centers.partition_point(|c| &c[0] <= hi);
        a..b.max(a)
    }
}

fn window_for(i: usize, ps: &ParamSet, qs: &StageSequence, mode: &StageMode) -> Result<Option<PrimeWindow>> {
    Ok(match mode {
        StageMode::AllH => None,
        StageMode::Primes | StageMode::PrimesExcluding => Some(standard_window(qs, i, &ps.gamma)?),
        StageMode::Nongeometric { a, b } => {
            if ps.d != 1 {
                return Err(LabError::ConstraintViolation("d=1".into()));
            }
            Some(nongeometric_prime_window(a, b, ps.beta(), qs, i).map_err(|e| match e {
                LabError::EmptyWindow => LabError::EmptyStage(i),
                e => e,
            })?)
        }
    })
}

/// The list of H values (or primes) used at stage i.
pub fn stage_labels(i: usize, ps: &ParamSet, qs: &StageSequence, mode: &StageMode) -> Result<Vec<u64>> {
    match window_for(i, ps, qs, mode)? {
        Some(w) => {
            if w.is_empty() {
                return Err(LabError::EmptyStage(i));
            }
            Ok(w.primes)
        }
        None => {
            let h = qs.pow(i, &ps.gamma).floor();
            let h = h.to_u64().ok_or_else(|| too_large("lattice", "H range"))?;
            if h < 1 {
                return Err(LabError::EmptyStage(i));
            }
            Ok((1..=h).collect())
        }
    }
}

pub fn build_stage(i: usize, ps: &ParamSet, qs: &StageSequence, mode: &StageMode) -> Result<IntervalSet> {
    let labels = stage_labels(i, ps, qs, mode)?;
    let qb = qs.q_betas(i, ps);
    let qb: Vec<u64> = qb.iter().map(|x| x.to_u64().ok_or_else(|| too_large("lattice", "q^β"))).collect::<Result<_>>()?;
    let mut total: u128 = 0;
    for &h in &labels {
        total += qb.iter().map(|&b| (h * b) as u128).product::<u128>();
    }
    if total > MAX_MATERIALIZED as u128 {
        return Err(too_large("lattice", format!("{total} centers at stage {i}")));
    }
    let excl = mode.excludes();
    let mut centers = Vec::with_capacity(total as usize);
    let mut tags = Vec::with_capacity(total as usize);
    for &h in &labels {
        let dens: Vec<u64> = qb.iter().map(|&b| h * b).collect();
        let mut m = vec![0u64; ps.d];
        'outer: loop {
            if !(excl && m.iter().all(|&v| v % h == 0)) {
                centers.push(m.iter().zip(&dens).map(|(&v, &den)| rat(v as i64, den as i64)).collect());
                tags.push(h);
            }
            for j in 0..ps.d {
                m[j] += 1;
                if m[j] < dens[j] {
                    continue 'outer;
                }
                m[j] = 0;
            }
            break;
        }
    }
    let radius = Rational::new(BigInt::one(), qs.q(i));
    Ok(IntervalSet::new(ps.d, radius, centers, tags))
}

#[derive(Clone, Debug)]
pub struct Pruned {
    pub set: IntervalSet,
    pub removed: usize,
    /// q^(s-ε)/(log q^γ)^2 with unit constant; reported only.
    pub surrogate: f64,
}

/// Enforce separation: d = 1 drops pℤ numerators, d ≥ 2 drops centers near another prime's lattice.
pub fn prune_separated(stage: &IntervalSet, i: usize, ps: &ParamSet, qs: &StageSequence) -> Result<Pruned> {
    let qb = qs.q_betas(i, ps);
    let s = ps.s();
    let eps = ps.epsilon(i);
    let lq = qs.log2_q(i);
    let lg = (crate::exact::to_f64(&ps.gamma) * lq * std::f64::consts::LN_2).max(f64::MIN_POSITIVE);
    let surrogate = ((crate::exact::to_f64(&(&s - &eps))) * lq).exp2() / (lg * lg);
    let mut keep = vec![true; stage.len()];
    if ps.d == 1 {
        let q = big(&qb[0]);
        for (k, c) in stage.centers.iter().enumerate() {
            if (&c[0] * &q).is_integer() {
                keep[k] = false;
            }
        }
    } else {
        let primes: Vec<u64> = {
            let mut t = stage.tags.clone();
            t.sort_unstable();
            t.dedup();
            t
        };
        // τ = q^(-(s+ε)/d)
        let tau = RealPower::new(int(1), BigInt::from(qs.base), -(&s + &eps) * int(qs.exps[i - 1] as i64) / int(ps.d as i64));
        let tau_f = tau.to_f64() * (1.0 + 1e-9);
        for (k, c) in stage.centers.iter().enumerate() {
            let tag = stage.tags[k];
            // a center shared by two lattices sits at distance zero from the other prime
            let shared = primes.iter().any(|&p| {
                p != tag && c.iter().zip(&qb).all(|(x, b)| (x * big(&(b * BigInt::from(p)))).is_integer())
            });
            if shared {
                keep[k] = false;
                continue;
            }
            let x0 = crate::exact::to_f64(&c[0]);
            let lo = Rational::from_float(x0 - tau_f).unwrap_or_else(|| int(0)) - rat(1, 1 << 40);
            let hi = Rational::from_float(x0 + tau_f).unwrap_or_else(|| int(1)) + rat(1, 1 << 40);
            for o in stage.first_coord_range(&lo, &hi) {
                if o == k || stage.tags[o] == tag {
                    continue;
                }
                if c.iter().zip(&stage.centers[o]).all(|(a, b)| tau.ge(&(a - b).abs())) {
                    keep[k] = false;
                    break;
                }
            }
        }
    }
    let mut centers = Vec::new();
    let mut tags = Vec::new();
    for (k, c) in stage.centers.iter().enumerate() {
        if keep[k] {
            centers.push(c.clone());
            tags.push(stage.tags[k]);
        }
    }
    let removed = stage.len() - centers.len();
    Ok(Pruned { set: IntervalSet { dim: stage.dim, radius: stage.radius.clone(), centers, tags }, removed, surrogate })
}

/// Children of `next` whose centers lie in some box of `prev`.
pub fn intersect_stages(prev: &IntervalSet, next: &IntervalSet, stage: usize) -> Result<IntervalSet> {
    if next.radius >= prev.radius {
        return Err(LabError::ConstraintViolation("next.scale<prev.scale".into()));
    }
    let mut centers = Vec::new();
    let mut tags = Vec::new();
    for (c, &t) in next.centers.iter().zip(&next.tags) {
        if prev.contains_point(c) {
            centers.push(c.clone());
            tags.push(t);
        }
    }
    if centers.is_empty() {
        return Err(LabError::EmptyIntersection(stage));
    }
    Ok(IntervalSet { dim: next.dim, radius: next.radius.clone(), centers, tags })
}

/// Number of cells of side delta (aligned to delta·ℤ^d) meeting the set.
pub fn cover_count(set: &IntervalSet, delta: &Rational) -> Result<BigInt> {
    assert!(delta.is_positive(), "delta must be positive");
    let cell_range = |c: &Rational| -> (BigInt, BigInt) {
        (floor(&((c - &set.radius) / delta)), floor(&((c + &set.radius) / delta)))
    };
    if set.dim == 1 {
        let mut total = BigInt::zero();
        let mut cur: Option<(BigInt, BigInt)> = None;
        for c in &set.centers {
            let (a, b) = cell_range(&c[0]);
            cur = match cur {
                Some((ca, cb)) if a <= &cb + 1 => Some((ca, cb.max(b))),
                Some((ca, cb)) => {
                    total += cb - ca + 1;
                    Some((a, b))
                }
                None => Some((a, b)),
            };
        }
        if let Some((a, b)) = cur {
            total += b - a + 1;
        }
        return Ok(total);
    }
    let mut cells: HashSet<Vec<BigInt>> = HashSet::new();
    for c in &set.centers {
        let ranges: Vec<(BigInt, BigInt)> = c.iter().map(cell_range).collect();
        let per: u128 = ranges.iter().map(|(a, b): &(BigInt, BigInt)| (b - a + 1u32).to_u128().unwrap_or(u128::MAX)).product();
        if per > 1 << 20 || cells.len() > 50_000_000 {
            return Err(too_large("lattice", "cover cells"));
        }
        let mut cur: Vec<BigInt> = ranges.iter().map(|r| r.0.clone()).collect();
        'outer: loop {
            cells.insert(cur.clone());
            for j in 0..cur.len() {
                cur[j] += 1;
                if cur[j] <= ranges[j].1 {
                    continue 'outer;
                }
                cur[j] = ranges[j].0.clone();
            }
            break;
        }
    }
    Ok(BigInt::from(cells.len()))
}

/// Exact minimal center distance (d = 1).
pub fn min_gap(set: &IntervalSet) -> Result<Rational> {
    if set.dim != 1 {
        return Err(LabError::ConstraintViolation("d=1".into()));
    }
    if set.len() < 2 {
        return Err(LabError::Degenerate);
    }
    Ok(set.centers.windows(2).map(|w| &w[1][0] - &w[0][0]).min().unwrap())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DimEstimate {
    pub stage: usize,
    pub log2_q: f64,
    pub count: BigInt,
    pub estimate: f64,
}

pub fn box_dimension_estimate(sets: &[IntervalSet], qs: &StageSequence) -> Result<Vec<DimEstimate>> {
    sets.iter()
        .enumerate()
        .map(|(k, s)| {
            let i = k + 1;
            let count = cover_count(s, &Rational::new(BigInt::one(), qs.q(i)))?;
            let estimate = log2_int(&count) / qs.log2_q(i);
            Ok(DimEstimate { stage: i, log2_q: qs.log2_q(i), count, estimate })
        })
        .collect()
}

// ---------------------------------------------------------------- implicit stages

/// Centers m/den with 0 ≤ m < den, optionally skipping multiples of `exclude`.
#[derive(Clone, Debug, PartialEq)]
pub struct Progression {
    pub tag: u64,
    pub den: BigInt,
    pub exclude: Option<u64>,
}

impl Progression {
    /// # of centers in [0, min(M, den-1)] given the numerator bound M.
    fn count_upto(&self, m: &BigInt) -> BigInt {
        if m.is_negative() {
            return BigInt::zero();
        }
        let m = m.min(&(&self.den - 1)).clone();
        let mut n = &m + 1;
        if let Some(p) = self.exclude {
            n -= m.div_floor(&BigInt::from(p)) + 1;
        }
        n
    }

    fn is_center(&self, m: &BigInt) -> bool {
        !m.is_negative() && m < &self.den && self.exclude.is_none_or(|p| !(m % BigInt::from(p)).is_zero())
    }
}

/// A d = 1 stage too large to materialize, counted by floor arithmetic.
/// Its progressions must be pairwise disjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitStage {
    pub stage: usize,
    pub q: BigInt,
    pub radius: Rational,
    pub progs: Vec<Progression>,
}

impl ImplicitStage {
    /// Supported: primes_excluding, nongeometric, or all_H with γ = 0 (a single lattice).
    pub fn new(i: usize, ps: &ParamSet, qs: &StageSequence, mode: &StageMode) -> Result<Self> {
        if ps.d != 1 {
            return Err(LabError::ConstraintViolation("d=1".into()));
        }
        let qb = qs.int_pow(i, ps.beta()).ok_or_else(|| LabError::ConstraintViolation("q^β∈ℤ".into()))?;
        let progs = match mode {
            StageMode::AllH if ps.gamma.is_zero() => vec![Progression { tag: 1, den: qb, exclude: None }],
            StageMode::PrimesExcluding | StageMode::Nongeometric { .. } => stage_labels(i, ps, qs, mode)?
                .into_iter()
                .map(|p| Progression { tag: p, den: &qb * BigInt::from(p), exclude: Some(p) })
                .collect(),
            _ => return Err(LabError::ConstraintViolation("implicit stage needs disjoint lattices".into())),
        };
        let q = qs.q(i);
        Ok(ImplicitStage { stage: i, radius: Rational::new(BigInt::one(), q.clone()), q, progs })
    }

    /// # centers ≤ x.
    pub fn count_le(&self, x: &Rational) -> BigInt {
        self.progs.iter().map(|p| p.count_upto(&floor(&(x * big(&p.den))))).sum()
    }

    /// # centers < x.
    pub fn count_lt(&self, x: &Rational) -> BigInt {
        self.progs.iter().map(|p| p.count_upto(&(ceil(&(x * big(&p.den))) - 1))).sum()
    }

    /// # centers in the interval with the given endpoint openness.
    pub fn count_in(&self, lo: &Rational, lo_open: bool, hi: &Rational) -> BigInt {
        if hi < lo {
            return BigInt::zero();
        }
        let below = if lo_open { self.count_le(lo) } else { self.count_lt(lo) };
        (self.count_le(hi) - below).max(BigInt::zero())
    }

    /// Total number of centers in [0, 1).
    pub fn total(&self) -> BigInt {
        self.progs.iter().map(|p| p.count_upto(&(&p.den - 1))).sum()
    }

    /// # centers inside the union of the given closed boxes.
    pub fn count_in_union(&self, parents: &IntervalSet) -> BigInt {
        let mut total = BigInt::zero();
        for (lo, hi) in merged_intervals(parents) {
            total += self.count_in(&lo, false, &hi);
        }
        total
    }

    /// Lower bound on the distance between two distinct centers.
    pub fn gap_lower_bound(&self) -> Rational {
        let mut dens: Vec<&BigInt> = self.progs.iter().map(|p| &p.den).collect();
        dens.sort();
        let top: Vec<&BigInt> = dens.iter().rev().take(64).copied().collect();
        let mut worst = top[0].clone();
        for a in 0..top.len() {
            for b in a + 1..top.len() {
                worst = worst.max(top[a].lcm(top[b]));
            }
        }
        Rational::new(BigInt::one(), worst)
    }

    /// The largest center ≤ x, if any (x in [0,1)).
    pub fn center_at_or_below(&self, x: &Rational) -> Option<Rational> {
        let mut best: Option<Rational> = None;
        for p in &self.progs {
            let mut m = floor(&(x * big(&p.den))).min(&p.den - 1);
            while !m.is_negative() && !p.is_center(&m) {
                m -= 1;
            }
            if m.is_negative() {
                continue;
            }
            let c = Rational::new(m, p.den.clone());
            if best.as_ref().is_none_or(|b| &c > b) {
                best = Some(c);
            }
        }
        best
    }

    /// 3·N cells at delta = radius, valid when centers are ≥ 4·radius apart.
    pub fn cover_count_at_radius(&self, parents: Option<&IntervalSet>) -> Result<BigInt> {
        if self.gap_lower_bound() < int(4) * &self.radius {
            return Err(too_large("lattice", "implicit stage not separated at its own scale"));
        }
        let n = match parents {
            Some(p) => self.count_in_union(p),
            None => self.total(),
        };
        Ok(n * 3)
    }
}

/// Union of closed boxes as sorted disjoint closed intervals (d = 1).
pub fn merged_intervals(set: &IntervalSet) -> Vec<(Rational, Rational)> {
    let mut out: Vec<(Rational, Rational)> = Vec::new();
    for c in &set.centers {
        let lo = &c[0] - &set.radius;
        let hi = &c[0] + &set.radius;
        match out.last_mut() {
            Some(last) if lo <= last.1 => {
                if hi > last.1 {
                    last.1 = hi;
                }
            }
            _ => out.push((lo, hi)),
        }
    }
    out
}
