//! Sparse Fourier data of the staged Salem-type densities G_m = F_1 ⋯ F_m.

use std::collections::BTreeMap;

use num::{BigInt, Signed, ToPrimitive, Zero};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{too_large, LabError, Result};
use crate::exact::{big, floor, int, rat, Rational};
use crate::lattice::StageMode;
use crate::params::{nongeometric_prime_window, standard_window, ParamSet, StageSequence};

const TAU: f64 = std::f64::consts::TAU;

/// φ = n-fold self-convolution of the normalized box on [-1/n, 1/n].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BumpProfile {
    pub order: u32,
}

impl Default for BumpProfile {
    fn default() -> Self {
        BumpProfile { order: 4 }
    }
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

impl BumpProfile {
    pub fn new(order: u32) -> Self {
        assert!((2..=16).contains(&order), "bump order must lie in 2..=16");
        BumpProfile { order }
    }

    /// φ(x) = (n/2) B_n((x+1)n/2) with the cardinal B-spline B_n on [0, n].
    pub fn phi(&self, x: f64) -> f64 {
        let n = self.order;
        let t = (x + 1.0) * n as f64 / 2.0;
        if t <= 0.0 || t >= n as f64 {
            return 0.0;
        }
        let fact: f64 = (1..n).map(|j| j as f64).product();
        let mut s = 0.0;
        for k in 0..=n {
            let u = t - k as f64;
            if u <= 0.0 {
                break;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * binom(n, k) * u.powi(n as i32 - 1);
        }
        (n as f64 / 2.0) * s / fact
    }

    /// φ̂(ξ) = (sin(2πξ/n)/(2πξ/n))^n
    pub fn phi_hat(&self, xi: f64) -> f64 {
        let a = TAU * xi / self.order as f64;
        if a.abs() < 1e-8 {
            return 1.0 - self.order as f64 * a * a / 6.0;
        }
        (a.sin() / a).powi(self.order as i32)
    }

    /// min{1, (n/(2π|ξ|))^n}, a nonincreasing majorant of |φ̂|.
    pub fn envelope(&self, xi: f64) -> f64 {
        let a = TAU * xi.abs() / self.order as f64;
        if a <= 1.0 {
            1.0
        } else {
            a.powi(-(self.order as i32))
        }
    }

    /// Breakpoints of φ.
    pub fn knots(&self) -> Vec<f64> {
        (0..=self.order).map(|k| -1.0 + 2.0 * k as f64 / self.order as f64).collect()
    }

    /// Σ_{k ∈ gℤ, |k| > K} |φ̂(k/q)| ≤ 2(nq/2π)^n K^(1-n) / (g(n-1)).
    pub fn tail_bound(&self, q: f64, spacing: f64, k: f64) -> f64 {
        let n = self.order as f64;
        2.0 * (n * q / TAU).powf(n) * k.powf(1.0 - n) / (spacing * (n - 1.0))
    }

    /// Σ_{k ∈ gℤ} min{1,(n/2π|k/q|)^n} ≤ 1 + 2(q/g)(n/2π)(n/(n-1)).
    pub fn l1_bound(&self, q: f64, spacing: f64) -> f64 {
        let n = self.order as f64;
        1.0 + 2.0 * (q / spacing) * (n / TAU) * (n / (n - 1.0))
    }
}

pub fn phi_hat(profile: &BumpProfile, xi: f64) -> f64 {
    profile.phi_hat(xi)
}

/// Exact number-theoretic factor of Φ̂_{i,p}(k): 1-1/p, -1/p or 0.
pub fn phi_amplitude(p: u64, k: i128, qb: i128) -> Rational {
    if k % qb != 0 {
        return int(0);
    }
    if (k / qb) % p as i128 == 0 {
        rat(p as i64 - 1, p as i64)
    } else {
        rat(-1, p as i64)
    }
}

/// Φ̂_{i,p}(k) for q_i = q, q_i^β = qb.
pub fn phi_coeff(p: u64, k: i128, q: f64, qb: i128, profile: &BumpProfile) -> Complex64 {
    let a = phi_amplitude(p, k, qb);
    if a.is_zero() {
        return Complex64::new(0.0, 0.0);
    }
    let amp = if a.is_positive() { 1.0 - 1.0 / p as f64 } else { -1.0 / p as f64 };
    Complex64::new(amp * profile.phi_hat(k as f64 / q), 0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub enum FactorKind {
    /// γ = 0: F̂(k) = φ̂(k/q)[q^β | k].
    Lattice,
    /// F̂(k) = φ̂(k/q)·c(k/q^β), c(n) = (#{p|n} - Σ_{p∤n} 1/(p-1))/#P.
    Primes { primes: Vec<u64>, recip_sum: f64 },
}

/// One stage F_i of the product.
#[derive(Clone, Debug, PartialEq)]
pub struct StageFactor {
    pub stage: usize,
    pub q: f64,
    pub log2_q: f64,
    pub q_exact: BigInt,
    pub qb: i128,
    pub beta: Rational,
    pub kind: FactorKind,
    pub profile: BumpProfile,
}

impl StageFactor {
    pub fn lattice(stage: usize, qs: &StageSequence, beta: &Rational, profile: BumpProfile) -> Result<Self> {
        Self::make(stage, qs, beta, FactorKind::Lattice, profile)
    }

    pub fn primes(stage: usize, qs: &StageSequence, beta: &Rational, primes: Vec<u64>, profile: BumpProfile) -> Result<Self> {
        if primes.is_empty() {
            return Err(LabError::EmptyWindow);
        }
        let recip_sum = primes.iter().map(|&p| 1.0 / (p - 1) as f64).sum();
        Self::make(stage, qs, beta, FactorKind::Primes { primes, recip_sum }, profile)
    }

    fn make(stage: usize, qs: &StageSequence, beta: &Rational, kind: FactorKind, profile: BumpProfile) -> Result<Self> {
        let qb = qs.int_pow(stage, beta).ok_or_else(|| LabError::ConstraintViolation("q^β∈ℤ".into()))?;
        let qb = qb.to_i128().filter(|&v| v < 1 << 100).ok_or_else(|| too_large("spectrum", "q^β exceeds the frequency range"))?;
        let q_exact = qs.q(stage);
        Ok(StageFactor { stage, q: qs.log2_q(stage).exp2(), log2_q: qs.log2_q(stage), q_exact, qb, beta: beta.clone(), kind, profile })
    }

    pub fn count(&self) -> usize {
        match &self.kind {
            FactorKind::Lattice => 1,
            FactorKind::Primes { primes, .. } => primes.len(),
        }
    }

    pub fn smallest_prime(&self) -> Option<u64> {
        match &self.kind {
            FactorKind::Lattice => None,
            FactorKind::Primes { primes, .. } => primes.first().copied(),
        }
    }

    /// c(n) in floating point; exactly 1 at n = 0.
    pub fn c_of(&self, n: i128) -> f64 {
        match &self.kind {
            FactorKind::Lattice => 1.0,
            FactorKind::Primes { primes, recip_sum } => {
                let m = n.unsigned_abs();
                let mut cnt = 0usize;
                let mut sub = 0.0;
                for &p in primes {
                    if m % p as u128 == 0 {
                        cnt += 1;
                        sub += 1.0 / (p - 1) as f64;
                    }
                }
                if cnt == primes.len() {
                    return 1.0;
                }
                (cnt as f64 - (recip_sum - sub)) / primes.len() as f64
            }
        }
    }

    /// Exact c(n) as a rational.
    pub fn c_exact(&self, n: i128) -> Rational {
        match &self.kind {
            FactorKind::Lattice => int(1),
            FactorKind::Primes { primes, .. } => {
                let mut s = int(0);
                for &p in primes {
                    let a = phi_amplitude(p, n, 1);
                    s += rat(p as i64, p as i64 - 1) * a;
                }
                s / int(primes.len() as i64)
            }
        }
    }

    pub fn coeff(&self, k: i128) -> f64 {
        if k % self.qb != 0 {
            return 0.0;
        }
        self.c_of(k / self.qb) * self.profile.phi_hat(k as f64 / self.q)
    }

    /// ℓ¹ of the dropped coefficients beyond |k| > K.
    pub fn tail(&self, k: f64) -> f64 {
        self.profile.tail_bound(self.q, self.qb as f64, k)
    }

    pub fn l1_bound(&self) -> f64 {
        self.profile.l1_bound(self.q, self.qb as f64)
    }

    /// Smallest multiple R of q^β with tail(R) ≤ tol.
    pub fn radius_for(&self, tol: f64) -> i128 {
        let n = self.profile.order as f64;
        let base = 2.0 * (n * self.q / TAU).powf(n) / (self.qb as f64 * (n - 1.0));
        let r = (base / tol).powf(1.0 / (n - 1.0)).ceil();
        let r = r.max(self.q);
        ((r / self.qb as f64).ceil() as i128 + 1) * self.qb
    }

    /// c(n) for every n in [first, last], by marking prime multiples.
    pub fn c_dense(&self, first: i128, last: i128) -> Vec<f64> {
        if last < first {
            return vec![];
        }
        let cnt = (last - first + 1) as usize;
        match &self.kind {
            FactorKind::Lattice => vec![1.0; cnt],
            FactorKind::Primes { primes, recip_sum } => {
                let np = primes.len() as f64;
                let mut hits = vec![0u32; cnt];
                let mut c = vec![-recip_sum; cnt];
                for &p in primes {
                    let p = p as i128;
                    let mut n = first.div_euclid(p) * p;
                    if n < first {
                        n += p;
                    }
                    let w = p as f64 / (p - 1) as f64;
                    while n <= last {
                        let idx = (n - first) as usize;
                        c[idx] += w;
                        hits[idx] += 1;
                        n += p;
                    }
                }
                for (v, &h) in c.iter_mut().zip(&hits) {
                    *v = if h as usize == primes.len() { 1.0 } else { *v / np };
                }
                c
            }
        }
    }

    /// Coefficients at every integer in [lo, hi] (zero off the q^β lattice).
    pub fn dense(&self, lo: i128, hi: i128) -> Vec<f64> {
        let len = (hi - lo + 1) as usize;
        let mut out = vec![0.0; len];
        let first = lo.div_euclid(self.qb) + if lo.rem_euclid(self.qb) == 0 { 0 } else { 1 };
        let last = hi.div_euclid(self.qb);
        for (j, cv) in self.c_dense(first, last).iter().enumerate() {
            let k = (first + j as i128) * self.qb;
            out[(k - lo) as usize] = cv * self.profile.phi_hat(k as f64 / self.q);
        }
        out
    }

    /// Spatial value F_i(x) from the bump sum, with exact offsets.
    pub fn spatial(&self, x: &Rational) -> f64 {
        let qr = big(&self.q_exact);
        let amp = |den: &BigInt| -> f64 { self.q / (den.to_f64().unwrap()) };
        let mut sum = 0.0;
        let mut add_lattice = |den: BigInt, excl: Option<u64>, weight: f64| {
            // v with |q(x - v/den)| < 1
            let center = x * big(&den);
            let reach = big(&den) / &qr;
            let lo: BigInt = floor(&(&center - &reach)) - 1;
            let hi: BigInt = floor(&(&center + &reach)) + 1;
            let mut v = lo;
            while v <= hi {
                if excl.is_none_or(|p: u64| {
                    let rem: BigInt = &v % BigInt::from(p);
                    !rem.is_zero()
                }) {
                    let off = (x - Rational::new(v.clone(), den.clone())) * &qr;
                    sum += weight * amp(&den) * self.profile.phi(crate::exact::to_f64(&off));
                }
                v += 1;
            }
        };
        match &self.kind {
            FactorKind::Lattice => add_lattice(BigInt::from(self.qb), None, 1.0),
            FactorKind::Primes { primes, .. } => {
                let np = primes.len() as f64;
                for &p in primes {
                    // (1/#P)(p/(p-1)) · p^-1 q^(1-β) φ(...) and q^(1-β)/q = 1/qb folds into amp
                    let w = (p as f64 / (p - 1) as f64) / np;
                    add_lattice(BigInt::from(self.qb) * BigInt::from(p), Some(p), w);
                }
            }
        }
        sum
    }

    /// Spatial value for small moduli in floating point.
    pub fn spatial_f64(&self, x: f64) -> f64 {
        let mut sum = 0.0;
        let mut add = |den: f64, excl: Option<u64>, weight: f64| {
            let c = x * den;
            let reach = den / self.q;
            let lo = (c - reach).floor() as i64 - 1;
            let hi = (c + reach).floor() as i64 + 1;
            for v in lo..=hi {
                if excl.is_none_or(|p| v.rem_euclid(p as i64) != 0) {
                    sum += weight * (self.q / den) * self.profile.phi(self.q * (x - v as f64 / den));
                }
            }
        };
        match &self.kind {
            FactorKind::Lattice => add(self.qb as f64, None, 1.0),
            FactorKind::Primes { primes, .. } => {
                let np = primes.len() as f64;
                for &p in primes {
                    add((self.qb * p as i128) as f64, Some(p), (p as f64 / (p - 1) as f64) / np);
                }
            }
        }
        sum
    }
}

/// One factor per stage for a run.
pub fn stage_factors(ps: &ParamSet, qs: &StageSequence, mode: &StageMode, profile: BumpProfile) -> Result<Vec<StageFactor>> {
    if ps.d != 1 {
        return Err(LabError::ConstraintViolation("d=1".into()));
    }
    (1..=qs.len())
        .map(|i| match mode {
            StageMode::AllH if ps.gamma.is_zero() => StageFactor::lattice(i, qs, ps.beta(), profile),
            StageMode::Primes | StageMode::PrimesExcluding => {
                let w = standard_window(qs, i, &ps.gamma)?;
                StageFactor::primes(i, qs, ps.beta(), w.primes, profile)
            }
            StageMode::Nongeometric { a, b } => {
                let w = nongeometric_prime_window(a, b, ps.beta(), qs, i)?;
                StageFactor::primes(i, qs, ps.beta(), w.primes, profile)
            }
            StageMode::AllH => Err(LabError::ConstraintViolation("spectrum needs a prime window or γ=0".into())),
        })
        .collect()
}

// ---------------------------------------------------------------- sparse spectra

#[derive(Clone, Debug, PartialEq)]
pub struct SparseSpectrum {
    /// Sorted by frequency.
    pub entries: Vec<(i128, Complex64)>,
    pub kmax: i128,
    /// Sup-norm error bound on stored entries.
    pub err: f64,
    /// ℓ¹ bound of the true coefficients not stored.
    pub tail_l1: f64,
    pub stages: Vec<String>,
}

impl SparseSpectrum {
    pub fn delta0() -> Self {
        SparseSpectrum { entries: vec![(0, Complex64::new(1.0, 0.0))], kmax: 0, err: 0.0, tail_l1: 0.0, stages: vec![] }
    }

    pub fn from_map(map: BTreeMap<i128, Complex64>, kmax: i128, err: f64, tail_l1: f64, stages: Vec<String>) -> Self {
        SparseSpectrum { entries: map.into_iter().collect(), kmax, err, tail_l1, stages }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, k: i128) -> Complex64 {
        match self.entries.binary_search_by_key(&k, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn range(&self, lo: i128, hi: i128) -> &[(i128, Complex64)] {
        let a = self.entries.partition_point(|e| e.0 < lo);
        let b = self.entries.partition_point(|e| e.0 <= hi);
        &self.entries[a..b.max(a)]
    }

    pub fn l1(&self) -> f64 {
        self.entries.iter().map(|e| e.1.norm()).sum()
    }

    pub fn sup(&self) -> f64 {
        self.entries.iter().map(|e| e.1.norm()).fold(0.0, f64::max)
    }

    /// Largest deviation from coeffs(-k) = conj(coeffs(k)).
    pub fn hermitian_defect(&self) -> f64 {
        self.entries.iter().map(|&(k, v)| (self.get(-k) - v.conj()).norm()).fold(0.0, f64::max)
    }

    pub fn truncated(&self, kmax: i128) -> Self {
        let kept: Vec<_> = self.range(-kmax, kmax).to_vec();
        let dropped: f64 = self.l1() - kept.iter().map(|e| e.1.norm()).sum::<f64>();
        SparseSpectrum { entries: kept, kmax, err: self.err, tail_l1: self.tail_l1 + dropped.max(0.0), stages: self.stages.clone() }
    }
}

/// F̂_i truncated at kmax, with the φ̂ tail in tail_l1.
pub fn f_coeffs(factor: &StageFactor, kmax: i128) -> Result<SparseSpectrum> {
    if matches!(&factor.kind, FactorKind::Primes { primes, .. } if primes.is_empty()) {
        return Err(LabError::EmptyWindow);
    }
    let top = kmax.div_euclid(factor.qb);
    if top > 50_000_000 {
        return Err(too_large("spectrum", format!("{} stored coefficients", 2 * top + 1)));
    }
    let vals = factor.dense(-top * factor.qb, top * factor.qb);
    let entries = (-top..=top)
        .map(|n| {
            let k = n * factor.qb;
            (k, Complex64::new(vals[((n + top) * factor.qb) as usize], 0.0))
        })
        .collect();
    Ok(SparseSpectrum { entries, kmax, err: 0.0, tail_l1: factor.tail(kmax as f64), stages: vec![format!("F{}", factor.stage)] })
}

/// Coefficient convolution restricted to |k| ≤ cap with a full error account.
pub fn product_spectrum(g: &SparseSpectrum, f: &SparseSpectrum, cap: i128, tol: f64) -> Result<SparseSpectrum> {
    let (small, large) = if g.len() <= f.len() { (g, f) } else { (f, g) };
    let shards: Vec<BTreeMap<i128, Complex64>> = small
        .entries
        .par_chunks(4096)
        .map(|chunk| {
            let mut acc: BTreeMap<i128, Complex64> = BTreeMap::new();
            for &(a, va) in chunk {
                for &(b, vb) in large.range(-cap - a, cap - a) {
                    *acc.entry(a + b).or_insert(Complex64::new(0.0, 0.0)) += va * vb;
                }
            }
            acc
        })
        .collect();
    let mut map: BTreeMap<i128, Complex64> = BTreeMap::new();
    for s in shards {
        for (k, v) in s {
            *map.entry(k).or_insert(Complex64::new(0.0, 0.0)) += v;
        }
    }
    let (lg, lf) = (g.l1(), f.l1());
    let (sg, sf) = (g.sup(), f.sup());
    // a dropped entry of one factor only pairs with stored entries of the other inside the cap
    // when the stored radius falls short of cap + other radius
    let f_tail_seen = if f.kmax >= cap + g.kmax { 0.0 } else { f.tail_l1 };
    let g_tail_seen = if g.kmax >= cap + f.kmax { 0.0 } else { g.tail_l1 };
    let ag = g.err * g.len() as f64 + g.tail_l1;
    let af = f.err * f.len() as f64 + f.tail_l1;
    let err = lg * f.err + sg * f_tail_seen + g.err * lf + sf * g_tail_seen + (f.err + f.tail_l1) * ag;
    let kept: f64 = map.values().map(|v| v.norm()).sum();
    let tail = (lg * lf - kept).max(0.0) + lg * af + ag * lf + ag * af;
    if err > tol {
        return Err(LabError::BudgetExceeded { err, tol });
    }
    let mut stages = g.stages.clone();
    stages.extend(f.stages.iter().cloned());
    Ok(SparseSpectrum::from_map(map, cap, err, tail, stages))
}

// ---------------------------------------------------------------- staged engine

/// Real coefficients on gℤ ∩ [-radius, radius].
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLattice {
    pub step: i128,
    pub radius: i128,
    pub vals: Vec<f64>,
    pub err: f64,
    pub tail_l1: f64,
    pub l1: f64,
}

impl DenseLattice {
    pub fn get(&self, k: i128) -> f64 {
        if k.abs() > self.radius || k % self.step != 0 {
            return 0.0;
        }
        self.vals[((k + self.radius) / self.step) as usize]
    }

    fn from_vals(step: i128, radius: i128, vals: Vec<f64>, err: f64, tail_l1: f64) -> Self {
        let l1 = vals.iter().map(|v| v.abs()).sum();
        DenseLattice { step, radius, vals, err, tail_l1, l1 }
    }

    pub fn to_sparse(&self, stages: Vec<String>) -> SparseSpectrum {
        let entries = self
            .vals
            .iter()
            .enumerate()
            .map(|(j, &v)| (j as i128 * self.step - self.radius, Complex64::new(v, 0.0)))
            .collect();
        SparseSpectrum { entries, kmax: self.radius, err: self.err, tail_l1: self.tail_l1, stages }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EngineConfig {
    /// Output radius.
    pub cap: i128,
    /// Reject when the sup-norm error bound exceeds this.
    pub tol: f64,
    /// Truncation target for intermediate stages.
    pub work_tol: f64,
    /// Max terms summed by the direct method before switching to FFT.
    pub direct_limit: f64,
}

impl EngineConfig {
    pub fn new(cap: i128, tol: f64) -> Self {
        EngineConfig { cap, tol, work_tol: tol * 1e-4, direct_limit: 4e8 }
    }
}

const FFT_LIMIT: usize = 1 << 25;

fn dense_first(f: &StageFactor, radius: i128) -> DenseLattice {
    let vals = f.dense(-radius, radius).into_iter().step_by(f.qb as usize).collect();
    DenseLattice::from_vals(f.qb, radius, vals, 0.0, f.tail(radius as f64))
}

/// Full linear convolution of two real sequences, with a rounding bound.
fn fft_linear(av: &[f64], bv: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n_out = av.len() + bv.len() - 1;
    let len = n_out.next_power_of_two();
    if len > FFT_LIMIT {
        return Err(too_large("spectrum", format!("FFT length {len}")));
    }
    let load = |v: &[f64]| {
        let mut out = vec![Complex64::new(0.0, 0.0); len];
        for (o, &x) in out.iter_mut().zip(v) {
            *o = Complex64::new(x, 0.0);
        }
        out
    };
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let err = 8.0 * f64::EPSILON * (len as f64).log2() * norm2(av) * norm2(bv);
    let mut a = load(av);
    let mut b = load(bv);
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut a);
    planner.plan_fft_forward(len).process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    drop(b);
    planner.plan_fft_inverse(len).process(&mut a);
    let scale = 1.0 / len as f64;
    Ok((a.into_iter().take(n_out).map(|x| x.re * scale).collect(), err))
}

/// Next stage on gℤ ∩ [-w, w]: Σ_d G(d) F(k-d).
fn convolve_stage(g: &DenseLattice, f: &StageFactor, w: i128, cfg: &EngineConfig) -> Result<DenseLattice> {
    let step = g.step.min(f.qb);
    if f.qb % step != 0 || g.step % step != 0 {
        return Err(LabError::ConstraintViolation("nested lattices".into()));
    }
    let w = w / step * step;
    let n_out = (2 * w / step + 1) as f64;
    let terms_per = (2 * g.radius / f.qb.max(g.step) + 1) as f64;
    let a_f = f.l1_bound();
    let mut fft_err = 0.0;
    let vals: Vec<f64> = if n_out * terms_per <= cfg.direct_limit {
        let outs: Vec<i128> = (0..(2 * w / step + 1)).map(|j| j * step - w).collect();
        outs.par_iter()
            .map(|&k| {
                // d ≡ k mod qb, |d| ≤ R, d on g's lattice
                let r = k.rem_euclid(f.qb);
                let mut d = (-g.radius - r).div_euclid(f.qb) * f.qb + r;
                if d < -g.radius {
                    d += f.qb;
                }
                let stride = num::integer::lcm(f.qb, g.step);
                while d <= g.radius && d.rem_euclid(g.step) != 0 {
                    d += f.qb;
                }
                let mut s = 0.0;
                while d <= g.radius {
                    s += g.get(d) * f.coeff(k - d);
                    d += stride;
                }
                s
            })
            .collect()
    } else {
        if step != 1 && g.step != step {
            return Err(too_large("spectrum", "FFT path needs g on the finer lattice"));
        }
        let b_lo = -w - g.radius;
        let b_hi = w + g.radius;
        let nb = ((b_hi - b_lo) / step + 1) as usize;
        let na = (2 * g.radius / step + 1) as usize;
        let av: Vec<f64> = (0..na).map(|j| g.get(j as i128 * step - g.radius)).collect();
        let fd = f.dense(b_lo, b_hi);
        let bv: Vec<f64> = (0..nb).map(|j| fd[j * step as usize]).collect();
        drop(fd);
        let (a, e) = fft_linear(&av, &bv)?;
        fft_err = e;
        let scale = 1.0;
        let off = -g.radius + b_lo;
        (0..(2 * w / step + 1))
            .map(|j| {
                let k = j * step - w;
                a[((k - off) / step) as usize] * scale
            })
            .collect()
    };
    let err = g.err * a_f + g.tail_l1 + fft_err;
    let tail = g.tail_l1 * a_f + (g.l1 + g.err * g.vals.len() as f64) * f.tail((w - g.radius).max(1) as f64);
    Ok(DenseLattice::from_vals(step, w, vals, err, tail))
}

/// Ĝ_m on |k| ≤ cap, each stage truncated where its tail is below work_tol.
pub fn build_spectrum(factors: &[StageFactor], cfg: &EngineConfig) -> Result<SparseSpectrum> {
    let dense = build_dense(factors, cfg)?;
    let labels = factors.iter().map(|f| format!("F{}(q=2^{})", f.stage, f.log2_q)).collect();
    Ok(dense.to_sparse(labels))
}

pub fn build_dense(factors: &[StageFactor], cfg: &EngineConfig) -> Result<DenseLattice> {
    assert!(!factors.is_empty());
    let m = factors.len();
    let r1 = if m == 1 { cfg.cap } else { factors[0].radius_for(cfg.work_tol) };
    if r1 / factors[0].qb > 60_000_000 {
        return Err(too_large("spectrum", "first-stage radius"));
    }
    let mut g = dense_first(&factors[0], r1.max(cfg.cap.min(r1)));
    for (j, f) in factors.iter().enumerate().skip(1) {
        let w = if j + 1 == m { cfg.cap } else { g.radius + f.radius_for(cfg.work_tol) };
        g = convolve_stage(&g, f, w, cfg)?;
    }
    if m == 1 && g.radius != cfg.cap {
        g = dense_first(&factors[0], cfg.cap);
    }
    if g.err > cfg.tol {
        return Err(LabError::BudgetExceeded { err: g.err, tol: cfg.tol });
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassReport {
    pub value: f64,
    pub drift: f64,
}

pub fn mass_window_check(g: &SparseSpectrum) -> Result<MassReport> {
    let value = g.get(0).re;
    if !(0.5..=1.5).contains(&value) {
        return Err(LabError::MassEscaped(value));
    }
    Ok(MassReport { value, drift: (value - 1.0).abs() })
}

/// Σ_k e^{2πixk} r ψ̂(rk) Ĝ(k), the smoothed mass ∫ψ((x-y)/r)G(y)dy.
pub fn fourier_side_ball_mass(g: &SparseSpectrum, x: f64, r: f64, psi: &BumpProfile) -> f64 {
    g.entries
        .iter()
        .map(|&(k, v)| {
            let ph = Complex64::from_polar(1.0, TAU * (x * k as f64).rem_euclid(1.0));
            (ph * v).re * r * psi.phi_hat(r * k as f64)
        })
        .sum()
}

/// F̂(k) = μ̂(q^β k) φ̂(q^(β-1) k) for |k| ≤ source.kmax / q^β.
pub fn transfer_rescale(source: &SparseSpectrum, qb: i128, q: f64, profile: &BumpProfile) -> SparseSpectrum {
    let kmax = source.kmax / qb;
    let entries = (-kmax..=kmax)
        .filter_map(|k| {
            let v = source.get(qb * k);
            (v.norm() != 0.0 || k == 0).then(|| (k, v * profile.phi_hat((qb * k) as f64 / q)))
        })
        .collect();
    SparseSpectrum { entries, kmax, err: source.err, tail_l1: source.tail_l1, stages: vec![format!("transfer(q^β={qb})")] }
}

/// G_m(x) = Π F_i(x) with exact offsets.
pub fn evaluate_density(factors: &[StageFactor], x: &Rational) -> f64 {
    factors.iter().map(|f| f.spatial(x)).product()
}

pub fn evaluate_density_f64(factors: &[StageFactor], x: f64) -> f64 {
    factors.iter().map(|f| f.spatial_f64(x)).product()
}

// ---------------------------------------------------------------- shells and fits

#[derive(Clone, Debug, PartialEq)]
pub struct Shell {
    pub j: u32,
    /// Certified attained value (a lower bound when `exact` is false).
    pub max: f64,
    /// Upper bound on the true shell max.
    pub upper: f64,
    pub argmax: i128,
    pub exact: bool,
}

/// M_j = max{|Ĝ(k)| : 2^j ≤ |k| < 2^(j+1)} over stored entries.
pub fn shell_maxima(g: &SparseSpectrum) -> Vec<Shell> {
    let mut best: BTreeMap<u32, (f64, i128)> = BTreeMap::new();
    for &(k, v) in &g.entries {
        if k <= 0 {
            continue;
        }
        let j = 127 - k.leading_zeros();
        let e = best.entry(j).or_insert((0.0, k));
        if v.norm() > e.0 {
            *e = (v.norm(), k);
        }
    }
    let slack = g.err;
    best.into_iter()
        .filter(|(j, _)| (1i128 << (j + 1)) - 1 <= g.kmax)
        .map(|(j, (m, k))| Shell { j, max: m, upper: m + slack, argmax: k, exact: true })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// Use only shells with 2^(j+1) ≤ band.
    pub band: Option<f64>,
    /// Smallest prime of the deepest window; normalizes by D_j = max(1, (j+1)ln2/ln p).
    pub divisor_prime: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierFit {
    pub slope: f64,
    pub estimate: f64,
    /// Plain least squares over every nonempty shell.
    pub ls_slope_all: f64,
    pub ls_estimate_all: f64,
    pub vertices: Vec<u32>,
    /// (j ln 2, ln(M_j/D_j)) for the shells in band.
    pub points: Vec<(u32, f64, f64)>,
}

fn least_squares(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn divisor_normalizer(j: u32, p: Option<u64>) -> f64 {
    match p {
        Some(p) if p >= 2 => ((j + 1) as f64 * std::f64::consts::LN_2 / (p as f64).ln()).max(1.0),
        _ => 1.0,
    }
}

/// Slope of the upper envelope of (j ln2, ln(M_j/D_j)) from its peak on; dimension = -2·slope.
pub fn fit_fourier_dimension(shells: &[Shell], opts: &FitOptions) -> Result<FourierFit> {
    let nonempty: Vec<&Shell> = shells.iter().filter(|s| s.max > 0.0).collect();
    let all: Vec<(f64, f64)> = nonempty.iter().map(|s| (s.j as f64 * std::f64::consts::LN_2, s.max.ln())).collect();
    let points: Vec<(u32, f64, f64)> = nonempty
        .iter()
        .filter(|s| opts.band.is_none_or(|b| ((s.j + 1) as f64).exp2() <= b))
        .map(|s| (s.j, s.j as f64 * std::f64::consts::LN_2, (s.max / divisor_normalizer(s.j, opts.divisor_prime)).ln()))
        .collect();
    if points.len() < 4 {
        return Err(LabError::InsufficientShells(points.len()));
    }
    let peak = points.iter().enumerate().fold(0, |b, (i, p)| if p.2 > points[b].2 { i } else { b });
    let mut hull: Vec<usize> = Vec::new();
    for i in peak..points.len() {
        while hull.len() >= 2 {
            let (a, b) = (points[hull[hull.len() - 2]], points[hull[hull.len() - 1]]);
            let c = points[i];
            let cross = (b.1 - a.1) * (c.2 - a.2) - (b.2 - a.2) * (c.1 - a.1);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let slope = if hull.len() >= 2 {
        least_squares(&hull.iter().map(|&i| (points[i].1, points[i].2)).collect::<Vec<_>>())
    } else {
        0.0
    };
    let ls = least_squares(&all);
    Ok(FourierFit {
        slope,
        estimate: -2.0 * slope,
        ls_slope_all: ls,
        ls_estimate_all: -2.0 * ls,
        vertices: hull.iter().map(|&i| points[i].0).collect(),
        points,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeRow {
    pub j: u32,
    pub max: f64,
    pub normalizer: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeReport {
    pub gamma: f64,
    /// max_j M_j 2^(jγ) / D_j
    pub fitted_c: f64,
    pub rows: Vec<EnvelopeRow>,
}

pub fn decay_envelope(shells: &[Shell], gamma: f64, divisor_prime: Option<u64>) -> EnvelopeReport {
    let rows: Vec<EnvelopeRow> = shells
        .iter()
        .map(|s| {
            let d = divisor_normalizer(s.j, divisor_prime);
            EnvelopeRow { j: s.j, max: s.max, normalizer: d, ratio: s.max * (s.j as f64 * gamma).exp2() / d }
        })
        .collect();
    let fitted_c = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    EnvelopeReport { gamma, fitted_c, rows }
}

/// max over k of |F̂_i(k)| / ((ln|k| + ln q) q^(-γ) (1+|k|/q)^(-(n-1))).
pub fn single_stage_envelope(f: &StageFactor, gamma: f64, ks: &[i128]) -> f64 {
    let n1 = f.profile.order as f64 - 1.0;
    ks.iter()
        .filter(|&&k| k != 0)
        .map(|&k| {
            let kk = (k as f64).abs();
            let bound = (kk.ln() + f.q.ln()) * f.q.powf(-gamma) * (1.0 + kk / f.q).powf(-n1);
            f.coeff(k).abs() / bound
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- lazy last stage

/// Ĝ_{m-1} on its full working radius.
fn base_lattice(previous: &[StageFactor], cfg: &EngineConfig) -> Result<DenseLattice> {
    let mut c = *cfg;
    c.cap = 0;
    let mut g = dense_first(&previous[0], previous[0].radius_for(cfg.work_tol));
    for f in previous.iter().skip(1) {
        let w = g.radius + f.radius_for(cfg.work_tol);
        g = convolve_stage(&g, f, w, &c)?;
    }
    Ok(g)
}

fn default_kmax(last: &StageFactor, kmax: Option<i128>) -> Result<i128> {
    if (last.q_exact.clone() * 8u32).bits() > 126 {
        return Err(too_large("spectrum", "frequencies beyond 2^126"));
    }
    Ok(kmax.unwrap_or_else(|| (last.q_exact.clone() * 8u32).to_i128().unwrap_or(i128::MAX)))
}

/// Ĝ_m(k) = Ĝ_{m-1}(d) F̂_m(k-d) with the unique d ≡ k mod q_m^β, |d| ≤ R.
#[derive(Clone, Debug, PartialEq)]
pub struct LazyLastStage {
    pub base: DenseLattice,
    pub last: StageFactor,
    pub kmax: i128,
}

/// Brute-force n-range limit for the number-theoretic shell maximum.
pub const BRUTE_RANGE: i128 = 1 << 22;

impl LazyLastStage {
    pub fn new(previous: &[StageFactor], last: StageFactor, kmax: Option<i128>, cfg: &EngineConfig) -> Result<Self> {
        let kmax = kmax.unwrap_or_else(|| {
            let q8: BigInt = last.q_exact.clone() * 8u32;
            q8.to_i128().unwrap_or(i128::MAX)
        });
        if BigInt::from(kmax) > (BigInt::from(1) << 126u32) || (last.q_exact.clone() * 8u32).bits() > 126 {
            return Err(too_large("spectrum", "frequencies beyond 2^126"));
        }
        let g = base_lattice(previous, cfg)?;
        if last.qb <= 2 * g.radius {
            return Err(LabError::ConstraintViolation("q_m^β > 2R for the lazy stage".into()));
        }
        let err = g.err + g.tail_l1;
        if err > cfg.tol {
            return Err(LabError::BudgetExceeded { err, tol: cfg.tol });
        }
        Ok(LazyLastStage { base: g, last, kmax })
    }

    pub fn err(&self) -> f64 {
        self.base.err + self.base.tail_l1
    }

    pub fn coeff(&self, k: i128) -> f64 {
        let qb = self.last.qb;
        let mut d = k.rem_euclid(qb);
        if d > qb / 2 {
            d -= qb;
        }
        let gv = self.base.get(d);
        if gv == 0.0 {
            return 0.0;
        }
        gv * self.last.coeff(k - d)
    }

    /// max over n in [lo, hi] of |c(n)| |φ̂(n qb / q)| with a certified upper bound.
    fn nt_max(&self, lo: i128, hi: i128) -> (f64, f64, i128, bool) {
        let f = &self.last;
        let phi = |n: i128| f.profile.phi_hat((n * f.qb) as f64 / f.q).abs();
        if hi < lo {
            return (0.0, 0.0, 0, true);
        }
        if hi - lo < BRUTE_RANGE {
            let cs = f.c_dense(lo, hi);
            let mut best = (0.0, lo);
            for n in lo..=hi {
                let v = cs[(n - lo) as usize].abs() * phi(n);
                if v > best.0 {
                    best = (v, n);
                }
            }
            return (best.0, best.0, best.1, true);
        }
        // candidate positions: range start and the sidelobe peaks of φ̂
        let order = f.profile.order as f64;
        let xi = |n: i128| (n * f.qb) as f64 / f.q;
        let mut targets = vec![lo];
        let (x0, x1) = (xi(lo), xi(hi));
        let mut k = (x0 / (order / 2.0) - 0.5).ceil().max(1.0);
        while (k + 0.5) * order / 2.0 <= x1 {
            let t = ((k + 0.5) * order / 2.0 * f.q / f.qb as f64) as i128;
            targets.push(t.clamp(lo, hi));
            k += 1.0;
            if targets.len() > 64 {
                break;
            }
        }
        let env_lo = f.profile.envelope(x0);
        match &f.kind {
            FactorKind::Lattice => {
                let mut best = (0.0, lo);
                for &t in &targets {
                    for n in [t - 1, t, t + 1] {
                        if (lo..=hi).contains(&n) && phi(n) > best.0 {
                            best = (phi(n), n);
                        }
                    }
                }
                (best.0, env_lo, best.1, false)
            }
            FactorKind::Primes { primes, recip_sum } => {
                let np = primes.len() as f64;
                let pmin = primes[0] as f64;
                // the most P-primes any |n| ≤ hi can carry
                let mut w_cap = 0usize;
                let mut prod = 1u128;
                for &p in primes {
                    match prod.checked_mul(p as u128) {
                        Some(v) if v <= hi as u128 => {
                            prod = v;
                            w_cap += 1;
                        }
                        _ => break,
                    }
                }
                let c_cap = (recip_sum.max(w_cap as f64 * pmin / (pmin - 1.0) - recip_sum)) / np;
                let upper = env_lo * c_cap;
                let singles: Vec<u128> = primes.iter().map(|&p| p as u128).collect();
                let mut pairs: Vec<u128> = Vec::new();
                for (ia, &a) in primes.iter().take(64).enumerate() {
                    pairs.extend(primes.iter().skip(ia + 1).map(|&b| a as u128 * b as u128));
                }
                let mut triples: Vec<u128> = Vec::new();
                for (ia, &a) in primes.iter().take(16).enumerate() {
                    for (ib, &b) in primes.iter().enumerate().take(16).skip(ia + 1) {
                        triples.extend(primes.iter().skip(ib + 1).map(|&c| a as u128 * b as u128 * c as u128));
                    }
                }
                let classes = [singles, pairs, triples];
                let mut best = (0.0, lo);
                for &t in &targets {
                    let mut cands = vec![t];
                    // smallest multiple ≥ t per divisor class (1, 2 or 3 primes)
                    let mut by_class: [Option<u128>; 3] = [None; 3];
                    for (class, gens) in classes.iter().enumerate() {
                        for &g in gens {
                            let n = (t as u128).div_ceil(g) * g;
                            if n <= hi as u128 && by_class[class].is_none_or(|m| n < m) {
                                by_class[class] = Some(n);
                            }
                        }
                    }
                    cands.extend(by_class.iter().flatten().map(|&n| n as i128));
                    for n in cands {
                        let v = f.c_of(n).abs() * phi(n);
                        if v > best.0 {
                            best = (v, n);
                        }
                    }
                }
                (best.0, upper.max(best.0), best.1, false)
            }
        }
    }

    /// Shell maxima for 2^j ≤ k < 2^(j+1), positive k.
    pub fn shell(&self, j: u32) -> Shell {
        let lo = 1i128 << j;
        let hi = ((1i128 << (j + 1)) - 1).min(self.kmax);
        let r = self.base.radius;
        let qb = self.last.qb;
        let g0 = self.base.get(0);
        let mut best = (0.0f64, lo);
        let mut upper = 0.0f64;
        let mut exact = true;
        // (a) l = 0
        for d in lo.max(-r)..=hi.min(r) {
            if d % self.base.step == 0 {
                let v = self.base.get(d).abs();
                if v > best.0 {
                    best = (v, d);
                }
            }
        }
        upper = upper.max(best.0);
        // (b) l = n qb with [l-R, l+R] inside the shell
        let n_lo = (lo + r + qb - 1).div_euclid(qb).max(1);
        let n_hi = (hi - r).div_euclid(qb);
        if n_hi >= n_lo {
            let (v, vu, n, ex) = self.nt_max(n_lo, n_hi);
            exact &= ex;
            if v * g0 > best.0 {
                best = (v * g0, n * qb);
            }
            upper = upper.max(vu * g0);
        }
        // (c) l near the shell edges
        let mut edge: Vec<i128> = Vec::new();
        for b in [lo, hi] {
            let a = (b - r).div_euclid(qb);
            for n in a..=a + 2 * r / qb + 2 {
                if n != 0 && (n < n_lo || n > n_hi) {
                    edge.push(n);
                }
            }
        }
        edge.sort_unstable();
        edge.dedup();
        for n in edge {
            let l = n * qb;
            let fl = self.last.coeff(l).abs();
            if fl == 0.0 {
                continue;
            }
            for d in (lo - l).max(-r)..=(hi - l).min(r) {
                if d % self.base.step == 0 {
                    let v = self.base.get(d).abs() * fl;
                    if v > best.0 {
                        best = (v, l + d);
                    }
                }
            }
        }
        upper = upper.max(best.0);
        let e = self.err();
        Shell { j, max: best.0, upper: upper + e, argmax: best.1, exact }
    }

    pub fn shells(&self) -> Vec<Shell> {
        let top = 127 - self.kmax.leading_zeros();
        (0..top).filter(|&j| (1i128 << (j + 1)) - 1 <= self.kmax).map(|j| self.shell(j)).collect()
    }
}

// ---------------------------------------------------------------- convolutional last stage

/// Widest shell evaluated exactly by FFT.
pub const EXACT_SHELL: i128 = 1 << 23;
/// Candidates per sign tried on shells past the exact range.
const WITNESSES: usize = 512;

/// Ĝ_m(k) = Σ_d Ĝ_{m-1}(d) F̂_m(k-d) when q_m^β ≤ 2R, so several d share a residue.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLastStage {
    pub base: DenseLattice,
    pub last: StageFactor,
    pub kmax: i128,
    /// Σ_p (p/(p-1)) max_r B_p(r) + σ ‖Ĝ_{m-1}‖₁, over #P.
    coarse_bound: f64,
    /// (modulus, best residue for a large positive sum, for a large negative sum)
    steer: Vec<(i128, i128, i128)>,
}

impl ConvLastStage {
    pub fn new(previous: &[StageFactor], last: StageFactor, kmax: Option<i128>, cfg: &EngineConfig) -> Result<Self> {
        let kmax = default_kmax(&last, kmax)?;
        let base = base_lattice(previous, cfg)?;
        let err = base.err + base.tail_l1;
        if err > cfg.tol {
            return Err(LabError::BudgetExceeded { err, tol: cfg.tol });
        }
        let r = base.radius;
        let qb = last.qb;
        let (coarse_bound, steer) = match &last.kind {
            FactorKind::Lattice => (base.l1, vec![]),
            FactorKind::Primes { primes, recip_sum } => {
                let gmax = base.vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let per: Vec<(f64, i128, i128)> = primes
                    .par_iter()
                    .map(|&p| {
                        let m = p as i128 * qb;
                        if m > 2 * r {
                            return (gmax, 0, 0);
                        }
                        let mut abs = vec![0.0; m as usize];
                        let mut sgn = vec![0.0; m as usize];
                        for (j, &v) in base.vals.iter().enumerate() {
                            let d = j as i128 * base.step - r;
                            let c = d.rem_euclid(m) as usize;
                            abs[c] += v.abs();
                            sgn[c] += v;
                        }
                        let amax = abs.iter().fold(0.0f64, |a, &v| a.max(v));
                        let hi = (0..m).max_by(|&a, &b| sgn[a as usize].total_cmp(&sgn[b as usize])).unwrap_or(0);
                        let lo = (0..m).min_by(|&a, &b| sgn[a as usize].total_cmp(&sgn[b as usize])).unwrap_or(0);
                        (amax, hi, lo)
                    })
                    .collect();
                let sum: f64 = primes.iter().zip(&per).map(|(&p, t)| p as f64 / (p - 1) as f64 * t.0).sum();
                let bound = (sum + recip_sum * base.l1) / primes.len() as f64;
                let steer = primes.iter().zip(&per).filter(|(&p, _)| p as i128 * qb <= 2 * r).map(|(&p, t)| (p as i128 * qb, t.1, t.2)).collect();
                (bound, steer)
            }
        };
        Ok(ConvLastStage { base, last, kmax, coarse_bound, steer })
    }

    pub fn err(&self) -> f64 {
        self.base.err + self.base.tail_l1
    }

    /// Exact sum over the d sharing k's residue.
    pub fn coeff(&self, k: i128) -> f64 {
        let (r, qb, step) = (self.base.radius, self.last.qb, self.base.step);
        let first = (k - r).div_euclid(qb) + i128::from((k - r).rem_euclid(qb) != 0);
        let last = (k + r).div_euclid(qb);
        let cs = self.last.c_dense(first, last);
        let mut s = 0.0;
        for (j, c) in cs.iter().enumerate() {
            let l = (first + j as i128) * qb;
            let d = k - l;
            if d % step == 0 {
                s += self.base.get(d) * c * self.last.profile.phi_hat(l as f64 / self.last.q);
            }
        }
        s
    }

    fn envelope_at(&self, lo: i128) -> f64 {
        let x = (lo - self.base.radius).max(0) as f64 / self.last.q;
        self.last.profile.envelope(x)
    }

    fn exact_shell(&self, j: u32, lo: i128, hi: i128) -> Result<Shell> {
        let r = self.base.radius;
        let fd = self.last.dense(lo - r, hi + r);
        let (conv, e) = fft_linear(&self.base.vals, &fd)?;
        // conv[i] sits at k = -R + (lo - R) + i
        let off = lo - 2 * r;
        let mut best = (0.0f64, lo);
        for k in lo..=hi {
            let v = conv[(k - off) as usize].abs();
            if v > best.0 {
                best = (v, k);
            }
        }
        // re-evaluate the winner directly
        let m = self.coeff(best.1).abs();
        Ok(Shell { j, max: m, upper: best.0 + e + self.err(), argmax: best.1, exact: true })
    }

    /// Residues steering c(k - d) toward ±1 for the heavy d, joined by CRT.
    fn steered(&self, lo: i128, hi: i128) -> Vec<i128> {
        let budget = (hi - lo + 1) / WITNESSES as i128;
        let mut out = Vec::new();
        for pick in [1usize, 2] {
            let (mut k0, mut m) = (0i128, 1i128);
            for &(p, a, b) in &self.steer {
                let g = num::integer::gcd(m, p);
                if m / g * p > budget.max(1) {
                    break;
                }
                let r = if pick == 1 { a } else { b };
                // k ≡ k0 mod m, k ≡ r mod p
                if (r - k0).rem_euclid(g) != 0 {
                    continue;
                }
                let (mg, pg) = (m / g, p / g);
                let inv = mod_inverse(mg.rem_euclid(pg), pg);
                let t = ((r - k0) / g).rem_euclid(pg) * inv % pg.max(1);
                k0 += m * t;
                m = mg * p;
                k0 = k0.rem_euclid(m);
            }
            let mut k = lo + (k0 - lo).rem_euclid(m);
            while k <= hi && out.len() < pick * WITNESSES {
                out.push(k);
                k += m;
            }
        }
        out
    }

    fn witness_shell(&self, j: u32, lo: i128, hi: i128) -> Shell {
        let mut cands = self.steered(lo, hi);
        cands.extend(lo..=(lo + 63).min(hi));
        // golden-ratio stride across the shell
        let width = (hi - lo + 1) as f64;
        cands.extend((0..WITNESSES).map(|t| lo + ((t as f64 * 0.618_033_988_749_895).fract() * width) as i128));
        cands.sort_unstable();
        cands.dedup();
        let vals: Vec<(f64, i128)> = cands.par_iter().map(|&k| (self.coeff(k).abs(), k)).collect();
        let best = vals.into_iter().fold((0.0f64, lo), |b, v| if v.0 > b.0 { v } else { b });
        let upper = self.envelope_at(lo) * self.coarse_bound + self.err();
        Shell { j, max: best.0, upper: upper.max(best.0), argmax: best.1, exact: false }
    }

    pub fn shell(&self, j: u32) -> Result<Shell> {
        let lo = 1i128 << j;
        let hi = ((1i128 << (j + 1)) - 1).min(self.kmax);
        let fft_ok = self.last.qb == 1 && self.base.step == 1 && hi - lo < EXACT_SHELL;
        if fft_ok {
            return self.exact_shell(j, lo, hi);
        }
        let terms = (hi - lo + 1) as f64 * (2 * self.base.radius / self.last.qb + 1) as f64;
        if terms <= 4e8 {
            let vals: Vec<(f64, i128)> = (lo..=hi).into_par_iter().map(|k| (self.coeff(k).abs(), k)).collect();
            let best = vals.into_iter().fold((0.0f64, lo), |b, v| if v.0 > b.0 { v } else { b });
            return Ok(Shell { j, max: best.0, upper: best.0 + self.err(), argmax: best.1, exact: true });
        }
        Ok(self.witness_shell(j, lo, hi))
    }

    pub fn shells(&self) -> Result<Vec<Shell>> {
        let top = 127 - self.kmax.leading_zeros();
        (0..top).filter(|&j| (1i128 << (j + 1)) - 1 <= self.kmax).map(|j| self.shell(j)).collect()
    }
}

fn mod_inverse(a: i128, m: i128) -> i128 {
    if m <= 1 {
        return 0;
    }
    let (mut r0, mut r1, mut s0, mut s1) = (m, a.rem_euclid(m), 0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
    }
    s0.rem_euclid(m)
}

/// Either last-stage strategy, picked by q_m^β against 2R.
#[derive(Clone, Debug, PartialEq)]
pub enum LastStage {
    Lazy(LazyLastStage),
    Conv(ConvLastStage),
}

impl LastStage {
    pub fn new(previous: &[StageFactor], last: StageFactor, kmax: Option<i128>, cfg: &EngineConfig) -> Result<Self> {
        match LazyLastStage::new(previous, last.clone(), kmax, cfg) {
            Ok(l) => Ok(LastStage::Lazy(l)),
            Err(LabError::ConstraintViolation(_)) => Ok(LastStage::Conv(ConvLastStage::new(previous, last, kmax, cfg)?)),
            Err(e) => Err(e),
        }
    }

    pub fn coeff(&self, k: i128) -> f64 {
        match self {
            LastStage::Lazy(l) => l.coeff(k),
            LastStage::Conv(c) => c.coeff(k),
        }
    }

    pub fn shells(&self) -> Result<Vec<Shell>> {
        match self {
            LastStage::Lazy(l) => Ok(l.shells()),
            LastStage::Conv(c) => c.shells(),
        }
    }

    pub fn err(&self) -> f64 {
        match self {
            LastStage::Lazy(l) => l.err(),
            LastStage::Conv(c) => c.err(),
        }
    }
}
