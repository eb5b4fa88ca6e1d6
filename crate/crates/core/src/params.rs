//! Construction parameters, admissible stage moduli and prime windows.

use num::{BigInt, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{too_large, LabError, Result};
use crate::exact::{big, int, lcm_denoms, log2_int, rat, Rational, RealPower};

/// Default cap on the size of any stage modulus.
pub const DEFAULT_BUDGET_BITS: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthMode {
    Strict,
    Relaxed,
    /// Exponents supplied by hand; compliance is checked and recorded.
    Explicit,
}

impl GrowthMode {
    pub fn name(self) -> &'static str {
        match self {
            GrowthMode::Strict => "strict",
            GrowthMode::Relaxed => "relaxed",
            GrowthMode::Explicit => "explicit",
        }
    }
}

/// Which hypothesis the parameters must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hypothesis {
    Lattice,
    Spectrum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub d: usize,
    pub gamma: Rational,
    pub betas: Vec<Rational>,
    pub growth: GrowthMode,
    pub stages: usize,
}

impl ParamSet {
    pub fn new(d: usize, gamma: Rational, betas: Vec<Rational>, growth: GrowthMode, stages: usize) -> Self {
        ParamSet { d, gamma, betas, growth, stages }
    }

    pub fn one_dim(gamma: Rational, beta: Rational, growth: GrowthMode, stages: usize) -> Self {
        Self::new(1, gamma, vec![beta], growth, stages)
    }

    /// s = (d+1)γ + Σβ_j
    pub fn s(&self) -> Rational {
        let d = int(self.d as i64);
        (d + int(1)) * &self.gamma + self.betas.iter().sum::<Rational>()
    }

    /// Target dimension min{s, d}.
    pub fn target_dim(&self) -> Rational {
        self.s().min(int(self.d as i64))
    }

    /// ε_i = min{1/i, d - s}
    pub fn epsilon(&self, i: usize) -> Rational {
        rat(1, i as i64).min(int(self.d as i64) - self.s())
    }

    pub fn beta(&self) -> &Rational {
        &self.betas[0]
    }

    /// Smallest exponent step keeping every q^β_j integral.
    pub fn exponent_unit(&self) -> u64 {
        lcm_denoms(&self.betas).to_u64().expect("beta denominators too large")
    }
}

pub fn validate_params(p: &ParamSet, hyp: Hypothesis) -> Result<ParamSet> {
    let cv = |s: &str| Err(LabError::ConstraintViolation(s.to_string()));
    if p.d < 1 {
        return cv("d≥1");
    }
    if p.stages < 1 {
        return cv("stages≥1");
    }
    if p.betas.len() != p.d {
        return cv("len(β)=d");
    }
    if p.gamma.is_negative() {
        return cv("γ≥0");
    }
    if p.betas.iter().any(|b| b.is_negative()) {
        return cv("β≥0");
    }
    for b in &p.betas {
        let sum = &p.gamma + b;
        if !sum.is_positive() {
            return cv("γ+β>0");
        }
        if hyp == Hypothesis::Lattice && sum >= int(1) {
            return cv("γ+β<1");
        }
    }
    if hyp == Hypothesis::Spectrum {
        if p.d != 1 {
            return cv("d=1");
        }
        if int(2) * &p.gamma + p.beta() > int(1) {
            return cv("2γ+β≤1");
        }
    }
    Ok(p.clone())
}

/// Stage moduli q_i = base^exps[i-1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSequence {
    pub base: u64,
    pub exps: Vec<u64>,
    pub mode: GrowthMode,
    /// Whether stage i satisfies the strict growth inequalities (stage 1 always does).
    pub compliant: Vec<bool>,
}

impl StageSequence {
    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    /// q_i, 1-indexed.
    pub fn q(&self, i: usize) -> BigInt {
        num::pow(BigInt::from(self.base), self.exps[i - 1] as usize)
    }

    pub fn q_rat(&self, i: usize) -> Rational {
        big(&self.q(i))
    }

    pub fn log2_q(&self, i: usize) -> f64 {
        self.exps[i - 1] as f64 * (self.base as f64).log2()
    }

    /// q_i^r as an exact real power.
    pub fn pow(&self, i: usize, r: &Rational) -> RealPower {
        RealPower::new(int(1), BigInt::from(self.base), r * int(self.exps[i - 1] as i64))
    }

    /// q_i^r when it is an integer.
    pub fn int_pow(&self, i: usize, r: &Rational) -> Option<BigInt> {
        let e = r * int(self.exps[i - 1] as i64);
        if !e.is_integer() || e.is_negative() {
            return None;
        }
        Some(num::pow(BigInt::from(self.base), e.to_integer().to_usize()?))
    }

    /// q_i^β for every coordinate; panics if the sequence was built for other betas.
    pub fn q_betas(&self, i: usize, p: &ParamSet) -> Vec<BigInt> {
        p.betas.iter().map(|b| self.int_pow(i, b).expect("q^β must be an integer")).collect()
    }

    pub fn label(&self) -> String {
        self.exps.iter().map(|e| format!("{}^{}", self.base, e)).collect::<Vec<_>>().join(",")
    }
}

fn bits_of_power(base: u64, e: u64) -> u64 {
    ((base as f64).log2() * e as f64).ceil() as u64
}

fn strict_ok_exp(p: &ParamSet, i: usize, prev_e: u64, e: u64) -> bool {
    if (e as u128) <= 10 * (p.d as u128) * (i as u128) * prev_e as u128 {
        return false;
    }
    p.betas.iter().all(|b| (&p.gamma + b) * int(e as i64) > int(prev_e as i64))
}

/// Smallest admissible base power strictly above the growth bound from `prev`.
pub fn next_q(prev: &BigInt, p: &ParamSet, i: usize, base: u64, budget_bits: u64) -> Result<BigInt> {
    let unit = p.exponent_unit();
    let t = BigInt::from(base);
    let round_up = |e: u64| e.div_ceil(unit).max(1) * unit;
    let lp = log2_int(prev);
    let lt = (base as f64).log2();
    let e = match p.growth {
        GrowthMode::Strict | GrowthMode::Explicit => {
            let need = (10 * p.d * i) as u64;
            let needed_bits = (lp * need as f64).ceil() as u64;
            if needed_bits > budget_bits {
                return Err(LabError::Overflow { needed: needed_bits, budget: budget_bits });
            }
            let bound = num::pow(prev.clone(), need as usize);
            let mut e = round_up(((needed_bits as f64 / lt).floor() as u64).saturating_sub(unit));
            loop {
                let q = num::pow(t.clone(), e as usize);
                let gb_ok = p.betas.iter().all(|b| {
                    let r = &p.gamma + b;
                    let u = (r.numer() * BigInt::from(e)).to_usize().unwrap();
                    let v = r.denom().to_usize().unwrap();
                    num::pow(t.clone(), u) > num::pow(prev.clone(), v)
                });
                if q > bound && gb_ok {
                    break e;
                }
                e += unit;
            }
        }
        GrowthMode::Relaxed => {
            let bound = prev * prev;
            let mut e = round_up(((2.0 * lp / lt).floor() as u64).saturating_sub(unit));
            while num::pow(t.clone(), e as usize) <= bound {
                e += unit;
            }
            e
        }
    };
    let bits = bits_of_power(base, e);
    if bits > budget_bits {
        return Err(LabError::Overflow { needed: bits, budget: budget_bits });
    }
    Ok(num::pow(t, e as usize))
}

#[derive(Clone, Debug)]
pub struct SequenceOptions {
    pub base: u64,
    pub first_exp: Option<u64>,
    pub explicit: Option<Vec<u64>>,
    pub budget_bits: u64,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions { base: 2, first_exp: None, explicit: None, budget_bits: DEFAULT_BUDGET_BITS }
    }
}

/// Smallest admissible first exponent whose standard window (q^γ/2, q^γ] holds a prime.
pub fn first_exponent(p: &ParamSet, base: u64) -> u64 {
    let unit = p.exponent_unit();
    if p.gamma.is_zero() {
        return unit;
    }
    let mut e = unit;
    loop {
        let hi = RealPower::new(int(1), BigInt::from(base), &p.gamma * int(e as i64));
        let lo = RealPower::new(rat(1, 2), BigInt::from(base), &p.gamma * int(e as i64));
        let (l, h) = (lo.floor(), hi.floor());
        if h > l {
            let (l, h) = (l.to_u64().unwrap(), h.to_u64().unwrap());
            if (l + 1..=h).any(is_prime_trial) {
                return e;
            }
        }
        e += unit;
    }
}

pub fn generate_sequence(p: &ParamSet, opts: &SequenceOptions) -> Result<StageSequence> {
    let unit = p.exponent_unit();
    let check_unit = |e: u64| -> Result<()> {
        if e == 0 || e % unit != 0 {
            return Err(LabError::ConstraintViolation(format!("q^β∈ℤ (exponent {e} not a multiple of {unit})")));
        }
        if bits_of_power(opts.base, e) > opts.budget_bits {
            return Err(LabError::Overflow { needed: bits_of_power(opts.base, e), budget: opts.budget_bits });
        }
        Ok(())
    };
    if let Some(exps) = &opts.explicit {
        if exps.len() < p.stages {
            return Err(LabError::Config(format!("{} exponents given for {} stages", exps.len(), p.stages)));
        }
        let exps = exps[..p.stages].to_vec();
        let mut compliant = vec![true];
        for (k, &e) in exps.iter().enumerate() {
            check_unit(e)?;
            if k > 0 {
                if e <= exps[k - 1] {
                    return Err(LabError::ConstraintViolation("q_i increasing".into()));
                }
                compliant.push(strict_ok_exp(p, k + 1, exps[k - 1], e));
            }
        }
        return Ok(StageSequence { base: opts.base, exps, mode: GrowthMode::Explicit, compliant });
    }
    let e1 = opts.first_exp.unwrap_or_else(|| first_exponent(p, opts.base));
    check_unit(e1)?;
    let mut exps = vec![e1];
    let mut compliant = vec![true];
    for i in 2..=p.stages {
        let prev = num::pow(BigInt::from(opts.base), *exps.last().unwrap() as usize);
        let q = next_q(&prev, p, i, opts.base, opts.budget_bits)?;
        let e = (log2_int(&q) / (opts.base as f64).log2()).round() as u64;
        compliant.push(strict_ok_exp(p, i, *exps.last().unwrap(), e));
        exps.push(e);
    }
    Ok(StageSequence { base: opts.base, exps, mode: p.growth, compliant })
}

// ---------------------------------------------------------------- primes

pub fn is_prime_trial(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut f = 3u64;
    while f.saturating_mul(f) <= n {
        if n % f == 0 {
            return false;
        }
        f += 2;
    }
    true
}

/// All primes ≤ n.
pub fn primes_upto(n: u64) -> Vec<u64> {
    if n < 2 {
        return vec![];
    }
    let n = n as usize;
    let mut composite = vec![false; n + 1];
    let mut out = Vec::new();
    for k in 2..=n {
        if !composite[k] {
            out.push(k as u64);
            let mut m = k * k;
            while m <= n {
                composite[m] = true;
                m += k;
            }
        }
    }
    out
}

/// Largest window span sieved in one call.
pub const MAX_SIEVE_SPAN: u64 = 1 << 34;

/// Primes in (lo, hi] by a segmented sieve.
pub fn sieve_range(lo: u64, hi: u64) -> Result<Vec<u64>> {
    if hi <= lo {
        return Ok(vec![]);
    }
    if hi - lo > MAX_SIEVE_SPAN || hi > 1 << 62 {
        return Err(too_large("params", format!("prime window ({lo}, {hi}]")));
    }
    let root = (hi as f64).sqrt() as u64 + 2;
    let small = primes_upto(root);
    const SEG: u64 = 1 << 18;
    let mut out = Vec::new();
    let mut start = lo + 1;
    while start <= hi {
        let end = (start + SEG - 1).min(hi);
        let mut marks = vec![true; (end - start + 1) as usize];
        for &p in &small {
            if p * p > end {
                break;
            }
            let mut m = (start.div_ceil(p) * p).max(p * p);
            while m <= end {
                marks[(m - start) as usize] = false;
                m += p;
            }
        }
        for (k, &is_p) in marks.iter().enumerate() {
            let n = start + k as u64;
            if is_p && n >= 2 {
                out.push(n);
            }
        }
        start = end + 1;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    Standard,
    Nongeometric,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimeWindow {
    pub lo: RealPower,
    pub hi: RealPower,
    pub primes: Vec<u64>,
    pub mode: WindowMode,
}

impl PrimeWindow {
    pub fn count(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }

    pub fn contains(&self, p: u64) -> bool {
        self.primes.binary_search(&p).is_ok()
    }

    /// hi / ln(hi), the prime-number-theorem surrogate for the count.
    pub fn surrogate(&self) -> f64 {
        let h = self.hi.to_f64();
        if h <= 1.0 {
            0.0
        } else {
            h / h.ln()
        }
    }

    /// Σ 1/(p-1)
    pub fn reciprocal_sum(&self) -> f64 {
        self.primes.iter().map(|&p| 1.0 / (p - 1) as f64).sum()
    }

    pub fn smallest(&self) -> Option<u64> {
        self.primes.first().copied()
    }

    pub fn largest(&self) -> Option<u64> {
        self.primes.last().copied()
    }
}

/// Primes p with lo < p ≤ hi for irrational bounds; exact via floors.
pub fn primes_in_real_window(lo: RealPower, hi: RealPower, mode: WindowMode) -> Result<PrimeWindow> {
    let lf = lo.floor();
    let hf = hi.floor();
    let (Some(l), Some(h)) = (lf.to_u64(), hf.to_u64()) else {
        return Err(too_large("params", format!("prime window ({lo}, {hi}]")));
    };
    let primes = sieve_range(l, h)?;
    Ok(PrimeWindow { lo, hi, primes, mode })
}

pub fn primes_in_window(lo: &Rational, hi: &Rational) -> Result<PrimeWindow> {
    if lo < &int(1) || hi <= lo {
        return Err(LabError::ConstraintViolation("1≤lo<hi".into()));
    }
    let one = BigInt::one();
    primes_in_real_window(
        RealPower::new(lo.clone(), one.clone(), int(0)),
        RealPower::new(hi.clone(), one, int(0)),
        WindowMode::Custom,
    )
}

/// 𝒫_i = primes in (q_i^γ/2, q_i^γ].
pub fn standard_window(qs: &StageSequence, i: usize, gamma: &Rational) -> Result<PrimeWindow> {
    let hi = qs.pow(i, gamma);
    let lo = RealPower::new(rat(1, 2), hi.base.clone(), hi.exp.clone());
    primes_in_real_window(lo, hi, WindowMode::Standard)
}

/// 𝒫'_i = primes in (q_i^(a-b/2-β), q_i^(b/2)].
pub fn nongeometric_prime_window(a: &Rational, b: &Rational, beta: &Rational, qs: &StageSequence, i: usize) -> Result<PrimeWindow> {
    let half_b = b / int(2);
    let lo_exp = a - &half_b - beta;
    if !(a < b && b <= &(int(2) * a)) {
        return Err(LabError::ConstraintViolation("a<b≤2a".into()));
    }
    if beta.is_negative() || lo_exp.is_negative() {
        return Err(LabError::ConstraintViolation("0≤β≤a−b/2".into()));
    }
    let w = primes_in_real_window(qs.pow(i, &lo_exp), qs.pow(i, &half_b), WindowMode::Nongeometric)?;
    if w.is_empty() {
        return Err(LabError::EmptyWindow);
    }
    Ok(w)
}

/// Σ_{p ∈ P} 1/(p-1) as f64 from the list.
pub fn reciprocal_sum(primes: &[u64]) -> f64 {
    primes.iter().map(|&p| 1.0 / (p - 1) as f64).sum()
}

pub fn describe_window(w: &PrimeWindow) -> String {
    format!("({}, {}] #{} surrogate {:.1}", w.lo, w.hi, w.count(), w.surrogate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sieve_matches_trial_division() {
        let got = sieve_range(0, 20000).unwrap();
        let want: Vec<u64> = (0..=20000).filter(|&n| is_prime_trial(n)).collect();
        assert_eq!(got, want);
        let got = sieve_range(999_000, 1_000_000).unwrap();
        let want: Vec<u64> = (999_001..=1_000_000).filter(|&n| is_prime_trial(n)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn exponent_unit_from_denominators() {
        let p = ParamSet::new(2, rat(1, 10), vec![rat(1, 5), rat(17, 20)], GrowthMode::Strict, 2);
        assert_eq!(p.exponent_unit(), 20);
    }
}
