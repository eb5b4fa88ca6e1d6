//! Exact rational helpers and comparisons against irrational powers `c * t^(u/v)`.

use std::fmt;

use num::bigint::Sign;
use num::{BigInt, BigRational, Integer, One, Signed, ToPrimitive, Zero};

use crate::error::{LabError, Result};

pub type Rational = BigRational;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn big(n: &BigInt) -> Rational {
    Rational::from_integer(n.clone())
}

/// Accepts `3`, `-2/7`, `0.25`, `1.5e-2`.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || LabError::Config(format!("not a rational: {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(Rational::new(n, d));
    }
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (ip, fp) = mant.split_once('.').unwrap_or((mant, ""));
    if ip.is_empty() && fp.is_empty() {
        return Err(bad());
    }
    if !ip.chars().chain(fp.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: BigInt = format!("{ip}{fp}0").parse::<BigInt>().map_err(|_| bad())? / 10;
    let mut r = Rational::new(digits, BigInt::from(10u32).pow(fp.len() as u32));
    let ten = int(10);
    if exp >= 0 {
        r *= num::pow(ten, exp as usize);
    } else {
        r /= num::pow(ten, (-exp) as usize);
    }
    Ok(if neg { -r } else { r })
}

pub fn floor(x: &Rational) -> BigInt {
    x.floor().to_integer()
}

pub fn ceil(x: &Rational) -> BigInt {
    x.ceil().to_integer()
}

pub fn to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// log2 of a positive integer, accurate for arbitrarily large values.
pub fn log2_int(n: &BigInt) -> f64 {
    assert!(n.sign() == Sign::Plus, "log2 of nonpositive integer");
    let bits = n.bits();
    if bits <= 1000 {
        return n.to_f64().unwrap().log2();
    }
    let shift = bits - 64;
    (n >> shift).to_f64().unwrap().log2() + shift as f64
}

pub fn log2_rat(x: &Rational) -> f64 {
    log2_int(x.numer()) - log2_int(x.denom())
}

/// Nonnegative rational `x` as an integer if it is one.
pub fn as_integer(x: &Rational) -> Option<BigInt> {
    x.is_integer().then(|| x.to_integer())
}

pub fn lcm_denoms<'a>(xs: impl IntoIterator<Item = &'a Rational>) -> BigInt {
    xs.into_iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()))
}

/// The positive real `coef * base^exp` with rational exponent.
#[derive(Clone, Debug, PartialEq)]
pub struct RealPower {
    pub coef: Rational,
    pub base: BigInt,
    pub exp: Rational,
}

impl RealPower {
    pub fn new(coef: Rational, base: BigInt, exp: Rational) -> Self {
        assert!(coef.is_positive() && base.is_positive());
        RealPower { coef, base, exp }
    }

    /// Compares `x^v * base^(-u)` against `coef^v`, where exp = u/v.
    fn cmp_rat(&self, x: &Rational) -> std::cmp::Ordering {
        if !x.is_positive() {
            return std::cmp::Ordering::Less;
        }
        let u = self.exp.numer();
        let v = self.exp.denom().to_usize().expect("exponent denominator too large");
        let xv = num::pow(x.clone(), v);
        let cv = num::pow(self.coef.clone(), v);
        let tu = num::pow(big(&self.base), u.magnitude().to_usize().expect("exponent too large"));
        if u.is_negative() {
            (xv * tu).cmp(&cv)
        } else {
            xv.cmp(&(cv * tu))
        }
    }

    pub fn ge(&self, x: &Rational) -> bool {
        self.cmp_rat(x) != std::cmp::Ordering::Greater
    }

    pub fn gt(&self, x: &Rational) -> bool {
        self.cmp_rat(x) == std::cmp::Ordering::Less
    }

    /// Exact value when it is rational with a perfect-power check.
    pub fn exact(&self) -> Option<Rational> {
        let f = self.floor();
        let cand = big(&f);
        if self.cmp_rat(&cand) == std::cmp::Ordering::Equal {
            return Some(cand);
        }
        if self.exp.is_integer() {
            let e = self.exp.to_integer();
            let p = num::pow(big(&self.base), e.magnitude().to_usize()?);
            return Some(if e.is_negative() { &self.coef / p } else { &self.coef * p });
        }
        None
    }

    /// `floor(coef * base^exp)` for nonnegative exponents.
    pub fn floor(&self) -> BigInt {
        let u = self.exp.numer();
        if u.is_negative() {
            // value below coef; fall back to bisection on integers
            let mut lo = BigInt::zero();
            let mut hi = floor(&self.coef) + 1;
            while &hi - &lo > BigInt::one() {
                let mid: BigInt = (&lo + &hi) >> 1;
                if self.ge(&big(&mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return lo;
        }
        let v = self.exp.denom().to_u32().expect("exponent denominator too large");
        let cv = num::pow(self.coef.clone(), v as usize);
        let tu = num::pow(self.base.clone(), u.to_usize().expect("exponent too large"));
        let x = floor(&(cv * big(&tu)));
        x.nth_root(v)
    }

    pub fn log2(&self) -> f64 {
        log2_rat(&self.coef) + to_f64(&self.exp) * log2_int(&self.base)
    }

    pub fn to_f64(&self) -> f64 {
        self.log2().exp2()
    }
}

impl fmt::Display for RealPower {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.coef.is_one() {
            write!(f, "{}*", self.coef)?;
        }
        write!(f, "{}^({})", self.base, self.exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse_rational("0.25").unwrap(), rat(1, 4));
        assert_eq!(parse_rational("-3/6").unwrap(), rat(-1, 2));
        assert_eq!(parse_rational("7").unwrap(), int(7));
        assert_eq!(parse_rational("1.5e-2").unwrap(), rat(3, 200));
        assert_eq!(parse_rational(".5").unwrap(), rat(1, 2));
        assert!(parse_rational("x").is_err());
        assert!(parse_rational("1/0").is_err());
    }

    #[test]
    fn power_floor_and_compare() {
        // 2^(21/2) = 1448.15...
        let p = RealPower::new(int(1), BigInt::from(2), rat(21, 2));
        assert_eq!(p.floor(), BigInt::from(1448));
        assert!(p.ge(&int(1448)));
        assert!(!p.ge(&int(1449)));
        let half = RealPower::new(rat(1, 2), BigInt::from(16), rat(1, 2));
        assert_eq!(half.floor(), BigInt::from(2));
        assert_eq!(half.exact(), Some(int(2)));
        assert!(p.exact().is_none());
        let neg = RealPower::new(int(1), BigInt::from(16), rat(-5, 4));
        assert!(neg.ge(&rat(1, 32)));
        assert!(!neg.gt(&rat(1, 32)));
    }

    #[test]
    fn log2_large() {
        let n = BigInt::one() << 3000u32;
        assert!((log2_int(&n) - 3000.0).abs() < 1e-9);
    }
}
