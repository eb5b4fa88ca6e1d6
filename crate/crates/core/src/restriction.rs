//! Knapp-type examples: indicators on one arithmetic progression, their
//! extension over the dual progression, and the resulting Lᵖ ratio growth.

use num::{BigInt, Integer, One, Signed, ToPrimitive, Zero};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{too_large, LabError, Result};
use crate::exact::{big, ceil, floor, int, rat, to_f64, Rational};
use crate::measure::{dims_summary, MeasureTree};
use crate::params::{nongeometric_prime_window, PrimeWindow, StageSequence};

/// Exponents of the Lᵠ(μ) → Lᵖ̃ extension estimate that fails.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RestrictionParams {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub p_tilde: f64,
    pub q: f64,
}

/// ã = SHRINK·a and b̃ = SHRINK·b when only (a, b) are given.
pub const SHRINK: f64 = 0.95;

impl RestrictionParams {
    pub fn new(a: f64, b: f64, p_tilde: f64, q: f64) -> Result<Self> {
        if !(0.0 < a && a < 1.0 && 0.0 < b && b < 1.0 && b <= 2.0 * a) {
            return Err(LabError::ConstraintViolation("a, b in (0,1), b ≤ 2a".into()));
        }
        let (at, bt) = (SHRINK * a, SHRINK * b);
        let mut p = Self::from_gamma_beta(bt / 2.0, at - bt, p_tilde, q)?;
        let limit = (2.0 - 2.0 * a + b) / b * p.q_prime();
        if p_tilde >= limit {
            return Err(LabError::ExponentNonpositive(p.exponent()));
        }
        p.a = Some(a);
        p.b = Some(b);
        Ok(p)
    }

    pub fn from_gamma_beta(gamma: f64, beta: f64, p_tilde: f64, q: f64) -> Result<Self> {
        if !(gamma > 0.0 && beta >= 0.0 && 2.0 * gamma + beta < 1.0) {
            return Err(LabError::ConstraintViolation("γ > 0, β ≥ 0, 2γ+β < 1".into()));
        }
        if !(p_tilde >= 1.0 && q > 1.0) {
            return Err(LabError::ConstraintViolation("p̃ ≥ 1, q > 1".into()));
        }
        let p = RestrictionParams { a: None, b: None, gamma, beta, p_tilde, q };
        p.check()?;
        Ok(p)
    }

    pub fn q_prime(&self) -> f64 {
        if self.q.is_infinite() {
            1.0
        } else {
            self.q / (self.q - 1.0)
        }
    }

    /// ((1-γ-β)/γ)·q′
    pub fn threshold(&self) -> f64 {
        (1.0 - self.gamma - self.beta) / self.gamma * self.q_prime()
    }

    /// -γ/q′ + (1-γ-β)/p̃
    pub fn exponent(&self) -> f64 {
        let inv_p = if self.p_tilde.is_infinite() { 0.0 } else { 1.0 / self.p_tilde };
        -self.gamma / self.q_prime() + (1.0 - self.gamma - self.beta) * inv_p
    }

    pub fn check(&self) -> Result<()> {
        if self.p_tilde >= self.threshold() || self.exponent() <= 0.0 {
            return Err(LabError::ExponentNonpositive(self.exponent()));
        }
        Ok(())
    }
}

/// p̃ and q as given on a command line: a number or "inf".
pub fn parse_exponent(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "infinity" | "∞" => Ok(f64::INFINITY),
        t => t.parse::<f64>().map_err(|_| LabError::Config(format!("bad exponent {t:?}"))),
    }
}

// ---------------------------------------------------------------- Knapp indicator

/// One maximal piece of E_{i,p} inside a deepest box.
#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub lo: Rational,
    pub hi: Rational,
    /// Progression point m/(p q^β) the piece hugs.
    pub anchor: Rational,
    /// μ(piece), with μ uniform on each deepest box.
    pub mass: Rational,
}

/// χ of E_{i,p} = {x : dist(x, (ℤ∖pℤ)/(p q_i^β)) ≤ (10 q_i)⁻¹}, cut by the support.
#[derive(Clone, Debug, PartialEq)]
pub struct KnappIndicator {
    pub stage: usize,
    pub p: u64,
    pub q_i: BigInt,
    pub q_beta: BigInt,
    pub eta: Rational,
    pub pieces: Vec<Piece>,
    pub mass: Rational,
}

impl KnappIndicator {
    /// ‖f‖_{Lᵠ(μ)} = μ(E)^(1/q)
    pub fn lq_norm(&self, q: f64) -> f64 {
        let m = to_f64(&self.mass);
        if q.is_infinite() {
            if m > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            m.powf(1.0 / q)
        }
    }

    pub fn mass_f64(&self) -> f64 {
        to_f64(&self.mass)
    }
}

pub fn knapp_indicator(tree: &MeasureTree, qs: &StageSequence, beta: &Rational, window: &PrimeWindow, i: usize, p: u64) -> Result<KnappIndicator> {
    if !window.contains(p) {
        return Err(LabError::PrimeOutsideWindow(p));
    }
    if i == 0 || i > qs.len() {
        return Err(LabError::ConstraintViolation(format!("stage {i} outside 1..={}", qs.len())));
    }
    let q_i = qs.q(i);
    let q_beta = qs.int_pow(i, beta).ok_or_else(|| LabError::ConstraintViolation("q_i^β is not an integer".into()))?;
    let period = big(&(&q_beta * BigInt::from(p)));
    let eta = Rational::new(BigInt::one(), &q_i * BigInt::from(10));
    let st = tree.deepest();
    if st.set.dim != 1 {
        return Err(LabError::ConstraintViolation("d=1".into()));
    }
    let r = &st.set.radius;
    let width = r * int(2);
    let bp = BigInt::from(p);
    let period_f = to_f64(&period);
    let slack = to_f64(&((r + &eta) * &period)) * (1.0 + 1e-9) + 1e-9;
    let pieces: Vec<Piece> = st
        .set
        .centers
        .par_iter()
        .zip(&st.weight)
        .filter_map(|(c, w)| {
            // cheap rejection well outside the neighbourhood
            let tf = to_f64(&c[0]) * period_f;
            if (tf - tf.round()).abs() > slack {
                return None;
            }
            let t = &c[0] * &period;
            for m in [floor(&t), ceil(&t)] {
                if m.is_multiple_of(&bp) {
                    continue;
                }
                let z = big(&m) / &period;
                let lo = (&c[0] - r).max(&z - &eta);
                let hi = (&c[0] + r).min(&z + &eta);
                if hi > lo {
                    let mass = w * (&hi - &lo) / &width;
                    return Some(Piece { lo, hi, anchor: z, mass });
                }
            }
            None
        })
        .collect();
    let mass = pieces.iter().map(|p| &p.mass).sum();
    Ok(KnappIndicator { stage: i, p, q_i, q_beta, eta, pieces, mass })
}

// ---------------------------------------------------------------- dual progression

/// p q_i^β ℤ ∩ [-q_i, q_i]; each point stands for its 1/10-neighbourhood.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualProgression {
    pub stage: usize,
    pub p: u64,
    pub spacing: i128,
    pub bound: i128,
    pub count: u64,
}

/// Width of the unit-scale cell around each dual point.
pub const DUAL_CELL: f64 = 0.2;

impl DualProgression {
    pub fn new(ind: &KnappIndicator) -> Result<Self> {
        let spacing = (&ind.q_beta * BigInt::from(ind.p)).to_i128().ok_or_else(|| too_large("restriction", "dual spacing"))?;
        let bound = ind.q_i.to_i128().filter(|b| *b < (1i128 << 100)).ok_or_else(|| too_large("restriction", "q_i beyond 2^100"))?;
        let half = bound / spacing;
        Ok(DualProgression { stage: ind.stage, p: ind.p, spacing, bound, count: (2 * half + 1) as u64 })
    }

    pub fn points(&self) -> impl Iterator<Item = i128> + '_ {
        let half = self.bound / self.spacing;
        (-half..=half).map(move |k| k * self.spacing)
    }

    /// Nonnegative points only; |ext| is even in ξ for real measures.
    pub fn half_points(&self) -> Vec<i128> {
        (0..=self.bound / self.spacing).map(|k| k * self.spacing).collect()
    }
}

/// max over x ∈ E and dual ξ of |xξ - mk|, which bounds dist(xξ, ℤ); exact.
pub fn dual_distance_bound(ind: &KnappIndicator, dual: &DualProgression) -> Rational {
    let far = ind
        .pieces
        .iter()
        .map(|pc| (&pc.lo - &pc.anchor).abs().max((&pc.hi - &pc.anchor).abs()))
        .max()
        .unwrap_or_else(Rational::zero);
    let xi_max = Rational::from_integer(BigInt::from(dual.bound / dual.spacing * dual.spacing));
    far * xi_max
}

// ---------------------------------------------------------------- extension transform

/// Midpoint as i128 num/den plus the f64 mass and length.
struct Atom {
    num: i128,
    den: i128,
    mid: Rational,
    mass: f64,
    len: f64,
}

fn atoms(ind: &KnappIndicator) -> Vec<Atom> {
    ind.pieces
        .iter()
        .map(|pc| {
            let mid = (&pc.lo + &pc.hi) / int(2);
            Atom {
                num: mid.numer().to_i128().unwrap_or(i128::MAX),
                den: mid.denom().to_i128().unwrap_or(i128::MAX),
                mass: to_f64(&pc.mass),
                len: to_f64(&(&pc.hi - &pc.lo)),
                mid,
            }
        })
        .collect()
}

/// frac(mid·ξ) computed exactly.
fn phase(a: &Atom, xi: i128) -> f64 {
    match a.num.checked_mul(xi) {
        Some(v) if a.den != i128::MAX => v.rem_euclid(a.den) as f64 / a.den as f64,
        _ => {
            let t = &a.mid * Rational::from_integer(BigInt::from(xi));
            let f = &t - big(&floor(&t));
            to_f64(&f)
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// (f dμ)^(ξ) = Σ_pieces μ(piece)·e^(-2πi mid ξ)·sinc(π len ξ), μ uniform on each box.
pub fn extension_values(ind: &KnappIndicator, xis: &[i128]) -> Vec<Complex64> {
    let at = atoms(ind);
    xis.par_iter()
        .map(|&xi| {
            let mut s = Complex64::new(0.0, 0.0);
            for a in &at {
                let ph = -std::f64::consts::TAU * phase(a, xi);
                s += Complex64::from_polar(a.mass * sinc(std::f64::consts::PI * a.len * xi as f64), ph);
            }
            s
        })
        .collect()
}

/// Riemann-sum Lᵖ norm on a uniform grid; the max when p = ∞.
pub fn lp_norm(values: &[f64], p: f64, cell: f64) -> f64 {
    if p.is_infinite() {
        return values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    }
    (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * cell).powf(1.0 / p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioReport {
    pub stage: usize,
    pub p: u64,
    pub mass: f64,
    pub dual_count: u64,
    /// Ratio of the computed norms, NaN when only the certificate was requested.
    pub ratio: f64,
    /// μ(E)^(1/q′)·N^(1/p̃)/10
    pub certificate: f64,
    /// min |ext(ξ)|/μ(E) over the dual points evaluated.
    pub min_ext_ratio: f64,
    pub exponent: f64,
    pub distance_bound: f64,
    pub distance_ok: bool,
}

/// Lower-bound certificate μ(E)^(1/q′)·N^(1/p̃)/10.
pub fn ratio_certificate(mass: f64, count: u64, params: &RestrictionParams) -> f64 {
    let inv_p = if params.p_tilde.is_infinite() { 0.0 } else { 1.0 / params.p_tilde };
    mass.powf(1.0 / params.q_prime()) * (count as f64).powf(inv_p) / 10.0
}

/// Dual points times pieces above which only the certificate is computed.
pub const EXTENSION_BUDGET: f64 = 4e9;

/// ‖(f dμ)^‖_{Lᵖ̃}/‖f‖_{Lᵠ(μ)} over the dual cells, with its certificate.
pub fn restriction_ratio(ind: &KnappIndicator, params: &RestrictionParams, evaluate: bool) -> Result<RatioReport> {
    params.check()?;
    let dual = DualProgression::new(ind)?;
    let mass = ind.mass_f64();
    let dist = dual_distance_bound(ind, &dual);
    let mut rep = RatioReport {
        stage: ind.stage,
        p: ind.p,
        mass,
        dual_count: dual.count,
        ratio: f64::NAN,
        certificate: ratio_certificate(mass, dual.count, params),
        min_ext_ratio: f64::NAN,
        exponent: params.exponent(),
        distance_bound: to_f64(&dist),
        distance_ok: dist <= rat(1, 10),
    };
    if !evaluate {
        return Ok(rep);
    }
    if dual.count as f64 / 2.0 * ind.pieces.len() as f64 > EXTENSION_BUDGET {
        return Err(too_large("restriction", format!("{} dual points × {} pieces", dual.count, ind.pieces.len())));
    }
    let half = dual.half_points();
    let vals: Vec<f64> = extension_values(ind, &half).iter().map(|v| v.norm()).collect();
    // each positive point stands for ±ξ
    let mut full = Vec::with_capacity(dual.count as usize);
    full.push(vals[0]);
    for v in &vals[1..] {
        full.push(*v);
        full.push(*v);
    }
    let norm = lp_norm(&full, params.p_tilde, DUAL_CELL);
    rep.ratio = norm / ind.lq_norm(params.q);
    rep.min_ext_ratio = vals.iter().fold(f64::INFINITY, |a, &v| a.min(v)) / mass;
    Ok(rep)
}

// ---------------------------------------------------------------- nongeometric window

/// 𝒫'_i = primes in (q_i^(a-b/2-β), q_i^(b/2)].
pub fn nongeometric_window(a: &Rational, b: &Rational, beta: &Rational, i: usize, qs: &StageSequence) -> Result<PrimeWindow> {
    nongeometric_prime_window(a, b, beta, qs, i)
}

// ---------------------------------------------------------------- dimension report

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalBound {
    pub p: u64,
    /// p⁻¹ q^(-b/2-β-ε)
    pub lower: f64,
    /// p⁻¹ q^(-b/2-β+ε)
    pub upper: f64,
    pub min_box_mass: f64,
    pub max_box_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimsReport {
    pub coarse_log2: f64,
    pub fine_log2: f64,
    pub inf_slope: f64,
    pub inf_tag: u64,
    pub inf_at: f64,
    pub typical_slope: f64,
    pub target_inf: f64,
    pub target_typical: f64,
    pub boxes: u64,
    pub bounds: Vec<IntervalBound>,
    /// Masses summed in f64 (implicit sweep) rather than exactly.
    pub float_masses: bool,
}

/// Bounds at the smallest and largest prime that carries mass.
fn interval_bounds(masses: &[(u64, f64)], q_log2: f64, b: f64, beta: f64, eps: f64) -> Vec<IntervalBound> {
    let lo_p = masses.iter().map(|m| m.0).min().unwrap_or(0);
    let hi_p = masses.iter().map(|m| m.0).max().unwrap_or(0);
    let mut picks = vec![lo_p, hi_p];
    picks.dedup();
    picks
        .into_iter()
        .map(|p| {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for &(t, m) in masses {
                if t == p {
                    lo = lo.min(m);
                    hi = hi.max(m);
                }
            }
            let base = |e: f64| (-(b / 2.0 + beta + e) * q_log2).exp2() / p as f64;
            IntervalBound { p, lower: base(eps), upper: base(-eps), min_box_mass: lo, max_box_mass: hi }
        })
        .collect()
}

/// Two-scale slopes at q_{m-1}⁻¹ and q_m⁻¹ over an explicit tree.
pub fn measure_dims_report(tree: &MeasureTree, qs: &StageSequence, a: f64, b: f64, beta: f64, eps: f64) -> Result<DimsReport> {
    let m = tree.depth();
    if m < 2 || qs.len() < m {
        return Err(LabError::ConstraintViolation("need two stages".into()));
    }
    let coarse = Rational::new(BigInt::one(), qs.q(m - 1));
    let fine = Rational::new(BigInt::one(), qs.q(m));
    let s = dims_summary(tree, &coarse, &fine);
    let st = tree.deepest();
    let masses: Vec<(u64, f64)> = st.set.tags.iter().zip(&st.weight).map(|(&t, w)| (t, to_f64(w))).collect();
    Ok(DimsReport {
        coarse_log2: qs.log2_q(m - 1),
        fine_log2: qs.log2_q(m),
        inf_slope: s.inf_slope,
        inf_tag: s.inf_tag,
        inf_at: to_f64(&s.inf_at[0]),
        typical_slope: s.typical_slope,
        target_inf: a,
        target_typical: b + beta,
        boxes: s.boxes as u64,
        bounds: interval_bounds(&masses, qs.log2_q(m), b, beta, eps),
        float_masses: false,
    })
}

/// Child v/den of the last stage with its f64 weight.
#[derive(Clone, Copy, Debug)]
struct Child {
    v: u64,
    den: u64,
    w: f64,
}

fn frac_cmp(a: &Child, b: &Child) -> std::cmp::Ordering {
    (a.v as u128 * b.den as u128).cmp(&(b.v as u128 * a.den as u128))
}

/// Last stage = primes window with numerators outside pℤ, prime-weighted, never materialized as rationals.
/// The parents are the deepest boxes of `tree`; `primes` and `q_beta` describe the next stage.
pub fn implicit_dims_report(tree: &MeasureTree, qs: &StageSequence, primes: &[u64], q_beta: u64, a: f64, b: f64, beta: f64, eps: f64) -> Result<DimsReport> {
    let m = tree.depth() + 1;
    if qs.len() < m {
        return Err(LabError::ConstraintViolation("sequence shorter than the tree plus one".into()));
    }
    let st = tree.deepest();
    if st.set.dim != 1 {
        return Err(LabError::ConstraintViolation("d=1".into()));
    }
    let qm = qs.q(m).to_u64().ok_or_else(|| too_large("restriction", "q_m beyond 2^64"))?;
    let r1 = &st.set.radius;
    let mut children: Vec<Child> = Vec::new();
    // lowest-index parent wins a shared child, as in the explicit tree
    let mut last_v: Vec<Option<u64>> = vec![None; primes.len()];
    for (k, c) in st.set.centers.iter().enumerate() {
        let pw = to_f64(&st.weight[k]);
        let start = children.len();
        let mut total = 0.0;
        for (pi, &p) in primes.iter().enumerate() {
            let den = p.checked_mul(q_beta).ok_or_else(|| too_large("restriction", "denominator"))?;
            let dr = Rational::from_integer(BigInt::from(den));
            let lo = ceil(&((&c[0] - r1) * &dr)).max(BigInt::zero());
            let hi = floor(&((&c[0] + r1) * &dr));
            let (Some(lo), Some(hi)) = (lo.to_u64(), hi.to_u64()) else {
                return Err(too_large("restriction", "numerator"));
            };
            let lo = match last_v[pi] {
                Some(l) if l >= lo => l + 1,
                _ => lo,
            };
            let wp = 1.0 / (p - 1) as f64;
            let mut v = lo;
            while v <= hi {
                if v % p != 0 {
                    children.push(Child { v, den, w: wp });
                    total += wp;
                }
                v += 1;
            }
            if hi >= lo {
                last_v[pi] = Some(hi);
            }
        }
        if children.len() == start {
            return Err(LabError::EmptyParent { stage: m, parent: k });
        }
        for ch in &mut children[start..] {
            ch.w *= pw / total;
        }
        if children.len() > 200_000_000 {
            return Err(too_large("restriction", "implicit stage"));
        }
    }
    children.par_sort_unstable_by(frac_cmp);
    let mut prefix = Vec::with_capacity(children.len() + 1);
    let mut acc = 0.0;
    prefix.push(0.0);
    for ch in &children {
        acc += ch.w;
        prefix.push(acc);
    }
    // reach = scale + q_m⁻¹, as a fraction num/den with den = q_{m-1}·q_m or q_m
    let q_prev = qs.q(m - 1).to_u64().ok_or_else(|| too_large("restriction", "q_(m-1) beyond 2^64"))?;
    let reach = |scale_den: u64| -> (i128, i128) { ((qm / scale_den.min(qm)) as i128 + 1, qm as i128) };
    let (cn, cd) = if qm % q_prev == 0 { reach(q_prev) } else { return Err(LabError::ConstraintViolation("q_(m-1) must divide q_m".into())) };
    let (fn_, fd) = (2i128, qm as i128);
    let ball = |j: usize, num: i128, den: i128| -> f64 {
        let x = &children[j];
        let (xv, xd) = (x.v as i128, x.den as i128);
        // y ≥ x - num/den  ⇔  y.v·xd·den ≥ (xv·den - num·xd)·y.den
        let left = children.partition_point(|y| (y.v as i128) * xd * den < (xv * den - num * xd) * y.den as i128);
        let right = children.partition_point(|y| (y.v as i128) * xd * den <= (xv * den + num * xd) * y.den as i128);
        prefix[right] - prefix[left]
    };
    if (primes.last().copied().unwrap_or(1) as i128 * q_beta as i128).pow(2).checked_mul(qm as i128 * 4).is_none() {
        return Err(too_large("restriction", "cross products beyond i128"));
    }
    let denom = -(qm as f64).ln() + (q_prev as f64).ln();
    let mut rows: Vec<(f64, f64, usize)> = (0..children.len())
        .into_par_iter()
        .map(|j| {
            let mf = ball(j, fn_, fd);
            let mc = ball(j, cn, cd);
            ((mf.ln() - mc.ln()) / denom, children[j].w, j)
        })
        .collect();
    let (inf_slope, _, inf_j) = rows.iter().copied().fold((f64::INFINITY, 0.0, 0), |a, b| if b.0 < a.0 { b } else { a });
    rows.par_sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let half = acc / 2.0;
    let mut run = 0.0;
    let mut typical = f64::NAN;
    for r in &rows {
        run += r.1;
        if run >= half {
            typical = r.0;
            break;
        }
    }
    let tag = |c: &Child| c.den / q_beta;
    let masses: Vec<(u64, f64)> = children.iter().map(|c| (tag(c), c.w)).collect();
    let ic = children[inf_j];
    Ok(DimsReport {
        coarse_log2: qs.log2_q(m - 1),
        fine_log2: qs.log2_q(m),
        inf_slope,
        inf_tag: tag(&ic),
        inf_at: ic.v as f64 / ic.den as f64,
        typical_slope: typical,
        target_inf: a,
        target_typical: b + beta,
        boxes: children.len() as u64,
        bounds: interval_bounds(&masses, qs.log2_q(m), b, beta, eps),
        float_masses: true,
    })
}
