//! Sumset and projection cover counts for the A + cB and codimension-one
//! counterexamples, plus the closed-form dimension bounds they are compared with.

use std::collections::HashSet;

use num::{BigInt, Integer, One, Signed, ToPrimitive};
use serde::Serialize;

use crate::error::{too_large, LabError, Result};
use crate::exact::{big, int, rat, Rational, RealPower};
use crate::lattice::{build_stage, IntervalSet, StageMode};
use crate::params::{GrowthMode, ParamSet, StageSequence};

/// Dimensions of A, B, C with the derived parameters of C.
#[derive(Clone, Debug, PartialEq)]
pub struct AbcParams {
    pub s_a: Rational,
    pub s_b: Rational,
    pub s_c: Rational,
    pub gamma_c: Rational,
    pub beta_c: Rational,
}

fn open_unit(x: &Rational) -> bool {
    x.is_positive() && x < &int(1)
}

impl AbcParams {
    pub fn new(s_a: Rational, s_b: Rational, s_c: Rational) -> Result<Self> {
        let cv = |s: &str| Err(LabError::ConstraintViolation(s.to_string()));
        if !(open_unit(&s_a) && open_unit(&s_b) && open_unit(&s_c)) {
            return cv("s_A,s_B,s_C∈(0,1)");
        }
        let diff = &s_a - &s_b;
        if diff.is_negative() {
            return cv("s_A≥s_B");
        }
        if s_c <= diff {
            return cv("s_C>s_A−s_B");
        }
        let gamma_c = (&s_c + &s_b - &s_a) / int(2);
        let beta_c = diff;
        if &gamma_c + &beta_c >= int(1) {
            return cv("γ_C+β_C<1");
        }
        Ok(AbcParams { s_a, s_b, s_c, gamma_c, beta_c })
    }

    /// A and B use γ = 0, β = s; C uses (γ_C, β_C).
    pub fn param_sets(&self, growth: GrowthMode, stages: usize) -> [ParamSet; 3] {
        [
            ParamSet::one_dim(int(0), self.s_a.clone(), growth, stages),
            ParamSet::one_dim(int(0), self.s_b.clone(), growth, stages),
            ParamSet::one_dim(self.gamma_c.clone(), self.beta_c.clone(), growth, stages),
        ]
    }

    /// One parameter set whose growth conditions imply those of A, B and C,
    /// for generating the shared sequence.
    pub fn shared_params(&self, growth: GrowthMode, stages: usize) -> ParamSet {
        ParamSet::new(
            3,
            int(0),
            vec![self.s_a.clone(), self.s_b.clone(), &self.gamma_c + &self.beta_c],
            growth,
            stages,
        )
    }

    /// (s_A + s_B + s_C)/2
    pub fn cover_exponent(&self) -> Rational {
        (&self.s_a + &self.s_b + &self.s_c) / int(2)
    }
}

// Integer numerators over one common denominator.
fn common_denominator(xs: &[Rational]) -> Result<(Vec<i128>, i128)> {
    let mut den = BigInt::one();
    for x in xs {
        den = den.lcm(x.denom());
    }
    let d = den.to_i128().ok_or_else(|| too_large("projections", "common denominator"))?;
    let nums = xs
        .iter()
        .map(|x| (x.numer() * (&den / x.denom())).to_i128().ok_or_else(|| too_large("projections", "numerator")))
        .collect::<Result<_>>()?;
    Ok((nums, d))
}

fn ck(x: Option<i128>) -> Result<i128> {
    x.ok_or_else(|| too_large("projections", "i128 overflow in cell index"))
}

fn to_i128(x: &BigInt) -> Result<i128> {
    x.to_i128().ok_or_else(|| too_large("projections", "modulus"))
}

/// Number of q⁻¹-grid cells [k/q, (k+1)/q) hit by the sums a + c·b over all
/// pairs of centers.
pub fn sumset_cover(a: &[Rational], b: &[Rational], c: &Rational, q: &BigInt) -> Result<u64> {
    let (an, da) = common_denominator(a)?;
    let (bn, db) = common_denominator(b)?;
    let cn = to_i128(c.numer())?;
    let cd = to_i128(c.denom())?;
    let q = to_i128(q)?;
    let cdb = ck(cd.checked_mul(db))?;
    let l = ck(da.checked_mul(cdb / da.gcd(&cdb)))?;
    let (fa, fb) = (l / da, l / cdb);
    let mut cells: HashSet<i128> = HashSet::with_capacity(an.len() * bn.len() / 4);
    for &x in &an {
        let xa = ck(x.checked_mul(fa))?;
        for &y in &bn {
            let t = ck(ck(cn.checked_mul(y))?.checked_mul(fb))?;
            let num = ck(ck(xa.checked_add(t))?.checked_mul(q))?;
            cells.insert(num.div_euclid(l));
        }
    }
    Ok(cells.len() as u64)
}

/// Whether every sum a + c·b is a multiple of 1/(H q^{s_A}), checked exactly.
pub fn sums_on_lattice(a: &[Rational], b: &[Rational], c: &Rational, h: u64, q_sa: &BigInt) -> bool {
    let scale = big(&(BigInt::from(h) * q_sa));
    a.iter().all(|x| b.iter().all(|y| ((x + c * y) * &scale).is_integer()))
}

/// One row of a sumset sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SumsetRow {
    pub s_a: String,
    pub s_b: String,
    pub s_c: String,
    pub stage: usize,
    pub c: String,
    pub h: u64,
    pub count: u64,
    /// 2·H·q^{s_A}, the lattice bound for this c.
    pub lattice_bound: u64,
    /// 3·q^{(s_A+s_B+s_C)/2}
    pub bound: f64,
    /// count / q^{(s_A+s_B+s_C)/2}
    pub slack: f64,
    pub on_lattice: bool,
    pub pass: bool,
}

fn centers_1d(set: &IntervalSet) -> Vec<Rational> {
    set.centers.iter().map(|c| c[0].clone()).collect()
}

/// Sumset covers at stage i for every center c of C's stage-i set (or a
/// subset when `every` > 1 keeps each `every`-th center).
pub fn sumset_sweep(abc: &AbcParams, qs: &StageSequence, i: usize, every: usize) -> Result<Vec<SumsetRow>> {
    let [pa, pb, pc] = abc.param_sets(qs.mode, qs.len());
    let a = centers_1d(&build_stage(i, &pa, qs, &StageMode::AllH)?);
    let b = centers_1d(&build_stage(i, &pb, qs, &StageMode::AllH)?);
    let cset = build_stage(i, &pc, qs, &StageMode::AllH)?;
    let q = qs.q(i);
    let q_sa = qs.int_pow(i, &abc.s_a).ok_or_else(|| LabError::ConstraintViolation("q^{s_A}∈ℤ".into()))?;
    let e = abc.cover_exponent();
    let three = qs.pow(i, &e);
    let three = RealPower::new(int(3), three.base, three.exp);
    let qe = qs.pow(i, &e).to_f64();
    let mut rows = Vec::new();
    for (k, (c, &h)) in cset.centers.iter().zip(&cset.tags).enumerate() {
        if k % every.max(1) != 0 {
            continue;
        }
        let c = &c[0];
        let count = sumset_cover(&a, &b, c, &q)?;
        let lattice_bound = 2 * h * q_sa.to_u64().ok_or_else(|| too_large("projections", "q^{s_A}"))?;
        rows.push(SumsetRow {
            s_a: abc.s_a.to_string(),
            s_b: abc.s_b.to_string(),
            s_c: abc.s_c.to_string(),
            stage: i,
            c: c.to_string(),
            h,
            count,
            lattice_bound,
            bound: three.to_f64(),
            slack: count as f64 / qe,
            on_lattice: sums_on_lattice(&a, &b, c, h, &q_sa),
            pass: three.ge(&int(count as i64)),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- codimension one

/// Exponents s_1 ≤ … ≤ s_d of the factors, direction-set dimension t, and the
/// parameters of the normal set E ⊂ ℝ^{d-1}.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionInstance {
    pub d: usize,
    pub s: Vec<Rational>,
    pub t: Rational,
    pub gamma: Rational,
    pub betas: Vec<Rational>,
    /// t ≤ Σ_{j≥2}(s_j − s_1), where H = 1 suffices.
    pub low_regime: bool,
}

impl ProjectionInstance {
    pub fn new(mut s: Vec<Rational>, t: Rational) -> Result<Self> {
        let d = s.len();
        if d < 2 {
            return Err(LabError::ConstraintViolation("d≥2".into()));
        }
        if !s.iter().all(open_unit) {
            return Err(LabError::ConstraintViolation("s_j∈(0,1)".into()));
        }
        if !t.is_positive() || t >= int(d as i64) {
            return Err(LabError::ConstraintViolation("t∈(0,d)".into()));
        }
        s.sort();
        let excess: Rational = s[1..].iter().map(|x| x - &s[0]).sum();
        let gamma = ((&t - &excess) / int(d as i64)).max(int(0));
        let betas = s[1..].iter().map(|x| x - &s[0]).collect();
        Ok(ProjectionInstance { d, low_regime: t <= excess, s, t, gamma, betas })
    }

    /// Parameters of E, whose points give the normals (1, e).
    pub fn normal_params(&self, growth: GrowthMode, stages: usize) -> ParamSet {
        ParamSet::new(self.d - 1, self.gamma.clone(), self.betas.clone(), growth, stages)
    }

    /// Exponent of the cover bound: s_2+⋯+s_d, or ((d−1)Σs + t)/d above the threshold.
    pub fn cover_exponent(&self) -> Rational {
        if self.low_regime {
            self.s[1..].iter().sum()
        } else {
            let total: Rational = self.s.iter().sum();
            (total * int(self.d as i64 - 1) + &self.t) / int(self.d as i64)
        }
    }
}

/// A normal (1, e_2, …, e_d) from E's stage grid with its H.
#[derive(Clone, Debug, PartialEq)]
pub struct Normal {
    pub h: u64,
    pub e: Vec<Rational>,
}

pub fn normal_grid(inst: &ProjectionInstance, qs: &StageSequence, i: usize) -> Result<Vec<Normal>> {
    let ps = inst.normal_params(qs.mode, qs.len());
    let set = build_stage(i, &ps, qs, &StageMode::AllH)?;
    Ok(set.centers.into_iter().zip(set.tags).map(|(e, h)| Normal { h, e }).collect())
}

/// Stage-i centers of the factor A_j (γ = 0, β = s_j).
pub fn factor_centers(s: &Rational, qs: &StageSequence, i: usize) -> Result<Vec<Rational>> {
    let ps = ParamSet::one_dim(int(0), s.clone(), qs.mode, qs.len());
    Ok(centers_1d(&build_stage(i, &ps, qs, &StageMode::AllH)?))
}

/// Cells of the q⁻¹-grid in V hit by the projected product lattice.
///
/// V is charted by the quotient coordinates y_j = x_j − e_j·x_1 (j ≥ 2), which
/// vanish exactly on the normal line; the chart distorts lengths by a bounded
/// factor, so cell counts agree with Euclidean ones up to constants.
pub fn codim1_cells(factors: &[Vec<Rational>], normal: &[Rational], q: &BigInt) -> Result<u64> {
    let d = factors.len();
    if normal.len() + 1 != d {
        return Err(LabError::ConstraintViolation("normal has d−1 free coordinates".into()));
    }
    let q = to_i128(q)?;
    let (x1, d1) = common_denominator(&factors[0])?;
    // per coordinate: numerators, and integer multipliers over a common L_j
    let mut coords = Vec::with_capacity(d - 1);
    for j in 1..d {
        let (xn, dj) = common_denominator(&factors[j])?;
        let en = to_i128(normal[j - 1].numer())?;
        let ed = to_i128(normal[j - 1].denom())?;
        let e_den = ck(ed.checked_mul(d1))?;
        let l = ck((dj / dj.gcd(&e_den)).checked_mul(e_den))?;
        coords.push((xn, l / dj, ck(en.checked_mul(l / e_den))?, l));
    }
    let total: usize = factors.iter().map(|f| f.len()).product();
    if total as u64 > 50_000_000 {
        return Err(too_large("projections", format!("{total} product points")));
    }
    let mut cells: HashSet<Vec<i128>> = HashSet::new();
    let mut idx = vec![0usize; d - 1];
    for &m1 in &x1 {
        idx.iter_mut().for_each(|k| *k = 0);
        'tuples: loop {
            let mut cell = Vec::with_capacity(d - 1);
            for (j, (xn, fx, fe, l)) in coords.iter().enumerate() {
                let num = ck(ck(xn[idx[j]].checked_mul(*fx))?.checked_sub(ck(fe.checked_mul(m1))?))?;
                cell.push(ck(num.checked_mul(q))?.div_euclid(*l));
            }
            cells.insert(cell);
            for j in 0..d - 1 {
                idx[j] += 1;
                if idx[j] < coords[j].0.len() {
                    continue 'tuples;
                }
                idx[j] = 0;
            }
            break;
        }
    }
    Ok(cells.len() as u64)
}

#[derive(Clone, Debug, Serialize)]
pub struct Codim1Row {
    pub s: String,
    pub t: String,
    pub stage: usize,
    pub normal: String,
    pub h: u64,
    pub count: u64,
    /// 3^{d−1}·H·q^{s_2+⋯+s_d}
    pub bound: f64,
    /// q^{cover exponent}, the regime formula without constants.
    pub formula: f64,
    pub pass: bool,
}

pub fn codim1_projection_cover(inst: &ProjectionInstance, normal: &Normal, qs: &StageSequence, i: usize) -> Result<Codim1Row> {
    let factors = inst.s.iter().map(|s| factor_centers(s, qs, i)).collect::<Result<Vec<_>>>()?;
    let count = codim1_cells(&factors, &normal.e, &qs.q(i))?;
    let tail: Rational = inst.s[1..].iter().sum();
    let coef = int(3i64.pow(inst.d as u32 - 1) * normal.h as i64);
    let p = qs.pow(i, &tail);
    let bound = RealPower::new(coef, p.base, p.exp);
    let names: Vec<String> = inst.s.iter().map(|x| x.to_string()).collect();
    let mut normal_str = vec!["1".to_string()];
    normal_str.extend(normal.e.iter().map(|x| x.to_string()));
    Ok(Codim1Row {
        s: names.join(" "),
        t: inst.t.to_string(),
        stage: i,
        normal: normal_str.join(" "),
        h: normal.h,
        count,
        bound: bound.to_f64(),
        formula: qs.pow(i, &inst.cover_exponent()).to_f64(),
        pass: bound.ge(&int(count as i64)),
    })
}

// ---------------------------------------------------------------- closed forms

/// f(s₁,s₂,s₃,t) for s₁ ≥ s₂ ≥ s₃: s₁+s₃ up to t = 1+s₁−s₂, then (s₁+s₂+t−1)/2 + s₃.
pub fn piecewise_f(s1: &Rational, s2: &Rational, s3: &Rational, t: &Rational) -> Rational {
    if t <= &(int(1) + s1 - s2) {
        s1 + s3
    } else {
        (s1 + s2 + t - int(1)) / int(2) + s3
    }
}

/// min{ s₁ + Σ_j min{max{(t_j + s_{j+1} − s₁)/2, 0}, s_{j+1}}, 1 } for s₁ ≥ s₂ ≥ s₃.
///
/// The inner cap is the dimension s_{j+1} of the factor that b_j multiplies.
pub fn product_direction_bound(s1: &Rational, s2: &Rational, s3: &Rational, t1: &Rational, t2: &Rational) -> Rational {
    let term = |t: &Rational, s: &Rational| ((t + s - s1) / int(2)).max(int(0)).min(s.clone());
    (s1 + term(t1, s2) + term(t2, s3)).min(int(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FigureCase {
    /// s₁ + 2s₃ > 1
    Above,
    /// s₁ + 2s₃ < 1
    Below,
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparatorRow {
    pub t: String,
    pub avg: f64,
    pub f: f64,
    pub sum: f64,
    pub min: f64,
    /// Names of the bounds attaining the minimum.
    pub active: Vec<&'static str>,
    #[serde(skip)]
    pub exact_min: Rational,
}

/// min{(Σs+t)/3, f, Σs, 1} at one t.
pub fn regime_comparator(s: &[Rational; 3], t: &Rational) -> ComparatorRow {
    let [s1, s2, s3] = s;
    let total = s1 + s2 + s3;
    let avg = (&total + t) / int(3);
    let f = piecewise_f(s1, s2, s3, t);
    let cands = [("avg", avg.clone()), ("f", f.clone()), ("sum", total.clone()), ("one", int(1))];
    let min = cands.iter().map(|c| c.1.clone()).min().unwrap();
    ComparatorRow {
        t: t.to_string(),
        avg: crate::exact::to_f64(&avg),
        f: crate::exact::to_f64(&f),
        sum: crate::exact::to_f64(&total),
        min: crate::exact::to_f64(&min),
        active: cands.iter().filter(|c| c.1 == min).map(|c| c.0).collect(),
        exact_min: min,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Crossing {
    pub t: String,
    pub between: (&'static str, &'static str),
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparatorReport {
    pub case: FigureCase,
    pub rows: Vec<ComparatorRow>,
    /// Points t ∈ (0, 2) where (Σs+t)/3 meets f, Σs or 1, or f meets 1.
    pub crossings: Vec<Crossing>,
}

// a + b t on [lo, hi]
struct Piece {
    name: &'static str,
    a: Rational,
    b: Rational,
    lo: Rational,
    hi: Rational,
}

/// Tabulates the comparator over `ts` and locates the crossings in (0, 2).
pub fn regime_table(s: &[Rational; 3], ts: &[Rational]) -> ComparatorReport {
    let [s1, s2, s3] = s;
    let total = s1 + s2 + s3;
    let edge = s1 + int(2) * s3;
    let case = match edge.cmp(&int(1)) {
        std::cmp::Ordering::Greater => FigureCase::Above,
        std::cmp::Ordering::Less => FigureCase::Below,
        std::cmp::Ordering::Equal => FigureCase::Boundary,
    };
    let (zero, two) = (int(0), int(2));
    let bp = int(1) + s1 - s2;
    let pieces = [
        Piece { name: "avg", a: &total / int(3), b: rat(1, 3), lo: zero.clone(), hi: two.clone() },
        Piece { name: "f", a: s1 + s3, b: int(0), lo: zero.clone(), hi: bp.clone() },
        Piece { name: "f", a: (s1 + s2 - int(1)) / int(2) + s3, b: rat(1, 2), lo: bp, hi: two.clone() },
        Piece { name: "sum", a: total.clone(), b: int(0), lo: zero.clone(), hi: two.clone() },
        Piece { name: "one", a: int(1), b: int(0), lo: zero.clone(), hi: two.clone() },
    ];
    let mut crossings: Vec<(Rational, Crossing)> = Vec::new();
    for (x, p) in pieces.iter().enumerate() {
        for q in &pieces[x + 1..] {
            if p.name == q.name || p.b == q.b {
                continue;
            }
            let t = (&q.a - &p.a) / (&p.b - &q.b);
            let inside = |r: &Piece| t >= r.lo && t <= r.hi;
            if t > zero && t < two && inside(p) && inside(q) && !crossings.iter().any(|c| c.0 == t && c.1.between == (p.name, q.name)) {
                crossings.push((t.clone(), Crossing { t: t.to_string(), between: (p.name, q.name) }));
            }
        }
    }
    crossings.sort_by(|a, b| a.0.cmp(&b.0));
    ComparatorReport {
        case,
        rows: ts.iter().map(|t| regime_comparator(s, t)).collect(),
        crossings: crossings.into_iter().map(|c| c.1).collect(),
    }
}

/// Evenly spaced t grid on (0, 2): k·2/(n+1) for k = 1..=n.
pub fn t_grid(n: usize) -> Vec<Rational> {
    (1..=n).map(|k| rat(2 * k as i64, n as i64 + 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_examples() {
        let (a, b, c) = (rat(4, 5), rat(3, 5), rat(2, 5));
        assert_eq!(piecewise_f(&a, &b, &c, &rat(11, 10)), rat(6, 5));
        assert_eq!(piecewise_f(&a, &b, &c, &rat(3, 2)), rat(27, 20));
    }

    #[test]
    fn h_one_sums_on_coarse_lattice() {
        let a: Vec<Rational> = (0..8).map(|m| rat(m, 8)).collect();
        let b: Vec<Rational> = (0..4).map(|m| rat(m, 4)).collect();
        assert!(sums_on_lattice(&a, &b, &rat(1, 2), 1, &BigInt::from(8)));
        assert!(!sums_on_lattice(&a, &b, &rat(1, 3), 1, &BigInt::from(8)));
    }
}
