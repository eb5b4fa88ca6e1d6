//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, x);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * x * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let d = n as f64 * (x * q1 - q0) / (x * x - 1.0);
                ws[i] = 2.0 / ((1.0 - x * x) * d * d);
                break;
            }
        }
        xs[i] = x;
    }
    (xs, ws)
}

/// ∫ f over [a, b] split at the given interior breakpoints.
pub fn integrate_pieces<F: Fn(f64) -> (f64, f64)>(f: F, knots: &[f64], order: usize) -> (f64, f64) {
    let (xs, ws) = gauss_legendre(order);
    let mut re = 0.0;
    let mut im = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let h = (b - a) / 2.0;
        let m = (a + b) / 2.0;
        for (x, wt) in xs.iter().zip(&ws) {
            let v = f(m + h * x);
            re += wt * h * v.0;
            im += wt * h * v.1;
        }
    }
    (re, im)
}

/// Cardinal B-spline of order n on [0, n] by the Cox-de Boor recursion.
pub fn bspline(n: u32, t: f64) -> f64 {
    if n == 1 {
        return if (0.0..1.0).contains(&t) { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    (t * bspline(n - 1, t) + (nf - t) * bspline(n - 1, t - 1.0)) / (nf - 1.0)
}

/// φ(x) of order n from the recursion, independent of the library formula.
pub fn bump(n: u32, x: f64) -> f64 {
    (n as f64 / 2.0) * bspline(n, (x + 1.0) * n as f64 / 2.0)
}

pub fn is_prime(n: u64) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

pub fn primes_between(lo_excl: u64, hi: u64) -> Vec<u64> {
    (lo_excl + 1..=hi).filter(|&n| is_prime(n)).collect()
}

/// ∫ φ(u) e^{-2πi u s} du by quadrature over the knot intervals of φ.
pub fn bump_transform(n: u32, s: f64) -> (f64, f64) {
    let knots: Vec<f64> = (0..=n).map(|k| -1.0 + 2.0 * k as f64 / n as f64).collect();
    integrate_pieces(|u| {
        let v = bump(n, u);
        let a = -2.0 * PI * u * s;
        (v * a.cos(), v * a.sin())
    }, &knots, 40)
}

/// Φ̂_{p}(k) for q, Q = q^β: bump sum over v ∉ pℤ in one period, each bump integrated numerically.
pub fn phi_coeff_oracle(n: u32, p: u64, k: i64, q: u64, qb: u64) -> (f64, f64) {
    let den = p * qb;
    let (tr, ti) = bump_transform(n, k as f64 / q as f64);
    let mut sr = 0.0;
    let mut si = 0.0;
    for v in 0..den {
        if v % p == 0 {
            continue;
        }
        let a = -2.0 * PI * ((k as i128 * v as i128).rem_euclid(den as i128)) as f64 / den as f64;
        sr += a.cos();
        si += a.sin();
    }
    // amplitude p^-1 q^(1-β) times the 1/q from the change of variables
    let amp = 1.0 / (p as f64 * qb as f64);
    (amp * (sr * tr - si * ti), amp * (sr * ti + si * tr))
}

/// Spatial stage density: (1/#P) Σ_p (p/(p-1)) Σ_{v∉pℤ} p^-1 q^(1-β) φ(q(x - v/(pQ))).
/// An empty prime list means the γ = 0 lattice Σ_v q^(1-β) φ(q(x - v/Q)).
pub struct SpatialStage {
    pub n: u32,
    pub q: f64,
    pub qb: u64,
    pub primes: Vec<u64>,
}

impl SpatialStage {
    fn lattices(&self) -> Vec<(u64, Option<u64>, f64)> {
        if self.primes.is_empty() {
            return vec![(self.qb, None, 1.0)];
        }
        let np = self.primes.len() as f64;
        self.primes.iter().map(|&p| (p * self.qb, Some(p), (p as f64 / (p - 1) as f64) / np)).collect()
    }

    pub fn value(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for (den, excl, w) in self.lattices() {
            let c = x * den as f64;
            let reach = den as f64 / self.q;
            for v in (c - reach).floor() as i64 - 1..=(c + reach).floor() as i64 + 1 {
                if excl.is_some_and(|p| v.rem_euclid(p as i64) == 0) {
                    continue;
                }
                s += w * (self.q / den as f64) * bump(self.n, self.q * (x - v as f64 / den as f64));
            }
        }
        s
    }

    /// Breakpoints of the density inside [0, 1].
    pub fn knots(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (den, excl, _) in self.lattices() {
            for v in -1..=den as i64 + 1 {
                if excl.is_some_and(|p| v.rem_euclid(p as i64) == 0) {
                    continue;
                }
                for j in 0..=self.n {
                    let t = v as f64 / den as f64 + (-1.0 + 2.0 * j as f64 / self.n as f64) / self.q;
                    if (0.0..=1.0).contains(&t) {
                        out.push(t);
                    }
                }
            }
        }
        out
    }
}

/// Breakpoints of a product of stages, with 0 and 1.
pub fn product_knots(stages: &[SpatialStage]) -> Vec<f64> {
    let mut k: Vec<f64> = stages.iter().flat_map(|s| s.knots()).collect();
    k.push(0.0);
    k.push(1.0);
    k.sort_by(f64::total_cmp);
    k.dedup();
    k
}

/// Fourier coefficients of Π stages at the given frequencies by piecewise quadrature.
pub fn product_coeffs(stages: &[SpatialStage], ks: &[i64]) -> Vec<(f64, f64)> {
    let knots = product_knots(stages);
    let (xs, ws) = gauss_legendre(10);
    let kabs = ks.iter().map(|k| k.unsigned_abs()).max().unwrap_or(0) as f64;
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    for w in knots.windows(2) {
        let (a0, b0) = (w[0], w[1]);
        // each stage is a nonnegative spline, positive inside any piece it covers
        if stages.iter().any(|s| s.value((a0 + b0) / 2.0) == 0.0) {
            continue;
        }
        // at most half an oscillation per sub-piece
        let sub = ((b0 - a0) * kabs * 2.0).ceil().max(1.0) as usize;
        let step = (b0 - a0) / sub as f64;
        for j in 0..sub {
            let a = a0 + j as f64 * step;
            let h = step / 2.0;
            let m = a + h;
            for (x, wt) in xs.iter().zip(&ws) {
                let t = m + h * x;
                let v: f64 = stages.iter().map(|s| s.value(t)).product();
                nodes.push((t, wt * h * v));
            }
        }
    }
    ks.iter()
        .map(|&k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for &(t, w) in &nodes {
                let a = -2.0 * PI * (k as f64 * t).rem_euclid(1.0);
                re += w * a.cos();
                im += w * a.sin();
            }
            (re, im)
        })
        .collect()
}
