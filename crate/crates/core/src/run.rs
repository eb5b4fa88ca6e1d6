//! Pipelines behind each CLI command. Every run writes its data files, a
//! `summary.json` with one row per assertion and a `manifest.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use num::{BigInt, One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::error::{LabError, Result};
use crate::exact::{int, log2_int, log2_rat, parse_rational, to_f64, Rational, RealPower};
use crate::io::{cache_lookup, cache_store, sha256_hex, write_csv, write_json, write_manifest, Command, Lookup, RunConfig};
use crate::lattice::{build_stage, cover_count, intersect_stages, min_gap, ImplicitStage, IntervalSet, StageMode};
use crate::measure::{build_implicit_tree, build_measure_tree, frostman_fit, frostman_lower_check, frostman_lower_check_implicit, FrostmanStats, LowerReport, MassOracle, Weighting};
use crate::params::{generate_sequence, standard_window, validate_params, Hypothesis, ParamSet, SequenceOptions, StageSequence};
use crate::projections::{regime_table, sumset_sweep, t_grid, AbcParams};
use crate::restriction::{implicit_dims_report, knapp_indicator, nongeometric_window, restriction_ratio, RatioReport, RestrictionParams};
use crate::spectrum::{build_spectrum, fit_fourier_dimension, mass_window_check, shell_maxima, stage_factors, BumpProfile, EngineConfig, FitOptions, LastStage, Shell, SparseSpectrum};

/// Stage sizes above this are listed in stages.csv but their boxes are not written.
pub const MAX_ROWS_PER_STAGE: usize = 200_000;

/// Default spectrum radius when 8·q_m is out of reach.
pub const DEFAULT_KMAX_CAP: i128 = 1 << 16;

#[derive(Clone, Debug, Serialize)]
pub struct Assertion {
    pub name: String,
    /// Short label of the claim being checked.
    pub anchor: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub config_hash: String,
    pub assertions: Vec<Assertion>,
    pub values: BTreeMap<String, Value>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub out: PathBuf,
    /// Data files relative to `out`, in write order.
    pub files: Vec<String>,
    /// Non-fatal problems, e.g. a corrupt cache entry that was recomputed.
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.summary.assertions.iter().all(|a| a.pass)
    }
}

struct Ctx {
    out: PathBuf,
    files: Vec<String>,
    assertions: Vec<Assertion>,
    values: BTreeMap<String, Value>,
    warnings: Vec<String>,
}

impl Ctx {
    fn check(&mut self, name: impl Into<String>, anchor: &'static str, pass: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion { name: name.into(), anchor, pass, detail: detail.into() });
    }

    fn value(&mut self, key: &str, v: impl Serialize) {
        self.values.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        write_csv(&self.out.join(name), rows)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Executes `cfg.command` and writes all artifacts under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let command = cfg.command.ok_or_else(|| LabError::Config("no command given".into()))?;
    let out = PathBuf::from(&cfg.out);
    fs::create_dir_all(&out)?;
    let mut ctx = Ctx { out: out.clone(), files: vec![], assertions: vec![], values: BTreeMap::new(), warnings: vec![] };
    match command {
        Command::Construct => construct(cfg, &mut ctx)?,
        Command::Measure => measure(cfg, &mut ctx)?,
        Command::Spectrum => spectrum(cfg, &mut ctx)?,
        Command::Dims => dims(cfg, &mut ctx)?,
        Command::Project => project(cfg, &mut ctx)?,
        Command::Restrict => restrict(cfg, &mut ctx)?,
        Command::Report => report(cfg, &mut ctx)?,
    }
    let summary = Summary { command: command.name(), config_hash: cfg.hash(), assertions: ctx.assertions, values: ctx.values };
    write_json(&out.join("summary.json"), &summary)?;
    ctx.files.push("summary.json".into());
    write_manifest(&out, cfg, &ctx.files)?;
    Ok(RunOutcome { summary, out, files: ctx.files, warnings: ctx.warnings })
}

// ---------------------------------------------------------------- shared setup

struct Setup {
    ps: ParamSet,
    qs: StageSequence,
    mode: StageMode,
}

pub fn stage_mode(cfg: &RunConfig, ps: &ParamSet) -> Result<StageMode> {
    let ab = || -> Result<StageMode> {
        match (&cfg.a, &cfg.b) {
            (Some(a), Some(b)) => Ok(StageMode::Nongeometric { a: parse_rational(a)?, b: parse_rational(b)? }),
            _ => Err(LabError::Config("nongeometric mode needs a and b".into())),
        }
    };
    match cfg.stage_mode.as_str() {
        "auto" if cfg.a.is_some() || cfg.b.is_some() => ab(),
        "auto" if ps.gamma.is_zero() => Ok(StageMode::AllH),
        "auto" | "primes_excluding" => Ok(StageMode::PrimesExcluding),
        "all_h" => Ok(StageMode::AllH),
        "primes" => Ok(StageMode::Primes),
        "nongeometric" => ab(),
        other => Err(LabError::Config(format!("unknown stage_mode {other:?}"))),
    }
}

fn setup(cfg: &RunConfig, hyp: Hypothesis) -> Result<Setup> {
    let ps = cfg.param_set()?;
    let mode = stage_mode(cfg, &ps)?;
    // the nongeometric window carries its own constraints on (a, b, β)
    if !matches!(mode, StageMode::Nongeometric { .. }) {
        validate_params(&ps, hyp)?;
    }
    let opts = SequenceOptions { base: cfg.base, first_exp: cfg.first_exp, explicit: cfg.exps.clone(), ..Default::default() };
    let qs = generate_sequence(&ps, &opts)?;
    Ok(Setup { ps, qs, mode })
}

fn need_d1(ps: &ParamSet, what: &str) -> Result<()> {
    if ps.d != 1 {
        return Err(LabError::ConstraintViolation(format!("{what} needs d=1")));
    }
    Ok(())
}

fn sequence_values(ctx: &mut Ctx, s: &Setup) {
    ctx.value("exps", &s.qs.exps);
    ctx.value("base", s.qs.base);
    ctx.value("growth", s.qs.mode.name());
    ctx.value("compliant", &s.qs.compliant);
    ctx.value("stage_mode", s.mode.name());
    ctx.value("s", s.ps.s().to_string());
    ctx.value("target_dim", s.ps.target_dim().to_string());
}

fn inv_pow2(j: u64) -> Rational {
    Rational::new(BigInt::one(), BigInt::one() << j as usize)
}

/// gap ≥ q^(-2γ-β), decided exactly.
fn gap_ok(gap: &Rational, qs: &StageSequence, i: usize, ps: &ParamSet) -> bool {
    let e = (int(2) * &ps.gamma + ps.beta()) * int(qs.exps[i - 1] as i64);
    RealPower::new(gap.clone(), BigInt::from(qs.base), e).ge(&int(1))
}

// ---------------------------------------------------------------- construct

#[derive(Serialize)]
struct BoxRow {
    stage: usize,
    tag: u64,
    center: String,
    center_f64: f64,
    radius: String,
}

#[derive(Serialize)]
struct StageRow {
    stage: usize,
    log2_q: f64,
    compliant: bool,
    materialized: bool,
    boxes: String,
    rows_written: usize,
    min_gap_log2: f64,
    gap_bound_log2: f64,
    gap_ok: Option<bool>,
    box_estimate: f64,
}

fn construct(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let s = setup(cfg, Hypothesis::Lattice)?;
    sequence_values(ctx, &s);
    let (ps, qs) = (&s.ps, &s.qs);
    let excludes = ps.d == 1 && matches!(s.mode, StageMode::PrimesExcluding | StageMode::Nongeometric { .. });
    let mut prev: Option<IntervalSet> = None;
    let mut implicit_from = None;
    let mut boxes = Vec::new();
    let mut stages = Vec::new();
    for i in 1..=ps.stages {
        let bound_log2 = -to_f64(&(int(2) * &ps.gamma + ps.beta())) * qs.log2_q(i);
        let built = if implicit_from.is_none() { Some(build_stage(i, ps, qs, &s.mode)) } else { None };
        match built {
            Some(Ok(set)) => {
                let set = match &prev {
                    Some(p) => intersect_stages(p, &set, i)?,
                    None => set,
                };
                let gap = if set.dim == 1 && set.len() >= 2 { Some(min_gap(&set)?) } else { None };
                let ok = gap.as_ref().filter(|_| excludes).map(|g| gap_ok(g, qs, i, ps));
                if let Some(ok) = ok {
                    ctx.check(format!("stage {i} separation"), "separation-gap", ok, format!("min gap ≥ q_{i}^(-2γ-β) at q = {}^{}", qs.base, qs.exps[i - 1]));
                }
                let count = cover_count(&set, &Rational::new(BigInt::one(), qs.q(i)))?;
                let written = set.len().min(MAX_ROWS_PER_STAGE);
                for (c, &tag) in set.centers.iter().zip(&set.tags).take(written) {
                    boxes.push(BoxRow {
                        stage: i,
                        tag,
                        center: c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
                        center_f64: to_f64(&c[0]),
                        radius: set.radius.to_string(),
                    });
                }
                stages.push(StageRow {
                    stage: i,
                    log2_q: qs.log2_q(i),
                    compliant: qs.compliant[i - 1],
                    materialized: true,
                    boxes: set.len().to_string(),
                    rows_written: written,
                    min_gap_log2: gap.as_ref().map_or(f64::NAN, log2_rat),
                    gap_bound_log2: bound_log2,
                    gap_ok: ok,
                    box_estimate: log2_int(&count) / qs.log2_q(i),
                });
                prev = Some(set);
            }
            Some(Err(LabError::TooLarge { .. })) | None => {
                if ps.d != 1 {
                    return Err(LabError::TooLarge { module: "lattice", what: format!("stage {i} in d={}", ps.d) });
                }
                let st = ImplicitStage::new(i, ps, qs, &s.mode)?;
                // only the first implicit stage can be filtered by a materialized parent
                let parent = if implicit_from.is_none() { prev.as_ref() } else { None };
                implicit_from.get_or_insert(i);
                let n = match parent {
                    Some(p) => st.count_in_union(p),
                    None => st.total(),
                };
                if n.is_zero() {
                    return Err(LabError::EmptyIntersection(i));
                }
                let gap = st.gap_lower_bound();
                let ok = excludes.then(|| gap_ok(&gap, qs, i, ps));
                if let Some(ok) = ok {
                    ctx.check(format!("stage {i} separation"), "separation-gap", ok, format!("gap lower bound ≥ q_{i}^(-2γ-β) at q = {}^{}", qs.base, qs.exps[i - 1]));
                }
                let est = st.cover_count_at_radius(parent).map(|c| log2_int(&c) / qs.log2_q(i)).unwrap_or(f64::NAN);
                stages.push(StageRow {
                    stage: i,
                    log2_q: qs.log2_q(i),
                    compliant: qs.compliant[i - 1],
                    materialized: false,
                    boxes: n.to_string(),
                    rows_written: 0,
                    min_gap_log2: log2_rat(&gap),
                    gap_bound_log2: bound_log2,
                    gap_ok: ok,
                    box_estimate: est,
                });
            }
            Some(Err(e)) => return Err(e),
        }
    }
    ctx.check("stages nonempty", "stage-intersection", true, format!("{} stages built", stages.len()));
    ctx.csv("stages.csv", &stages)?;
    ctx.csv("intervals.csv", &boxes)?;
    Ok(())
}

// ---------------------------------------------------------------- measure

#[derive(Serialize)]
struct MassRow {
    x: f64,
    log2_r: f64,
    log_r: f64,
    log_mass: f64,
    slope: f64,
}

#[derive(Serialize)]
struct LowerRow {
    stage: usize,
    log2_q: f64,
    intervals: usize,
    log2_min_mass: f64,
    constant: f64,
}

/// log2 radii spread evenly between the first and last stage scales.
fn radii_log2(qs: &StageSequence, m: usize, n: usize) -> Vec<u64> {
    let (lo, hi) = (qs.log2_q(1), qs.log2_q(m));
    let mut js: Vec<u64> = (0..n).map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).round() as u64).collect();
    js.dedup();
    js
}

fn frostman_rows(ctx: &mut Ctx, fit: &FrostmanStats, low: &LowerReport, cfg: &RunConfig) -> Result<()> {
    let rows: Vec<MassRow> = fit
        .samples
        .iter()
        .map(|s| {
            let lr = log2_rat(&s.r);
            MassRow { x: to_f64(&s.x[0]), log2_r: lr, log_r: lr * std::f64::consts::LN_2, log_mass: if s.mass.is_positive() { crate::measure::ln_rat(&s.mass) } else { f64::NEG_INFINITY }, slope: s.slope }
        })
        .collect();
    ctx.csv("mass.csv", &rows)?;
    let lower: Vec<LowerRow> = low
        .stages
        .iter()
        .map(|s| LowerRow { stage: s.stage, log2_q: s.log2_q, intervals: s.intervals, log2_min_mass: if s.min_mass.is_positive() { log2_rat(&s.min_mass) } else { f64::NEG_INFINITY }, constant: s.constant })
        .collect();
    ctx.csv("lower.csv", &lower)?;
    ctx.check(
        "Frostman upper slope",
        "frostman-upper",
        fit.pass,
        format!("min slope {:.4} over {} samples, need ≥ {:.4} - {}", fit.min_slope, fit.samples.len(), fit.target, cfg.fit_tolerance),
    );
    ctx.check("Frostman lower mass", "frostman-lower", low.pass, format!("fitted exponent {:.4} ≤ {:.4}", low.fitted, low.exponent));
    ctx.value("min_slope", fit.min_slope);
    ctx.value("max_slope", fit.max_slope);
    ctx.value("lower_fitted", low.fitted);
    Ok(())
}

fn measure(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let s = setup(cfg, Hypothesis::Lattice)?;
    need_d1(&s.ps, "measure")?;
    sequence_values(ctx, &s);
    let (ps, qs) = (&s.ps, &s.qs);
    let m = ps.stages;
    let target = to_f64(&ps.target_dim());
    let weighting = if matches!(s.mode, StageMode::AllH) { Weighting::Uniform } else { Weighting::PrimeWeighted };
    let mut sets = Vec::new();
    let mut too_large = false;
    for i in 1..=m {
        match build_stage(i, ps, qs, &s.mode) {
            Ok(set) => sets.push(set),
            Err(LabError::TooLarge { .. }) if i == m && m == 2 => too_large = true,
            Err(e) => return Err(e),
        }
    }
    let js = radii_log2(qs, m, 16);
    if too_large {
        let s1 = sets.pop().unwrap();
        let tree = build_implicit_tree(&s1, ImplicitStage::new(2, ps, qs, &s.mode)?)?;
        let xs: Vec<Rational> = s1
            .centers
            .iter()
            .step_by((s1.len() / 32).max(1))
            .map(|c| c[0].clone())
            .chain(tree.ranges.iter().step_by((tree.ranges.len() / 32).max(1)).map(|r| r.threshold.clone()))
            .collect();
        let samples = sample_grid(&xs, &js);
        let fit = frostman_fit(&tree, &samples, target, cfg.fit_tolerance);
        let low = frostman_lower_check_implicit(&tree, qs, target, 0.1);
        ctx.value("tree", "implicit");
        ctx.value("total_mass", to_f64(&tree.ball_mass(&[int(0)], &int(2))));
        frostman_rows(ctx, &fit, &low, cfg)
    } else {
        let tree = build_measure_tree(&sets, weighting)?;
        let deep = &tree.deepest().set;
        let xs: Vec<Rational> = sets[0]
            .centers
            .iter()
            .step_by((sets[0].len() / 32).max(1))
            .chain(deep.centers.iter().step_by((deep.len() / 32).max(1)))
            .map(|c| c[0].clone())
            .collect();
        let samples = sample_grid(&xs, &js);
        let fit = frostman_fit(&tree, &samples, target, cfg.fit_tolerance);
        let low = frostman_lower_check(&tree, qs, target, 0.1);
        ctx.value("tree", "explicit");
        ctx.value("total_mass", (1..=tree.depth()).map(|i| tree.stage_total(i).to_string()).collect::<Vec<_>>());
        frostman_rows(ctx, &fit, &low, cfg)
    }
}

fn sample_grid(xs: &[Rational], js: &[u64]) -> Vec<(Vec<Rational>, Rational)> {
    xs.iter().flat_map(|x| js.iter().map(move |&j| (vec![x.clone()], inv_pow2(j)))).collect()
}

// ---------------------------------------------------------------- spectrum

#[derive(Serialize)]
struct CoeffRow {
    k: String,
    re: f64,
    im: f64,
    abs: f64,
}

#[derive(Serialize)]
struct ShellRow {
    j: u32,
    log_k: f64,
    max: f64,
    log_max: f64,
    upper: f64,
    argmax: String,
    exact: bool,
}

fn shell_rows(shells: &[Shell]) -> Vec<ShellRow> {
    shells
        .iter()
        .map(|s| ShellRow {
            j: s.j,
            log_k: s.j as f64 * std::f64::consts::LN_2,
            max: s.max,
            log_max: s.max.ln(),
            upper: s.upper,
            argmax: s.argmax.to_string(),
            exact: s.exact,
        })
        .collect()
}

/// Key over exactly the inputs the stored spectrum depends on.
pub fn spectrum_key(cfg: &RunConfig, qs: &StageSequence, mode: &StageMode, kmax: i128) -> String {
    let text = format!(
        "spectrum|gamma={}|betas={}|base={}|exps={:?}|mode={}|a={:?}|b={:?}|kmax={kmax}|tol={:?}|order={}",
        cfg.gamma,
        cfg.betas.join(","),
        qs.base,
        qs.exps,
        mode.name(),
        cfg.a,
        cfg.b,
        cfg.tolerance,
        cfg.bump_order
    );
    sha256_hex(text.as_bytes())
}

fn default_kmax(cfg: &RunConfig, qs: &StageSequence) -> i128 {
    if let Some(k) = cfg.kmax {
        return k as i128;
    }
    let q8 = qs.q(qs.len()) * 8u32;
    q8.to_i128().map_or(DEFAULT_KMAX_CAP, |k| k.min(DEFAULT_KMAX_CAP))
}

fn spectrum(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let s = setup(cfg, Hypothesis::Spectrum)?;
    need_d1(&s.ps, "spectrum")?;
    sequence_values(ctx, &s);
    let kmax = default_kmax(cfg, &s.qs);
    if kmax < 1 {
        return Err(LabError::Config("kmax must be positive".into()));
    }
    let factors = stage_factors(&s.ps, &s.qs, &s.mode, BumpProfile::new(cfg.bump_order))?;
    let key = spectrum_key(cfg, &s.qs, &s.mode, kmax);
    let compute = || build_spectrum(&factors, &EngineConfig::new(kmax, cfg.tolerance));
    let g: SparseSpectrum = match cfg.cache_dir() {
        None => compute()?,
        Some(dir) => match cache_lookup(&dir, &key) {
            Lookup::Hit(g) => g,
            other => {
                if let Lookup::Corrupt(e) = other {
                    ctx.warnings.push(format!("{e}; recomputing"));
                }
                let g = compute()?;
                cache_store(&dir, &key, &g)?;
                g
            }
        },
    };
    let rows: Vec<CoeffRow> = g.entries.iter().map(|(k, v)| CoeffRow { k: k.to_string(), re: v.re, im: v.im, abs: v.norm() }).collect();
    ctx.csv("spectrum.csv", &rows)?;
    let shells = shell_maxima(&g);
    ctx.csv("shells.csv", &shell_rows(&shells))?;
    let mass = mass_window_check(&g);
    ctx.check("mass window", "mass-window", mass.is_ok(), format!("Ĝ_m(0) = {:.9} in [1/2, 3/2]", g.get(0).re));
    ctx.check("error budget", "truncation-budget", g.err <= cfg.tolerance, format!("err {:e} ≤ {:e}", g.err, cfg.tolerance));
    let herm = g.hermitian_defect();
    ctx.check("Hermitian symmetry", "hermitian", herm <= g.err + 1e-12, format!("defect {herm:e}"));
    ctx.value("spectrum_key", &key);
    ctx.value("kmax", kmax.to_string());
    ctx.value("entries", g.len());
    ctx.value("g0", g.get(0).re);
    ctx.value("err", g.err);
    ctx.value("tail_l1", g.tail_l1);
    ctx.value("stages", &g.stages);
    Ok(())
}

// ---------------------------------------------------------------- dims

fn dims(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let s = setup(cfg, Hypothesis::Spectrum)?;
    need_d1(&s.ps, "dims")?;
    sequence_values(ctx, &s);
    let (ps, qs) = (&s.ps, &s.qs);
    let m = ps.stages;
    let nongeo = matches!(s.mode, StageMode::Nongeometric { .. });

    // Hausdorff side: 3N cells at the last stage's radius, under materialized parents
    let mut parent: Option<IntervalSet> = None;
    for i in 1..m {
        let set = build_stage(i, ps, qs, &s.mode)?;
        parent = Some(match &parent {
            Some(p) => intersect_stages(p, &set, i)?,
            None => set,
        });
    }
    let last = ImplicitStage::new(m, ps, qs, &s.mode)?;
    let cells = last.cover_count_at_radius(parent.as_ref())?;
    let box_est = log2_int(&cells) / qs.log2_q(m);
    let target = to_f64(&ps.target_dim());
    ctx.value("box_estimate", box_est);
    ctx.value("box_cells", cells.to_string());
    if !nongeo {
        ctx.check("box dimension", "hausdorff-dimension", (box_est - target).abs() <= cfg.box_tolerance, format!("estimate {box_est:.4}, target {target}, tolerance {}", cfg.box_tolerance));
    }

    // Fourier side
    let factors = stage_factors(ps, qs, &s.mode, BumpProfile::new(cfg.bump_order))?;
    let lastf = factors[m - 1].clone();
    let (shells, g0, err) = if m >= 2 {
        let ls = LastStage::new(&factors[..m - 1], lastf.clone(), cfg.kmax.map(|k| k as i128), &EngineConfig::new(0, cfg.tolerance))?;
        (ls.shells()?, ls.coeff(0), ls.err())
    } else {
        let g = build_spectrum(&factors, &EngineConfig::new(default_kmax(cfg, qs), cfg.tolerance))?;
        (shell_maxima(&g), g.get(0).re, g.err)
    };
    ctx.csv("shells.csv", &shell_rows(&shells))?;
    let fit = fit_fourier_dimension(&shells, &FitOptions { band: Some(lastf.q), divisor_prime: lastf.smallest_prime() })?;
    ctx.value("fourier_slope", fit.slope);
    ctx.value("fourier_estimate", fit.estimate);
    ctx.value("shells_exact", shells.iter().filter(|s| s.exact).count());
    ctx.value("g0", g0);
    ctx.value("err", err);
    ctx.check("mass window", "mass-window", (0.5..=1.5).contains(&g0), format!("Ĝ_m(0) = {g0:.9}"));
    if !nongeo {
        let gamma = to_f64(&ps.gamma);
        ctx.check(
            "Fourier decay",
            "fourier-dimension",
            (fit.slope + gamma).abs() <= cfg.fit_tolerance,
            format!("shell slope {:.4} vs -γ = {:.4} (dimension {:.4}), tolerance {}", fit.slope, -gamma, fit.estimate, cfg.fit_tolerance),
        );
        return Ok(());
    }

    // nongeometric: local slopes of the measure against the Fourier fit
    let StageMode::Nongeometric { a, b } = &s.mode else { unreachable!() };
    if m != 2 {
        return Err(LabError::ConstraintViolation("nongeometric dims needs 2 stages".into()));
    }
    let s1 = build_stage(1, ps, qs, &s.mode)?;
    let t1 = build_measure_tree(&[s1], Weighting::PrimeWeighted)?;
    let w = nongeometric_window(a, b, ps.beta(), 2, qs)?;
    let qb = qs.int_pow(2, ps.beta()).and_then(|v| v.to_u64()).ok_or_else(|| LabError::ConstraintViolation("q^β∈ℤ".into()))?;
    let (af, bf, beta) = (to_f64(a), to_f64(b), to_f64(ps.beta()));
    let d = implicit_dims_report(&t1, qs, &w.primes, qb, af, bf, beta, 0.1)?;
    ctx.csv("interval_bounds.csv", &d.bounds)?;
    ctx.value("inf_slope", d.inf_slope);
    ctx.value("typical_slope", d.typical_slope);
    ctx.value("boxes", d.boxes);
    ctx.check(
        "dissociation",
        "nongeometric-dissociation",
        d.inf_slope < fit.estimate,
        format!("inf local slope {:.4} < Fourier estimate {:.4}", d.inf_slope, fit.estimate),
    );
    ctx.check(
        "typical slope",
        "typical-local-dimension",
        (d.typical_slope - (bf + beta)).abs() <= cfg.fit_tolerance,
        format!("typical slope {:.4} vs b+β = {:.4}", d.typical_slope, bf + beta),
    );
    Ok(())
}

// ---------------------------------------------------------------- project

#[derive(Serialize)]
struct RegimeRow {
    t: String,
    avg: f64,
    f: f64,
    sum: f64,
    min: f64,
    active: String,
}

fn project(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let (sa, sb, sc) = (parse_rational(&cfg.s_a)?, parse_rational(&cfg.s_b)?, parse_rational(&cfg.s_c)?);
    let abc = AbcParams::new(sa.clone(), sb.clone(), sc.clone())?;
    let exps = cfg.exps.clone().unwrap_or_else(|| vec![20]);
    let stage = exps.len();
    let qs = StageSequence { base: cfg.base, compliant: vec![true; exps.len()], exps, mode: crate::params::GrowthMode::Explicit };
    let rows = sumset_sweep(&abc, &qs, stage, 1)?;
    ctx.csv("sumset.csv", &rows)?;
    let worst = rows.iter().map(|r| r.slack).fold(0.0, f64::max);
    ctx.check(
        "sumset covers",
        "sumset-cover",
        !rows.is_empty() && rows.iter().all(|r| r.pass),
        format!("{} values of c, max count/q^((s_A+s_B+s_C)/2) = {worst:.4} ≤ 3", rows.len()),
    );
    let mut s = [sa, sb, sc];
    s.sort_by(|x, y| y.cmp(x));
    let table = regime_table(&s, &t_grid(39));
    let regime: Vec<RegimeRow> = table.rows.iter().map(|r| RegimeRow { t: r.t.clone(), avg: r.avg, f: r.f, sum: r.sum, min: r.min, active: r.active.join(" ") }).collect();
    ctx.csv("regime.csv", &regime)?;
    ctx.value("cover_exponent", abc.cover_exponent().to_string());
    ctx.value("figure_case", table.case);
    ctx.value("crossings", &table.crossings);
    ctx.value("exps", &qs.exps);
    Ok(())
}

// ---------------------------------------------------------------- restrict

fn restrict(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let s = setup(cfg, Hypothesis::Spectrum)?;
    need_d1(&s.ps, "restrict")?;
    if !matches!(s.mode, StageMode::PrimesExcluding | StageMode::Primes) {
        return Err(LabError::Config("restrict needs a prime stage mode".into()));
    }
    sequence_values(ctx, &s);
    let (ps, qs) = (&s.ps, &s.qs);
    let params = RestrictionParams::from_gamma_beta(to_f64(&ps.gamma), to_f64(ps.beta()), cfg.p_tilde, cfg.q_exp)?;
    let sets = (1..=ps.stages).map(|i| build_stage(i, ps, qs, &s.mode)).collect::<Result<Vec<_>>>()?;
    let tree = build_measure_tree(&sets, Weighting::PrimeWeighted)?;
    let mut rows: Vec<RatioReport> = Vec::new();
    for i in 1..=ps.stages {
        let w = standard_window(qs, i, &ps.gamma)?;
        let n = w.primes.len();
        // every prime gets a certificate; extensions are evaluated at the first stage
        // and at the smallest, middle and largest prime of later stages
        let stage_rows = w
            .primes
            .par_iter()
            .enumerate()
            .map(|(k, &p)| {
                let ind = knapp_indicator(&tree, qs, ps.beta(), &w, i, p)?;
                restriction_ratio(&ind, &params, i == 1 || k == 0 || k + 1 == n || k == n / 2)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(stage_rows);
    }
    ctx.csv("ratio.csv", &rows)?;
    let evaluated: Vec<&RatioReport> = rows.iter().filter(|r| r.min_ext_ratio.is_finite()).collect();
    let min_ratio = evaluated.iter().map(|r| r.min_ext_ratio).fold(f64::INFINITY, f64::min);
    ctx.check("Knapp lower bound", "knapp-lower-bound", !evaluated.is_empty() && min_ratio >= 0.22, format!("min |ext|/μ(E) = {min_ratio:.4} ≥ 0.22"));
    let dist_ok = rows.iter().all(|r| r.distance_ok);
    ctx.check("dual phase", "dual-distance", dist_ok, "max |xξ - nearest integer| ≤ 1/10, exact");
    let exponent = params.exponent();
    for i in 1..ps.stages {
        let best = rows.iter().filter(|r| r.stage == i).map(|r| r.certificate).fold(0.0, f64::max);
        let worst = rows.iter().filter(|r| r.stage == i + 1).map(|r| r.certificate).fold(f64::INFINITY, f64::min);
        let need = ((qs.log2_q(i + 1) - qs.log2_q(i)) * 0.9 * exponent).exp2();
        ctx.check(
            format!("ratio growth {i}→{}", i + 1),
            "ratio-blowup",
            worst / best >= need,
            format!("growth {:.4} ≥ (q_{}/q_{i})^(0.9·{exponent:.5}) = {need:.4}", worst / best, i + 1),
        );
    }
    ctx.value("exponent", exponent);
    ctx.value("params", &params);
    Ok(())
}

// ---------------------------------------------------------------- report

#[derive(Serialize)]
struct WindowRow {
    stage: usize,
    log2_q: f64,
    compliant: bool,
    q_beta: String,
    lo: String,
    hi: String,
    count: usize,
    surrogate: f64,
    smallest: Option<u64>,
    largest: Option<u64>,
}

fn report(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let ps = cfg.param_set()?;
    let lattice_ok = validate_params(&ps, Hypothesis::Lattice);
    let spectrum_ok = validate_params(&ps, Hypothesis::Spectrum);
    ctx.value("lattice_hypothesis", lattice_ok.as_ref().err().map_or("ok".to_string(), |e| e.to_string()));
    ctx.value("spectrum_hypothesis", spectrum_ok.as_ref().err().map_or("ok".to_string(), |e| e.to_string()));
    let s = setup(cfg, if lattice_ok.is_ok() { Hypothesis::Lattice } else { Hypothesis::Spectrum })?;
    sequence_values(ctx, &s);
    ctx.value("fourier_target", (int(2) * &s.ps.gamma).to_string());
    let mut rows = Vec::new();
    for i in 1..=s.ps.stages {
        let w = match &s.mode {
            StageMode::Nongeometric { a, b } => Some(nongeometric_window(a, b, s.ps.beta(), i, &s.qs)?),
            StageMode::AllH => None,
            _ => Some(standard_window(&s.qs, i, &s.ps.gamma)?),
        };
        ctx.check(format!("stage {i} window"), "prime-window", w.as_ref().is_none_or(|w| !w.is_empty()), "window holds a prime");
        rows.push(WindowRow {
            stage: i,
            log2_q: s.qs.log2_q(i),
            compliant: s.qs.compliant[i - 1],
            q_beta: s.qs.q_betas(i, &s.ps).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
            lo: w.as_ref().map_or(String::new(), |w| w.lo.to_string()),
            hi: w.as_ref().map_or(String::new(), |w| w.hi.to_string()),
            count: w.as_ref().map_or(0, |w| w.count()),
            surrogate: w.as_ref().map_or(f64::NAN, |w| w.surrogate()),
            smallest: w.as_ref().and_then(|w| w.smallest()),
            largest: w.as_ref().and_then(|w| w.largest()),
        });
    }
    if s.qs.mode == crate::params::GrowthMode::Strict {
        ctx.check("strict growth", "growth-condition", s.qs.compliant.iter().all(|&c| c), "every stage meets the strict inequalities");
    }
    ctx.csv("windows.csv", &rows)?;
    Ok(())
}
