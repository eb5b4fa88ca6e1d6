//! Run configuration, tabular output, the checksummed spectrum cache and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::exact::{parse_rational, Rational};
use crate::params::{GrowthMode, ParamSet};
use crate::spectrum::SparseSpectrum;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable that overrides the cache directory.
pub const CACHE_ENV: &str = "DIOLAB_CACHE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Construct,
    Measure,
    Spectrum,
    Dims,
    Project,
    Restrict,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Construct => "construct",
            Command::Measure => "measure",
            Command::Spectrum => "spectrum",
            Command::Dims => "dims",
            Command::Project => "project",
            Command::Restrict => "restrict",
            Command::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| LabError::Config(format!("unknown command {s:?}")))
    }
}

/// Accepts `"1/4"`, `0.25` or `1` and stores the reduced rational as text.
fn de_rat<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        I(i64),
        F(f64),
        S(String),
    }
    let text = match Raw::deserialize(d)? {
        Raw::I(i) => i.to_string(),
        Raw::F(f) => format!("{f}"),
        Raw::S(s) => s,
    };
    parse_rational(&text).map(|r| r.to_string()).map_err(serde::de::Error::custom)
}

fn de_rats<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    struct W(#[serde(deserialize_with = "de_rat")] String);
    Ok(Vec::<W>::deserialize(d)?.into_iter().map(|w| w.0).collect())
}

fn de_opt_rat<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    #[derive(Deserialize)]
    struct W(#[serde(deserialize_with = "de_rat")] String);
    Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
}

/// Everything a run depends on. Serialized back verbatim into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub d: usize,
    #[serde(deserialize_with = "de_rat")]
    pub gamma: String,
    #[serde(deserialize_with = "de_rats")]
    pub betas: Vec<String>,
    pub growth: GrowthMode,
    pub stages: usize,
    pub base: u64,
    /// Hand-picked exponents of the base; switches growth to explicit.
    pub exps: Option<Vec<u64>>,
    pub first_exp: Option<u64>,
    /// auto | all_h | primes | primes_excluding | nongeometric
    pub stage_mode: String,
    #[serde(deserialize_with = "de_opt_rat")]
    pub a: Option<String>,
    #[serde(deserialize_with = "de_opt_rat")]
    pub b: Option<String>,
    pub kmax: Option<i64>,
    /// Cap on the spectrum error budget.
    pub tolerance: f64,
    /// Allowed deviation of the Fourier slope from -γ and of Frostman slopes from the target.
    pub fit_tolerance: f64,
    /// Allowed deviation of the box-count estimate from the target.
    pub box_tolerance: f64,
    pub bump_order: u32,
    pub p_tilde: f64,
    pub q_exp: f64,
    #[serde(deserialize_with = "de_rat")]
    pub s_a: String,
    #[serde(deserialize_with = "de_rat")]
    pub s_b: String,
    #[serde(deserialize_with = "de_rat")]
    pub s_c: String,
    pub out: String,
    pub cache: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            d: 1,
            gamma: "1/4".into(),
            betas: vec!["1/4".into()],
            growth: GrowthMode::Strict,
            stages: 2,
            base: 2,
            exps: None,
            first_exp: None,
            stage_mode: "auto".into(),
            a: None,
            b: None,
            kmax: None,
            tolerance: 1e-6,
            fit_tolerance: 0.15,
            box_tolerance: 0.1,
            bump_order: 4,
            p_tilde: 3.0,
            q_exp: 2.0,
            s_a: "2/5".into(),
            s_b: "2/5".into(),
            s_c: "1/5".into(),
            out: "out".into(),
            cache: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn gamma(&self) -> Result<Rational> {
        parse_rational(&self.gamma)
    }

    pub fn param_set(&self) -> Result<ParamSet> {
        let betas = self.betas.iter().map(|b| parse_rational(b)).collect::<Result<Vec<_>>>()?;
        let growth = if self.exps.is_some() { GrowthMode::Explicit } else { self.growth };
        Ok(ParamSet::new(self.d, self.gamma()?, betas, growth, self.stages))
    }

    /// Cache directory: the environment override wins over the config.
    pub fn cache_dir(&self) -> Option<PathBuf> {
        std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from).or_else(|| self.cache.as_ref().map(PathBuf::from))
    }

    /// Hash of every input except where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = String::new();
        c.cache = None;
        sha256_hex(c.to_toml().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------- tabular output

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| LabError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| LabError::Io(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

// ---------------------------------------------------------------- spectrum cache

const CACHE_MAGIC: &str = "# diolab spectrum cache v1";

/// Result of a cache probe. A corrupt entry is a miss that carries the reason.
#[derive(Debug)]
pub enum Lookup {
    Hit(SparseSpectrum),
    Miss,
    Corrupt(LabError),
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("spectrum-{key}.txt"))
}

/// Text body: header lines, then `k re im` rows. f64 values use the shortest
/// round-trip form so a reload is bit-identical.
fn encode_spectrum(key: &str, g: &SparseSpectrum) -> String {
    let mut s = String::new();
    writeln!(s, "{CACHE_MAGIC}").unwrap();
    writeln!(s, "key {key}").unwrap();
    writeln!(s, "stages {}", g.stages.join(";")).unwrap();
    writeln!(s, "kmax {}", g.kmax).unwrap();
    writeln!(s, "err_budget {:?}", g.err).unwrap();
    writeln!(s, "tail_l1 {:?}", g.tail_l1).unwrap();
    writeln!(s, "rows {}", g.entries.len()).unwrap();
    for (k, v) in &g.entries {
        writeln!(s, "{k} {:?} {:?}", v.re, v.im).unwrap();
    }
    s
}

fn decode_spectrum(text: &str, key: &str) -> Result<SparseSpectrum> {
    let bad = |why: &str| LabError::CorruptCache(why.to_string());
    let (body, sum_line) = text.trim_end_matches('\n').rsplit_once('\n').ok_or_else(|| bad("no checksum line"))?;
    let sum = sum_line.strip_prefix("sha256 ").ok_or_else(|| bad("no checksum line"))?;
    let mut body = body.to_string();
    body.push('\n');
    if sha256_hex(body.as_bytes()) != sum {
        return Err(bad("checksum mismatch"));
    }
    let mut lines = body.lines();
    if lines.next() != Some(CACHE_MAGIC) {
        return Err(bad("bad magic"));
    }
    let mut header = BTreeMap::new();
    for name in ["key", "stages", "kmax", "err_budget", "tail_l1", "rows"] {
        let line = lines.next().ok_or_else(|| bad("short header"))?;
        let (n, v) = line.split_once(' ').unwrap_or((line, ""));
        if n != name {
            return Err(bad(&format!("expected {name}")));
        }
        header.insert(name, v.to_string());
    }
    if header["key"] != key {
        return Err(bad("key mismatch"));
    }
    let num = |n: &str| header[n].parse::<f64>().map_err(|_| bad(n));
    let kmax: i128 = header["kmax"].parse().map_err(|_| bad("kmax"))?;
    let rows: usize = header["rows"].parse().map_err(|_| bad("rows"))?;
    let mut entries = Vec::with_capacity(rows);
    for line in lines {
        let mut it = line.split(' ');
        let mut next = || it.next().ok_or_else(|| bad("short row"));
        let k: i128 = next()?.parse().map_err(|_| bad("row"))?;
        let re: f64 = next()?.parse().map_err(|_| bad("row"))?;
        let im: f64 = next()?.parse().map_err(|_| bad("row"))?;
        entries.push((k, Complex64::new(re, im)));
    }
    if entries.len() != rows {
        return Err(bad("row count"));
    }
    let stages = if header["stages"].is_empty() { vec![] } else { header["stages"].split(';').map(String::from).collect() };
    Ok(SparseSpectrum { entries, kmax, err: num("err_budget")?, tail_l1: num("tail_l1")?, stages })
}

pub fn cache_lookup(dir: &Path, key: &str) -> Lookup {
    let path = cache_path(dir, key);
    match fs::read(&path) {
        Err(_) => Lookup::Miss,
        Ok(bytes) => match String::from_utf8(bytes) {
            Err(_) => Lookup::Corrupt(LabError::CorruptCache("not utf-8".into())),
            Ok(text) => match decode_spectrum(&text, key) {
                Ok(g) => Lookup::Hit(g),
                Err(e) => Lookup::Corrupt(e),
            },
        },
    }
}

/// Writes through a temporary file so a crash never leaves a half entry under the real name.
pub fn cache_store(dir: &Path, key: &str, g: &SparseSpectrum) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut body = encode_spectrum(key, g);
    let sum = sha256_hex(body.as_bytes());
    writeln!(body, "sha256 {sum}").unwrap();
    let path = cache_path(dir, key);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

// ---------------------------------------------------------------- manifest

/// Plain-text manifest: version, command, config hash, the config itself and
/// a checksum per data file. No timestamps, so reruns are byte-identical.
pub fn write_manifest(out: &Path, cfg: &RunConfig, files: &[String]) -> Result<PathBuf> {
    let mut s = String::new();
    writeln!(s, "diolab {VERSION}").unwrap();
    writeln!(s, "command {}", cfg.command.map_or("none", |c| c.name())).unwrap();
    writeln!(s, "config_hash {}", cfg.hash()).unwrap();
    writeln!(s, "\n[config]").unwrap();
    s.push_str(&cfg.to_toml());
    writeln!(s, "\n[files]").unwrap();
    for f in files {
        let bytes = fs::read(out.join(f))?;
        writeln!(s, "{} {f}", sha256_hex(&bytes)).unwrap();
    }
    let path = out.join("manifest.txt");
    fs::write(&path, s)?;
    Ok(path)
}
