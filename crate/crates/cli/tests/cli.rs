use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn diolab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diolab")).args(args).current_dir(dir).env_remove("DIOLAB_CACHE").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

const SMALL: &str = "gamma = \"1/2\"\nbetas = [\"1/4\"]\ngrowth = \"relaxed\"\nstages = 2\nstage_mode = \"primes_excluding\"\n";
const SPEC: &str = "gamma = \"1/4\"\nbetas = [\"1/4\"]\ngrowth = \"relaxed\"\nstages = 2\nfirst_exp = 8\n";

#[test]
fn construct_small_example() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "c.toml", SMALL);
    let o = diolab(&["construct", "--config", &cfg, "--out", "run"], t.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(t.path().join("run/intervals.csv")).unwrap();
    let stage1: Vec<&str> = csv.lines().filter(|l| l.starts_with("1,")).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(stage1, ["1/6", "1/3", "2/3", "5/6"]);
    let s = summary(&t.path().join("run"));
    assert!(s["assertions"].as_array().unwrap().iter().all(|a| a["pass"] == true));
    let manifest = fs::read_to_string(t.path().join("run/manifest.txt")).unwrap();
    assert!(manifest.contains("command construct") && manifest.contains("intervals.csv") && manifest.contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn reruns_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "c.toml", SPEC);
    let snapshot = |dir: &Path| {
        let mut files: Vec<(String, Vec<u8>)> =
            fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect();
        files.sort();
        files
    };
    for cmd in ["construct", "spectrum", "report"] {
        assert!(diolab(&[cmd, "--config", &cfg, "--out", "run"], t.path()).status.success());
        let first = snapshot(&t.path().join("run"));
        assert!(diolab(&[cmd, "--config", &cfg, "--out", "run"], t.path()).status.success());
        assert_eq!(first, snapshot(&t.path().join("run")), "{cmd}");
        fs::remove_dir_all(t.path().join("run")).unwrap();
    }
}

#[test]
fn constraint_violation_exits_one() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "c.toml", "gamma = 0.5\nbetas = [0.5]\n");
    let o = diolab(&["construct", "--config", &cfg, "--out", "run"], t.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("γ+β<1"));
}

#[test]
fn usage_errors_exit_two() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(diolab(&["frobnicate"], t.path()).status.code(), Some(2));
    assert_eq!(diolab(&["construct", "--mode", "sideways"], t.path()).status.code(), Some(2));
    let cfg = write(t.path(), "c.toml", "gamma = 0.25\nunknown_key = 1\n");
    assert_eq!(diolab(&["construct", "--config", &cfg], t.path()).status.code(), Some(2));
    assert_eq!(diolab(&["construct", "--config", "missing.toml"], t.path()).status.code(), Some(2));
    assert_eq!(diolab(&["spectrum", "--tolerance", "-1"], t.path()).status.code(), Some(2));
}

#[test]
fn spectrum_cache_hit_miss_and_corruption() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "c.toml", SPEC);
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["spectrum", "--config", cfg.as_str(), "--out", out, "--cache", "cache"];
        args.extend_from_slice(extra);
        let o = diolab(&args, t.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read(t.path().join(out).join("spectrum.csv")).unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
    };
    let entries = || fs::read_dir(t.path().join("cache")).unwrap().count();
    let (a, _) = run("a", &[]);
    assert_eq!(entries(), 1);
    let (b, err) = run("b", &[]);
    assert_eq!(a, b);
    assert!(err.is_empty());
    // a different radius is a different key
    run("c", &["--kmax", "4096"]);
    assert_eq!(entries(), 2);
    // truncate the first entry: warning, recompute, identical output
    let path = fs::read_dir(t.path().join("cache")).unwrap().map(|e| e.unwrap().path()).find(|p| fs::metadata(p).unwrap().len() > 1_000_000).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let (d, err) = run("d", &[]);
    assert!(err.contains("corrupt"), "{err}");
    assert_eq!(a, d);
    assert_eq!(fs::read(&path).unwrap(), bytes);
}

#[test]
fn cache_env_overrides_flag() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "c.toml", SPEC);
    let o = Command::new(env!("CARGO_BIN_EXE_diolab"))
        .args(["spectrum", "--config", &cfg, "--out", "run", "--cache", "flagged", "--kmax", "256"])
        .current_dir(t.path())
        .env("DIOLAB_CACHE", "from_env")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read_dir(t.path().join("from_env")).unwrap().count(), 1);
    assert!(!t.path().join("flagged").exists());
}

#[test]
fn dims_on_geometric_example() {
    let t = tempfile::tempdir().unwrap();
    let o = diolab(&["dims", "--out", "run", "--stages", "2", "--mode", "strict"], t.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let s = summary(&t.path().join("run"));
    let box_est = s["values"]["box_estimate"].as_f64().unwrap();
    let fourier = s["values"]["fourier_estimate"].as_f64().unwrap();
    assert!((box_est - 0.75).abs() <= 0.1, "{box_est}");
    assert!((fourier - 0.5).abs() <= 0.3, "{fourier}");
    let shells = fs::read_to_string(t.path().join("run/shells.csv")).unwrap();
    assert!(shells.starts_with("j,log_k,max,log_max"));
}

#[test]
fn project_and_restrict_pass() {
    let t = tempfile::tempdir().unwrap();
    assert!(diolab(&["project", "--out", "p"], t.path()).status.success());
    assert!(fs::read_to_string(t.path().join("p/sumset.csv")).unwrap().lines().count() > 1);
    let cfg = write(t.path(), "r.toml", "gamma = 0.3\nbetas = [0.2]\nexps = [10, 30]\n");
    let o = diolab(&["restrict", "--config", &cfg, "--out", "r"], t.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS ratio growth 1→2"));
}

#[test]
fn failed_assertion_exits_one() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "c.toml", "gamma = 0.25\nbetas = [0.25]\ngrowth = \"relaxed\"\nfirst_exp = 8\nfit_tolerance = 0.0001\n");
    let o = diolab(&["measure", "--config", &cfg, "--out", "m"], t.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL Frostman upper slope"));
    assert!(t.path().join("m/manifest.txt").exists());
}
