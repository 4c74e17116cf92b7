use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nlpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlpm")).args(args).output().expect("binary runs")
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_HEAT: &str = "
[experiment]
name = heat
[equation]
alpha = 1
phi = identity
[scheme]
operator = pdl
dt = power(1, 2)
[domain]
box = -200:200
levels = 3
[data]
reference = fractional_heat
";

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_heat_prints_cfl_bound() {
    let o = nlpm(&["validate", bundled("table1.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("cfl bound = 3.9"), "{out}");
    assert!(out.contains("pass"));
}

#[test]
fn every_bundled_config_validates() {
    for entry in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")).unwrap() {
        let p = entry.unwrap().path();
        let o = nlpm(&["validate", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}: {}", p.display(), stderr(&o));
    }
}

#[test]
fn explicit_fast_diffusion_without_regularization_fails() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_HEAT.replace("phi = identity", "phi = power(0.5)");
    let p = write_cfg(dir.path(), "fd.cfg", &text);
    let o = nlpm(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("infinite Lipschitz"), "{}", stderr(&o));
}

#[test]
fn implicit_config_reports_unbounded_cfl() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_HEAT.replace("operator = pdl", "operator = pdl\ntheta = 1");
    let p = write_cfg(dir.path(), "implicit.cfg", &text);
    let o = nlpm(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("cfl bound = unbounded"));
}

#[test]
fn zero_levels_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_cfg(dir.path(), "zero.cfg", &SMALL_HEAT.replace("levels = 3", "levels = 0"));
    let o = nlpm(&["run", p.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 12"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_file_is_a_validation_error() {
    let o = nlpm(&["validate", "/nonexistent/config.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_with_three() {
    // Newton cannot converge in one iteration on an implicit nonlinear problem.
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_HEAT
        .replace("phi = identity", "phi = power(2)")
        .replace("operator = pdl", "operator = pdl\ntheta = 1")
        .replace("[domain]", "[solver]\nmax_iter = 1\ntol = 1e-15\n[domain]");
    let p = write_cfg(dir.path(), "fail.cfg", &text);
    let o = nlpm(&["run", p.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
    assert!(manifest.contains("status = running"));
}

#[test]
fn list_schemes_catalog() {
    let o = nlpm(&["list-schemes"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("pdl_1d"));
    assert!(out.contains("midpoint"));
    let builders = out.lines().filter(|l| !l.starts_with(' ')).count();
    assert!(builders >= 8, "{out}");
    assert_eq!(out.lines().filter(|l| l.trim_start().starts_with("LTE")).count(), builders);
}

#[test]
fn run_writes_manifest_and_reproducible_tables() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_cfg(dir.path(), "heat.cfg", SMALL_HEAT);
    let mut tables = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let o = nlpm(&["run", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("status = complete"));
        assert!(manifest.contains(&format!("config = {}", p.display())));
        let levels: Vec<&str> = manifest.lines().filter(|l| l.starts_with("heat,")).collect();
        assert_eq!(levels.len(), 3);
        // every level was sized by a finite CFL bound
        assert!(levels.iter().all(|l| l.split(',').nth(4).unwrap().parse::<f64>().is_ok()));
        tables.push(fs::read(out.join("heat.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let csv = String::from_utf8(tables.remove(0)).unwrap();
    assert!(csv.starts_with("h,dt,err_linf,rate_linf,err_l1,rate_l1\n"));
}

#[test]
fn thread_cap_from_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_nlpm"))
        .args(["validate", bundled("table1.cfg").to_str().unwrap()])
        .env("NLPM_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_nlpm")).arg("list-schemes").env("NLPM_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bundled_table1_reproduces_the_midpoint_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1");
    let o = nlpm(&["run", bundled("table1.cfg").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("table1_mpr.csv")).unwrap();
    let errs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    let expected = [2.95e-2, 6.94e-3, 1.68e-3, 3.95e-4];
    assert_eq!(errs.len(), expected.len());
    for (e, p) in errs.iter().zip(expected) {
        assert!((e / p - 1.0).abs() < 0.25, "{e} vs {p}");
    }
}
