//! End-to-end runs of the `kmfg` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kinetic_mfg::cli_io::{read_diagnostics_csv, CONVERGENCE_HEADER, DIAGNOSTICS_HEADER};

const TINY: &[&str] = &["--set", "grid.nx=4", "--set", "grid.nv=4", "--set", "grid.nt=4"];

fn kmfg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmfg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    names.sort();
    names
}

fn diagnostic(dir: &Path, name: &str) -> f64 {
    let rows = read_diagnostics_csv(&fs::read_to_string(dir.join("diagnostics.csv")).unwrap()).unwrap();
    rows.iter().find(|r| r.name == name).unwrap_or_else(|| panic!("no {name}")).value
}

#[test]
fn solve_writes_artifacts_and_verify_reproduces_them() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kmfg(tmp.path(), &[&["solve", "--set", "run.name=a"], TINY].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("runs/a");
    assert_eq!(
        files(&run),
        [
            "convergence.csv",
            "diagnostics.csv",
            "fields_m.csv",
            "fields_m_terminal.csv",
            "fields_u.csv",
            "fields_w1.csv",
            "manifest.txt"
        ]
    );
    let conv = fs::read_to_string(run.join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().next(), Some(CONVERGENCE_HEADER));
    let diags = fs::read_to_string(run.join("diagnostics.csv")).unwrap();
    assert_eq!(diags.lines().next(), Some(DIAGNOSTICS_HEADER));
    assert_eq!(diagnostic(&run, "converged"), 1.0);
    assert!(diagnostic(&run, "duality_gap").abs() <= 1e-4);
    // header plus one row per (t, x, v) node
    assert_eq!(fs::read_to_string(run.join("fields_m.csv")).unwrap().lines().count(), 1 + 5 * 16);

    let out = kmfg(tmp.path(), &["verify", "runs/a"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let verified = read_diagnostics_csv(&fs::read_to_string(run.join("verify.csv")).unwrap()).unwrap();
    let gap = verified.iter().find(|r| r.name == "duality_gap").unwrap().value;
    assert!((gap - diagnostic(&run, "duality_gap")).abs() <= 1e-12);
}

#[test]
fn repeat_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["one", "two"] {
        let set = format!("run.name={name}");
        let args = [&["solve", "--set", set.as_str(), "--set", "solver.init=random:3"], TINY].concat();
        assert!(kmfg(tmp.path(), &args).status.success());
    }
    let (a, b) = (tmp.path().join("runs/one"), tmp.path().join("runs/two"));
    for f in files(&a) {
        let (x, y) = (fs::read_to_string(a.join(&f)).unwrap(), fs::read_to_string(b.join(&f)).unwrap());
        if f == "manifest.txt" {
            // the manifest records the run name and creation time
            let strip = |s: &str| {
                s.lines()
                    .filter(|l| !l.starts_with("# created_unix") && !l.starts_with("# command") && !l.starts_with("run.name"))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(&x), strip(&y));
        } else {
            assert!(x == y, "{f} differs between identical runs");
        }
    }
}

#[test]
fn malformed_config_fails_without_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.cfg"), "grid.nx = 4\ngrid.nx = 5\n").unwrap();
    let out = kmfg(tmp.path(), &["solve", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.nx"));
    assert!(!tmp.path().join("runs").exists());

    let out = kmfg(tmp.path(), &["solve", "--set", "model.r=0.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = kmfg(tmp.path(), &["solve", "--set", "grid.horizon=inf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(files(tmp.path()).iter().all(|f| f == "bad.cfg"), "{:?}", files(tmp.path()));
}

#[test]
fn exhausted_budget_exits_one_but_keeps_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kmfg(tmp.path(), &[&["solve", "--set", "solver.max_iter=3"], TINY].concat());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(diagnostic(&tmp.path().join("runs/run"), "converged"), 0.0);
}

#[test]
fn oracle_and_sweep_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kmfg(tmp.path(), &[&["oracle", "--set", "run.name=o"], TINY].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let oracle = diagnostic(&tmp.path().join("runs/o"), "oracle_objective");

    let out = kmfg(tmp.path(), &[&["solve", "--set", "run.name=s"], TINY].concat());
    assert!(out.status.success());
    let primal = diagnostic(&tmp.path().join("runs/s"), "primal_objective");
    assert!((primal - oracle).abs() <= 1e-3 * (1.0 + oracle.abs()));

    let sweep_args = ["sweep", "--set", "run.name=w", "--set", "grid.nx=8", "--set", "grid.nv=8", "--set", "grid.nt=8"];
    let out = kmfg(tmp.path(), &sweep_args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("runs/w");
    for f in ["sweep_regularity.csv", "sweep_commutator.csv", "sweep_translation.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert!(diagnostic(&run, "regularity_kinetic_slope").is_finite());
}

#[test]
fn rerun_replaces_previous_directory() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(kmfg(tmp.path(), &[&["solve"], TINY].concat()).status.success());
    fs::write(tmp.path().join("runs/run/stale.txt"), "x").unwrap();
    assert!(kmfg(tmp.path(), &[&["solve"], TINY].concat()).status.success());
    assert!(!tmp.path().join("runs/run/stale.txt").exists());
    assert_eq!(files(&tmp.path().join("runs")), ["run"]);
}

#[test]
fn zero_coupling_smoke_run_has_vanishing_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kmfg(tmp.path(), &["solve", "--set", "model.c_f=0", "--set", "model.c_g=0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let conv = fs::read_to_string(tmp.path().join("runs/run/convergence.csv")).unwrap();
    let last = conv.lines().last().unwrap();
    let gap: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert!(gap.abs() <= 1e-10, "{last}");
}

#[test]
fn default_run_reports_core_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kmfg(tmp.path(), &["solve"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("runs/run");
    assert!(diagnostic(&run, "energy_equality") <= 1e-3);
    assert!(diagnostic(&run, "duality_gap").abs() <= 1e-4);
    assert!(diagnostic(&run, "mass_drift") <= 1e-3);
}
