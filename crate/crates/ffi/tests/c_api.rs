use std::ffi::{CStr, CString};
use std::ptr;

use kinetic_mfg_ffi::*;

const TINY: &str = "grid.nx = 4\ngrid.nv = 4\ngrid.nt = 4\n";

fn parse(text: &str) -> (KmfgStatus, *mut KmfgConfig) {
    let c = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let st = unsafe { kmfg_config_parse(c.as_ptr(), &mut cfg) };
    (st, cfg)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(kmfg_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(kmfg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn parse_reports_grid() {
    let (st, cfg) = parse(TINY);
    assert_eq!(st, KmfgStatus::Ok);
    let mut g = KmfgGrid::default();
    assert_eq!(unsafe { kmfg_config_grid(cfg, &mut g) }, KmfgStatus::Ok);
    assert_eq!((g.d, g.nx, g.nv, g.nt), (1, 4, 4, 4));
    unsafe { kmfg_config_free(cfg) };
}

#[test]
fn malformed_config_sets_status_and_message() {
    let (st, cfg) = parse("grid.nx = banana\n");
    assert_eq!(st, KmfgStatus::Parse);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());

    let (st, cfg) = parse("model.r = 0.5\n");
    assert_eq!(st, KmfgStatus::Range, "{}", last_error());
    assert!(cfg.is_null());
}

#[test]
fn null_pointers_are_rejected() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { kmfg_config_parse(ptr::null(), &mut cfg) }, KmfgStatus::NullPointer);
    assert_eq!(unsafe { kmfg_config_grid(ptr::null(), ptr::null_mut()) }, KmfgStatus::NullPointer);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { kmfg_solve(ptr::null(), &mut sol) }, KmfgStatus::NullPointer);
    assert!(sol.is_null());
    unsafe {
        kmfg_config_free(ptr::null_mut());
        kmfg_solution_free(ptr::null_mut());
    }
}

#[test]
fn invalid_utf8_is_rejected() {
    let bytes = [0xffu8, 0xfe, 0];
    let mut cfg = ptr::null_mut();
    let st = unsafe { kmfg_config_parse(bytes.as_ptr().cast(), &mut cfg) };
    assert_eq!(st, KmfgStatus::InvalidUtf8);
}

#[test]
fn solve_and_read_fields() {
    let (_, cfg) = parse(TINY);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { kmfg_solve(cfg, &mut sol) }, KmfgStatus::Ok, "{}", last_error());

    let mut s = KmfgSummary::default();
    assert_eq!(unsafe { kmfg_solution_summary(sol, &mut s) }, KmfgStatus::Ok);
    assert!(s.converged);
    assert!(s.gap.abs() <= 1e-4 * (1.0 + s.primal.abs()));

    // size query, then a short buffer, then the real copy
    let mut n = 0usize;
    let st = unsafe { kmfg_solution_field(sol, KmfgField::Density, ptr::null_mut(), 0, &mut n) };
    assert_eq!(st, KmfgStatus::BufferTooSmall);
    assert_eq!(n, 5 * 16);
    let mut buf = vec![0.0; n];
    let st = unsafe { kmfg_solution_field(sol, KmfgField::Density, buf.as_mut_ptr(), n, &mut n) };
    assert_eq!(st, KmfgStatus::Ok);
    assert!(buf.iter().all(|m| m.is_finite() && *m >= -1e-12));

    let mut w = vec![0.0; 4 * 16];
    let st = unsafe { kmfg_solution_field(sol, KmfgField::Flux1, w.as_mut_ptr(), w.len(), &mut n) };
    assert_eq!((st, n), (KmfgStatus::Ok, 4 * 16));

    let st = unsafe { kmfg_solution_field(sol, KmfgField::Flux2, w.as_mut_ptr(), w.len(), &mut n) };
    assert_eq!(st, KmfgStatus::InvalidArgument);

    let mut mt = vec![0.0; 16];
    let st = unsafe { kmfg_solution_field(sol, KmfgField::TerminalDensity, mt.as_mut_ptr(), 16, &mut n) };
    assert_eq!((st, n), (KmfgStatus::Ok, 16));
    assert!(mt.iter().zip(&buf[4 * 16..]).all(|(a, b)| (a - b).abs() < 1e-4));

    let mut oracle = 0.0;
    assert_eq!(unsafe { kmfg_oracle_objective(cfg, &mut oracle) }, KmfgStatus::Ok);
    assert!((oracle - s.primal).abs() <= 1e-3 * (1.0 + oracle.abs()));

    unsafe {
        kmfg_solution_free(sol);
        kmfg_config_free(cfg);
    }
}

#[test]
fn exhausted_budget_still_returns_solution() {
    let (_, cfg) = parse(&format!("{TINY}solver.max_iter = 5\nsolver.record_every = 1\n"));
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { kmfg_solve(cfg, &mut sol) }, KmfgStatus::NotConverged);
    assert!(!sol.is_null());
    let mut s = KmfgSummary::default();
    unsafe { kmfg_solution_summary(sol, &mut s) };
    assert!(!s.converged);
    assert_eq!(s.iterations, 5);
    unsafe {
        kmfg_solution_free(sol);
        kmfg_config_free(cfg);
    }
}

#[test]
fn header_is_current() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/kinetic_mfg.h")).unwrap();
    for sym in [
        "kmfg_config_parse",
        "kmfg_solve",
        "kmfg_solution_field",
        "kmfg_oracle_objective",
        "KMFG_STATUS_NOT_CONVERGED",
        "typedef struct KmfgSolution KmfgSolution",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"kinetic_mfg.h\"\n\
         int main(void) {\n\
           KmfgConfig *cfg = 0;\n\
           KmfgStatus st = kmfg_config_parse(\"grid.nx = 4\", &cfg);\n\
           kmfg_config_free(cfg);\n\
           return st == KMFG_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
