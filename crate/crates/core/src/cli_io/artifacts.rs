//! Run orchestration and CSV artifacts.
//!
//! A run is assembled in a hidden sibling directory and renamed into place
//! only once every file is written, so a failed run leaves nothing behind.
//! Floats are printed with 17 significant digits, which parse back to the
//! same bits. Apart from `manifest.txt`, output depends only on the config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::config::{config_to_text, parse_config, RunConfig};
use crate::diagnostics::{
    commutator_decay, coupling_residuals, energy_equality_residual, fenchel_young_residuals, mass_drift,
    regularity_quotient, translation_modulus, truncation_check, velocity_average, CommutatorProbe, CutoffPreset,
    RegularityProbe,
};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, TimeLayout, VectorField};
use crate::model::{build_initial_density, InitialDensity, MAX_OUTSIDE_MASS};
use crate::oracle::{oracle_solve, OracleConfig};
use crate::solver::{
    duality_gap, evaluate_a, evaluate_b, pdhg_solve, recover_value_state, ConvergenceRecord, FlowState, Solution,
    ValueState,
};

pub const CONVERGENCE_HEADER: &str = "iter,primal,dual,gap,feas,energy_residual,seconds";
pub const DIAGNOSTICS_HEADER: &str = "name,param,value";

/// One `diagnostics.csv` row. `param` is empty when the diagnostic has none.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub name: String,
    pub param: Option<f64>,
    pub value: f64,
}

impl DiagnosticRow {
    fn new(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            param: None,
            value,
        }
    }

    fn with(name: &str, param: f64, value: f64) -> Self {
        Self {
            name: name.into(),
            param: Some(param),
            value,
        }
    }
}

/// What a finished command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    /// False when the iteration budget ran out before the tolerances were met.
    pub converged: bool,
    pub diagnostics: Vec<DiagnosticRow>,
}

impl RunSummary {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.diagnostics.iter().find(|r| r.name == name).map(|r| r.value)
    }

    /// Process exit status: 0 on success, 1 when the solver stopped unconverged.
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            1
        }
    }
}

/// `{:.16e}`: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, file: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        column: 1,
        message: format!("{file}: `{s}` is not a number"),
    })
}

fn field_header(grid: &GridSpec) -> String {
    let mut out = String::from("t");
    for prefix in ["x", "v"] {
        for a in 1..=grid.d {
            out.push(',');
            out.push_str(prefix);
            if grid.d > 1 {
                let _ = write!(out, "{a}");
            }
        }
    }
    out.push_str(",value\n");
    out
}

fn push_slice_rows(out: &mut String, grid: &GridSpec, t: f64, slice: &[f64]) {
    let d = grid.d;
    let t = fmt_f64(t);
    let nvd = grid.v_cells();
    for ix in 0..grid.x_cells() {
        let x = grid.position(ix);
        for iv in 0..nvd {
            let v = grid.velocity(iv);
            out.push_str(&t);
            for c in x[..d].iter().chain(&v[..d]) {
                out.push(',');
                out.push_str(&fmt_f64(*c));
            }
            out.push(',');
            out.push_str(&fmt_f64(slice[ix * nvd + iv]));
            out.push('\n');
        }
    }
}

/// Field CSV with columns `t,x..,v..,value`, rows ordered by
/// `(time, position index, velocity index)`. Interval fields are stamped
/// with the left endpoint of their interval.
pub fn field_csv(field: &ScalarField) -> String {
    let grid = field.grid();
    let mut out = field_header(grid);
    for k in 0..field.slices() {
        push_slice_rows(&mut out, grid, grid.time(k), field.slice(k));
    }
    out
}

/// Reads a field written by [`field_csv`], checking every coordinate.
pub fn read_field_csv(text: &str, grid: &GridSpec, layout: TimeLayout, file: &str) -> Result<ScalarField> {
    let times: Vec<f64> = (0..grid.time_slices(layout)).map(|k| grid.time(k)).collect();
    ScalarField::from_values(*grid, layout, read_slices(text, grid, &times, file)?)
}

/// Values of consecutive slices stamped with `times`.
fn read_slices(text: &str, grid: &GridSpec, times: &[f64], file: &str) -> Result<Vec<f64>> {
    let fail = |line: usize, message: String| Error::Parse {
        line,
        column: 1,
        message: format!("{file}: {message}"),
    };
    let mut lines = text.lines();
    let expected = field_header(grid);
    let header = expected.trim_end();
    if lines.next() != Some(header) {
        return Err(fail(1, format!("expected header `{header}`")));
    }
    let d = grid.d;
    let (nxd, nvd) = (grid.x_cells(), grid.v_cells());
    let mut values = Vec::with_capacity(times.len() * nxd * nvd);
    let mut lineno = 1;
    for &t in times {
        for ix in 0..nxd {
            for iv in 0..nvd {
                lineno += 1;
                let line = lines.next().ok_or_else(|| fail(lineno, "truncated".into()))?;
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() != 2 + 2 * d {
                    return Err(fail(lineno, format!("expected {} columns", 2 + 2 * d)));
                }
                let mut coords = vec![t];
                coords.extend_from_slice(&grid.position(ix)[..d]);
                coords.extend_from_slice(&grid.velocity(iv)[..d]);
                for (c, want) in cols.iter().zip(&coords) {
                    if parse_f64(c, file, lineno)? != *want {
                        return Err(fail(lineno, "coordinates do not match the configured grid".into()));
                    }
                }
                values.push(parse_f64(cols[1 + 2 * d], file, lineno)?);
            }
        }
    }
    if lines.next().is_some() {
        return Err(fail(lineno + 1, "trailing rows".into()));
    }
    Ok(values)
}

pub fn convergence_csv(record: &ConvergenceRecord) -> String {
    let mut out = format!("{CONVERGENCE_HEADER}\n");
    for r in &record.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter,
            fmt_f64(r.primal),
            fmt_f64(r.dual),
            fmt_f64(r.gap),
            fmt_f64(r.feas),
            fmt_f64(r.energy_residual),
            fmt_f64(r.seconds)
        );
    }
    out
}

pub fn diagnostics_csv(rows: &[DiagnosticRow]) -> String {
    let mut out = format!("{DIAGNOSTICS_HEADER}\n");
    for r in rows {
        let param = r.param.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", r.name, param, fmt_f64(r.value));
    }
    out
}

pub fn read_diagnostics_csv(text: &str) -> Result<Vec<DiagnosticRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(DIAGNOSTICS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("diagnostics: expected header `{DIAGNOSTICS_HEADER}`"),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    line: i + 2,
                    column: 1,
                    message: "diagnostics: expected 3 columns".into(),
                });
            }
            Ok(DiagnosticRow {
                name: cols[0].to_string(),
                param: if cols[1].is_empty() {
                    None
                } else {
                    Some(parse_f64(cols[1], "diagnostics", i + 2)?)
                },
                value: parse_f64(cols[2], "diagnostics", i + 2)?,
            })
        })
        .collect()
}

fn manifest(cfg: &RunConfig, command: &str) -> Result<String> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    Ok(format!(
        "# kinetic-mfg {}\n# command = {command}\n# created_unix = {created}\n{}",
        env!("CARGO_PKG_VERSION"),
        config_to_text(cfg)?
    ))
}

/// Directory assembled off to the side and renamed into place on success.
struct Staging {
    tmp: PathBuf,
    target: PathBuf,
    done: bool,
}

impl Staging {
    fn new(parent: &Path, name: &str) -> Result<Self> {
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp)?;
        Ok(Self {
            tmp,
            target: parent.join(name),
            done: false,
        })
    }

    fn write(&self, file: &str, content: &str) -> Result<()> {
        fs::write(self.tmp.join(file), content)?;
        Ok(())
    }

    fn publish(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            let old = self.target.with_file_name(format!(
                ".{}.old-{}",
                self.target.file_name().and_then(|n| n.to_str()).unwrap_or("run"),
                std::process::id()
            ));
            fs::rename(&self.target, &old)?;
            fs::rename(&self.tmp, &self.target)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&self.tmp, &self.target)?;
        }
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

fn write_flow(stage: &Staging, flow: &FlowState) -> Result<()> {
    let grid = *flow.m.grid();
    stage.write("fields_m.csv", &field_csv(&flow.m))?;
    // m_T is its own variable; stamped at the horizon
    let mut terminal = field_header(&grid);
    push_slice_rows(&mut terminal, &grid, grid.horizon, &flow.m_terminal);
    stage.write("fields_m_terminal.csv", &terminal)?;
    for (a, c) in flow.w.components().iter().enumerate() {
        stage.write(&format!("fields_w{}.csv", a + 1), &field_csv(c))?;
    }
    Ok(())
}

fn read_terminal_csv(text: &str, grid: &GridSpec) -> Result<Vec<f64>> {
    read_slices(text, grid, &[grid.horizon], "fields_m_terminal.csv")
}

/// Energy, gap and coupling diagnostics of a primal-dual pair.
fn core_diagnostics(flow: &FlowState, value: &ValueState, m0: &InitialDensity, cfg: &RunConfig) -> Result<Vec<DiagnosticRow>> {
    let model = &cfg.model;
    let b = evaluate_b(flow, model);
    let a = evaluate_a(value, m0.slice(), model);
    let coupling = coupling_residuals(flow, value, model)?;
    let fy = fenchel_young_residuals(flow, value, model)?;
    Ok(vec![
        DiagnosticRow::new("energy_equality", energy_equality_residual(flow, value, model)?),
        DiagnosticRow::new("duality_gap", duality_gap(a, b)),
        DiagnosticRow::new("mass_drift", mass_drift(flow)),
        DiagnosticRow::new("primal_objective", b),
        DiagnosticRow::new("dual_objective", -a),
        DiagnosticRow::new("coupling_running", coupling.running),
        DiagnosticRow::new("coupling_terminal", coupling.terminal),
        DiagnosticRow::new("coupling_flux", coupling.flux),
        DiagnosticRow::new("fenchel_young_min", fy.min),
    ])
}

fn probe_diagnostics(flow: &FlowState, value: &ValueState, cfg: &RunConfig) -> Result<Vec<DiagnosticRow>> {
    let grid = cfg.grid;
    let mut rows = Vec::new();
    let mut us: Vec<f64> = value.u.values().to_vec();
    us.sort_by(f64::total_cmp);
    let pos = ((us.len() - 1) as f64 * cfg.probe.truncation_quantile).round() as usize;
    let level = us[pos];
    let trunc = truncation_check(value, flow, level, &cfg.model)?;
    rows.push(DiagnosticRow::with("truncation_violation_fraction", level, trunc.violation_fraction));
    rows.push(DiagnosticRow::with("truncation_cells_checked", level, trunc.cells_checked as f64));
    rows.push(DiagnosticRow::with("truncation_terminal_violations", level, trunc.terminal_violations as f64));
    if cfg.model.r == 2.0 {
        for (name, preset) in [("kinetic", CutoffPreset::Kinetic), ("spatial", CutoffPreset::Spatial)] {
            let mut probe = RegularityProbe::standard(preset, grid.d, grid.dv, grid.horizon);
            if let Some(t0) = cfg.probe.t0 {
                probe.t0 = t0;
            }
            probe.ladder = cfg.probe.delta_factors.iter().map(|f| f * grid.dv).collect();
            match regularity_quotient(flow, value, &probe, &cfg.model) {
                Ok(rep) => {
                    for (dl, l) in rep.deltas.iter().zip(&rep.lhs) {
                        rows.push(DiagnosticRow::with(&format!("regularity_{name}_lhs"), *dl, *l));
                    }
                    rows.push(DiagnosticRow::new(&format!("regularity_{name}_spread"), rep.spread));
                    rows.push(DiagnosticRow::new(&format!("regularity_{name}_slope"), rep.slope));
                }
                Err(Error::Probe(msg)) => {
                    eprintln!("regularity probe ({name}) skipped: {msg}");
                    rows.push(DiagnosticRow::new(&format!("regularity_{name}_slope"), f64::NAN));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rows)
}

fn sweep_tables(flow: &FlowState, value: &ValueState, cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let grid = cfg.grid;
    let mut files = Vec::new();
    if cfg.model.r == 2.0 {
        let mut reg = String::from("preset,delta,lhs,ratio\n");
        for (name, preset) in [("kinetic", CutoffPreset::Kinetic), ("spatial", CutoffPreset::Spatial)] {
            let mut probe = RegularityProbe::standard(preset, grid.d, grid.dv, grid.horizon);
            if let Some(t0) = cfg.probe.t0 {
                probe.t0 = t0;
            }
            probe.ladder = cfg.probe.delta_factors.iter().map(|f| f * grid.dv).collect();
            if let Ok(rep) = regularity_quotient(flow, value, &probe, &cfg.model) {
                for ((dl, l), r) in rep.deltas.iter().zip(&rep.lhs).zip(&rep.ratios) {
                    let _ = writeln!(reg, "{name},{},{},{}", fmt_f64(*dl), fmt_f64(*l), fmt_f64(*r));
                }
            }
        }
        files.push(("sweep_regularity.csv".to_string(), reg));
    }
    if grid.d == 1 {
        let probe = CommutatorProbe {
            eps: cfg.probe.eps.clone(),
            delta_x: cfg.probe.delta_x.clone(),
        };
        match commutator_decay(&flow.m, &probe) {
            Ok(table) => {
                let mut out = String::from("eps,delta_x,norm\n");
                for (i, e) in table.eps.iter().enumerate() {
                    for (j, dx) in table.delta_x.iter().enumerate() {
                        let _ = writeln!(out, "{},{},{}", fmt_f64(*e), fmt_f64(*dx), fmt_f64(table.norms[i][j]));
                    }
                }
                files.push(("sweep_commutator.csv".to_string(), out));
            }
            Err(Error::Probe(msg)) => eprintln!("commutator sweep skipped: {msg}"),
            Err(e) => return Err(e),
        }
    }
    let avg = velocity_average(&value.u, |_| 1.0);
    let omega = translation_modulus(&avg, &cfg.probe.translation)?;
    let mut out = String::from("h,omega\n");
    for (h, w) in cfg.probe.translation.iter().zip(&omega) {
        let _ = writeln!(out, "{},{}", fmt_f64(*h), fmt_f64(*w));
    }
    files.push(("sweep_translation.csv".to_string(), out));
    Ok(files)
}

fn solve_and_write(cfg: &RunConfig, command: &str, sweep: bool) -> Result<RunSummary> {
    let m0 = build_initial_density(&cfg.grid, &cfg.model.m0, MAX_OUTSIDE_MASS)?;
    let sol: Solution = pdhg_solve(&cfg.model, &cfg.grid, &m0, &cfg.solver)?;
    let mut diags = core_diagnostics(&sol.flow, &sol.value, &m0, cfg)?;
    let last = sol.record.last();
    diags.push(DiagnosticRow::new("iterations", last.map_or(0.0, |r| r.iter as f64)));
    diags.push(DiagnosticRow::new("converged", if sol.record.converged { 1.0 } else { 0.0 }));
    diags.push(DiagnosticRow::new("feasibility", last.map_or(f64::NAN, |r| r.feas)));
    diags.push(DiagnosticRow::new("op_norm", sol.record.op_norm));
    diags.push(DiagnosticRow::new("tau", sol.record.tau));
    diags.push(DiagnosticRow::new("sigma", sol.record.sigma));
    let mut extra = Vec::new();
    if sweep {
        diags.extend(probe_diagnostics(&sol.flow, &sol.value, cfg)?);
        extra = sweep_tables(&sol.flow, &sol.value, cfg)?;
    }

    let stage = Staging::new(&cfg.output_dir, &cfg.name)?;
    stage.write("manifest.txt", &manifest(cfg, command)?)?;
    stage.write("convergence.csv", &convergence_csv(&sol.record))?;
    write_flow(&stage, &sol.flow)?;
    stage.write("fields_u.csv", &field_csv(&sol.value.u))?;
    stage.write("diagnostics.csv", &diagnostics_csv(&diags))?;
    for (file, content) in &extra {
        stage.write(file, content)?;
    }
    let dir = stage.publish()?;
    Ok(RunSummary {
        dir,
        converged: sol.record.converged,
        diagnostics: diags,
    })
}

/// Solves the configured instance and writes the standard artifacts to
/// `output_dir/name`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    solve_and_write(cfg, "solve", false)
}

/// Like [`run`], plus regularity, commutator and translation ladders.
pub fn sweep(cfg: &RunConfig) -> Result<RunSummary> {
    solve_and_write(cfg, "sweep", true)
}

/// Solves with the brute-force oracle and writes its flow and objective.
pub fn run_oracle(cfg: &RunConfig) -> Result<RunSummary> {
    let m0 = build_initial_density(&cfg.grid, &cfg.model.m0, MAX_OUTSIDE_MASS)?;
    let sol = oracle_solve(&cfg.model, &cfg.grid, &m0, &OracleConfig::default())?;
    let diags = vec![
        DiagnosticRow::new("oracle_objective", sol.objective),
        DiagnosticRow::new("oracle_iterations", sol.iterations as f64),
        DiagnosticRow::new("oracle_decrement", sol.decrement),
        DiagnosticRow::new("mass_drift", mass_drift(&sol.flow)),
    ];
    let stage = Staging::new(&cfg.output_dir, &cfg.name)?;
    stage.write("manifest.txt", &manifest(cfg, "oracle")?)?;
    write_flow(&stage, &sol.flow)?;
    stage.write("diagnostics.csv", &diagnostics_csv(&diags))?;
    let dir = stage.publish()?;
    Ok(RunSummary {
        dir,
        converged: true,
        diagnostics: diags,
    })
}

/// Fields of a finished run directory.
pub struct StoredRun {
    pub config: RunConfig,
    pub flow: FlowState,
    pub u: ScalarField,
}

pub fn load_run(dir: &Path) -> Result<StoredRun> {
    let read = |f: &str| -> Result<String> {
        fs::read_to_string(dir.join(f)).map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.join(f).display())))
    };
    let config = parse_config(&read("manifest.txt")?)?;
    let grid = config.grid;
    let m = read_field_csv(&read("fields_m.csv")?, &grid, TimeLayout::Nodes, "fields_m.csv")?;
    let m_terminal = read_terminal_csv(&read("fields_m_terminal.csv")?, &grid)?;
    let comps = (1..=grid.d)
        .map(|a| {
            let f = format!("fields_w{a}.csv");
            read_field_csv(&read(&f)?, &grid, TimeLayout::Intervals, &f)
        })
        .collect::<Result<Vec<_>>>()?;
    let u = read_field_csv(&read("fields_u.csv")?, &grid, TimeLayout::Nodes, "fields_u.csv")?;
    Ok(StoredRun {
        config,
        flow: FlowState {
            m,
            w: VectorField::from_components(comps)?,
            m_terminal,
        },
        u,
    })
}

/// Recomputes diagnostics from the stored fields of `dir` and writes
/// `verify.csv` next to them.
pub fn verify(dir: &Path) -> Result<RunSummary> {
    let stored = load_run(dir)?;
    let cfg = &stored.config;
    let m0 = build_initial_density(&cfg.grid, &cfg.model.m0, MAX_OUTSIDE_MASS)?;
    let value = recover_value_state(&stored.u, &cfg.model)?;
    let mut diags = core_diagnostics(&stored.flow, &value, &m0, cfg)?;
    diags.extend(probe_diagnostics(&stored.flow, &value, cfg)?);
    let tmp = dir.join(format!(".verify.csv.partial-{}", std::process::id()));
    fs::write(&tmp, diagnostics_csv(&diags))?;
    fs::rename(&tmp, dir.join("verify.csv"))?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        converged: true,
        diagnostics: diags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0, -0.0] {
            let back: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x}");
        }
    }

    #[test]
    fn field_csv_round_trip() {
        for d in [1, 2] {
            let grid = GridSpec::new(d, 3, 4, 2, 1.0, 1.5).unwrap();
            let f = ScalarField::from_fn(grid, TimeLayout::Intervals, |t, x, v| t + x[0] * 0.7 - v[0] / 3.0);
            let text = field_csv(&f);
            assert_eq!(text.lines().count(), 1 + f.values().len());
            let back = read_field_csv(&text, &grid, TimeLayout::Intervals, "f").unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn field_csv_rejects_wrong_grid() {
        let grid = GridSpec::new(1, 3, 4, 2, 1.0, 1.5).unwrap();
        let other = GridSpec::new(1, 3, 4, 2, 1.0, 2.0).unwrap();
        let text = field_csv(&ScalarField::zeros(grid, TimeLayout::Nodes));
        assert!(read_field_csv(&text, &other, TimeLayout::Nodes, "f").is_err());
        assert!(read_field_csv(&text, &grid, TimeLayout::Intervals, "f").is_err());
    }

    #[test]
    fn diagnostics_round_trip() {
        let rows = vec![
            DiagnosticRow::new("a", 1.0 / 7.0),
            DiagnosticRow::with("b", 0.25, -3e-9),
            DiagnosticRow::new("c", f64::NAN),
        ];
        let back = read_diagnostics_csv(&diagnostics_csv(&rows)).unwrap();
        assert_eq!(back[..2], rows[..2]);
        assert!(back[2].value.is_nan());
    }

    #[test]
    fn staging_cleans_up_unless_published() {
        let root = tempfile::tempdir().unwrap();
        {
            let stage = Staging::new(root.path(), "r").unwrap();
            stage.write("x.csv", "1").unwrap();
        }
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
        let stage = Staging::new(root.path(), "r").unwrap();
        stage.write("x.csv", "1").unwrap();
        stage.publish().unwrap();
        let stage = Staging::new(root.path(), "r").unwrap();
        stage.write("y.csv", "2").unwrap();
        let dir = stage.publish().unwrap();
        assert!(dir.join("y.csv").exists() && !dir.join("x.csv").exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
    }
}
