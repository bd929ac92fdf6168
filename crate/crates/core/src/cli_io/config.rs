//! Line-based `key = value` configuration.
//!
//! Blank lines and `#` comments are ignored. Values are numbers (decimal
//! with optional exponent), integers, booleans, bare words, or
//! comma-separated number lists. Every key has a default; unknown and
//! repeated keys are rejected.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{Coefficient, InitialDensitySpec, ModelSpec, PositionProfile};
use crate::solver::{Initialization, SolverConfig};

/// Probe ladders and levels used by `verify` and `sweep`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Cutoff time of the regularity probe; `None` means half the horizon.
    pub t0: Option<f64>,
    /// Regularity shift magnitudes in units of `dv`.
    pub delta_factors: Vec<f64>,
    /// Velocity mollifier widths of the commutator probe.
    pub eps: Vec<f64>,
    /// Position mollifier widths of the commutator probe.
    pub delta_x: Vec<f64>,
    /// Quantile of `u` used as the truncation level.
    pub truncation_quantile: f64,
    /// Translations for the velocity-average modulus.
    pub translation: Vec<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            t0: None,
            delta_factors: vec![0.25, 0.5, 1.0, 2.0],
            eps: vec![0.1, 0.2, 0.4],
            delta_x: vec![0.025, 0.05, 0.1],
            truncation_quantile: 0.5,
            translation: vec![0.0625, 0.125, 0.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: PathBuf,
    /// Seed for randomized initialization and oracle restarts.
    pub seed: u64,
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub solver: SolverConfig,
    pub probe: ProbeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
            grid: GridSpec::new(1, 16, 16, 16, 1.0, 2.0).expect("default grid"),
            model: ModelSpec::default(),
            solver: SolverConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

/// Every key in output order.
pub const KEYS: &[&str] = &[
    "run.name",
    "run.output_dir",
    "run.seed",
    "grid.d",
    "grid.nx",
    "grid.nv",
    "grid.nt",
    "grid.horizon",
    "grid.v_max",
    "model.q",
    "model.s",
    "model.r",
    "model.c_f",
    "model.c_g",
    "model.c_h",
    "model.big_c_h",
    "m0.x_profile",
    "m0.x_amplitude",
    "m0.x_center",
    "m0.x_centers",
    "m0.x_width",
    "m0.v_center",
    "m0.v_sigma",
    "solver.tau",
    "solver.sigma",
    "solver.step_ratio",
    "solver.theta",
    "solver.max_iter",
    "solver.tol_gap",
    "solver.tol_feas",
    "solver.prox_tol",
    "solver.record_every",
    "solver.record_time",
    "solver.init",
    "probe.t0",
    "probe.delta_factors",
    "probe.eps",
    "probe.delta_x",
    "probe.truncation_quantile",
    "probe.translation",
];

/// Raw settings gathered before the grid is rebuilt.
struct Pending {
    d: usize,
    nx: usize,
    nv: usize,
    nt: usize,
    horizon: f64,
    v_max: f64,
    profile: String,
    amplitude: Option<f64>,
    center: Option<f64>,
    centers: Option<Vec<f64>>,
    width: Option<f64>,
}

struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

impl Token<'_> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    fn number(&self) -> Result<f64> {
        if !is_decimal(self.text) {
            return Err(self.fail(format!("expected a decimal number, found `{}`", self.text)));
        }
        self.text
            .parse()
            .map_err(|_| self.fail(format!("number `{}` out of range", self.text)))
    }

    fn integer(&self) -> Result<usize> {
        self.text
            .parse()
            .map_err(|_| self.fail(format!("expected a non-negative integer, found `{}`", self.text)))
    }

    fn boolean(&self) -> Result<bool> {
        match self.text {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(self.fail(format!("expected true or false, found `{other}`"))),
        }
    }

    fn list(&self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        let mut offset = 0;
        for part in self.text.split(',') {
            let lead = part.len() - part.trim_start().len();
            let item = Token {
                text: part.trim(),
                line: self.line,
                column: self.column + offset + lead,
            };
            out.push(item.number()?);
            offset += part.len() + 1;
        }
        Ok(out)
    }

    fn auto_or_number(&self) -> Result<Option<f64>> {
        if self.text == "auto" {
            Ok(None)
        } else {
            self.number().map(Some)
        }
    }
}

/// Optional sign, digits with at most one point, optional signed exponent.
fn is_decimal(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let mut digits = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
        digits += 1;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
            digits += 1;
        }
    }
    if digits == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return false;
        }
    }
    i == b.len()
}

fn range(key: &str, reason: impl Into<String>) -> Error {
    Error::Range {
        key: key.into(),
        reason: reason.into(),
    }
}

fn coefficient(tok: &Token) -> Result<Coefficient> {
    let vals = tok.list()?;
    Ok(if vals.len() == 1 {
        Coefficient::Constant(vals[0])
    } else {
        Coefficient::PerCell(vals)
    })
}

fn initialization(tok: &Token) -> Result<Initialization> {
    match tok.text {
        "free_streaming" => Ok(Initialization::FreeStreaming),
        "constant" => Ok(Initialization::Constant),
        t if t.starts_with("random:") => {
            let seed = Token {
                text: &t[7..],
                line: tok.line,
                column: tok.column + 7,
            };
            seed.text
                .parse()
                .map(Initialization::Random)
                .map_err(|_| seed.fail(format!("expected an unsigned seed, found `{}`", seed.text)))
        }
        other => Err(tok.fail(format!(
            "expected free_streaming, constant or random:<seed>, found `{other}`"
        ))),
    }
}

fn apply(cfg: &mut RunConfig, p: &mut Pending, key: &str, tok: &Token) -> Result<()> {
    match key {
        "run.name" => {
            if tok.text.is_empty() || tok.text.contains(['/', '\\']) {
                return Err(range(key, "must be a non-empty name without path separators"));
            }
            cfg.name = tok.text.to_string();
        }
        "run.output_dir" => cfg.output_dir = PathBuf::from(tok.text),
        "run.seed" => {
            cfg.seed = tok
                .text
                .parse()
                .map_err(|_| tok.fail(format!("expected an unsigned seed, found `{}`", tok.text)))?
        }
        "grid.d" => p.d = tok.integer()?,
        "grid.nx" => p.nx = tok.integer()?,
        "grid.nv" => p.nv = tok.integer()?,
        "grid.nt" => p.nt = tok.integer()?,
        "grid.horizon" => p.horizon = tok.number()?,
        "grid.v_max" => p.v_max = tok.number()?,
        "model.q" => cfg.model.q = tok.number()?,
        "model.s" => cfg.model.s = tok.number()?,
        "model.r" => cfg.model.r = tok.number()?,
        "model.c_f" => cfg.model.c_f = coefficient(tok)?,
        "model.c_g" => cfg.model.c_g = coefficient(tok)?,
        "model.c_h" => cfg.model.c_h = tok.number()?,
        "model.big_c_h" => cfg.model.big_c_h = tok.number()?,
        "m0.x_profile" => match tok.text {
            "uniform" | "cosine" | "bumps" => p.profile = tok.text.to_string(),
            other => return Err(tok.fail(format!("expected uniform, cosine or bumps, found `{other}`"))),
        },
        "m0.x_amplitude" => p.amplitude = Some(tok.number()?),
        "m0.x_center" => p.center = Some(tok.number()?),
        "m0.x_centers" => p.centers = Some(tok.list()?),
        "m0.x_width" => p.width = Some(tok.number()?),
        "m0.v_center" => cfg.model.m0.v_center = tok.number()?,
        "m0.v_sigma" => cfg.model.m0.v_sigma = tok.number()?,
        "solver.tau" => cfg.solver.tau = tok.auto_or_number()?,
        "solver.sigma" => cfg.solver.sigma = tok.auto_or_number()?,
        "solver.step_ratio" => cfg.solver.step_ratio = tok.number()?,
        "solver.theta" => cfg.solver.theta = tok.number()?,
        "solver.max_iter" => cfg.solver.max_iter = tok.integer()?,
        "solver.tol_gap" => cfg.solver.tol_gap = tok.number()?,
        "solver.tol_feas" => cfg.solver.tol_feas = tok.number()?,
        "solver.prox_tol" => cfg.solver.prox_tol = tok.number()?,
        "solver.record_every" => cfg.solver.record_every = tok.integer()?,
        "solver.record_time" => cfg.solver.record_time = tok.boolean()?,
        "solver.init" => cfg.solver.init = initialization(tok)?,
        "probe.t0" => cfg.probe.t0 = tok.auto_or_number()?,
        "probe.delta_factors" => cfg.probe.delta_factors = tok.list()?,
        "probe.eps" => cfg.probe.eps = tok.list()?,
        "probe.delta_x" => cfg.probe.delta_x = tok.list()?,
        "probe.truncation_quantile" => cfg.probe.truncation_quantile = tok.number()?,
        "probe.translation" => cfg.probe.translation = tok.list()?,
        _ => unreachable!("key table and match arms disagree"),
    }
    Ok(())
}

fn build_profile(p: &Pending) -> Result<PositionProfile> {
    let misplaced = |key: &str| range(key, format!("does not apply to m0.x_profile = {}", p.profile));
    match p.profile.as_str() {
        "uniform" => {
            for (key, set) in [
                ("m0.x_amplitude", p.amplitude.is_some()),
                ("m0.x_center", p.center.is_some()),
                ("m0.x_centers", p.centers.is_some()),
                ("m0.x_width", p.width.is_some()),
            ] {
                if set {
                    return Err(misplaced(key));
                }
            }
            Ok(PositionProfile::Uniform)
        }
        "cosine" => {
            if p.centers.is_some() {
                return Err(misplaced("m0.x_centers"));
            }
            if p.width.is_some() {
                return Err(misplaced("m0.x_width"));
            }
            Ok(PositionProfile::Cosine {
                amplitude: p.amplitude.unwrap_or(0.5),
                center: p.center.unwrap_or(0.5),
            })
        }
        _ => {
            if p.amplitude.is_some() {
                return Err(misplaced("m0.x_amplitude"));
            }
            if p.center.is_some() {
                return Err(misplaced("m0.x_center"));
            }
            Ok(PositionProfile::Bumps {
                centers: p.centers.clone().unwrap_or_else(|| vec![0.5]),
                width: p.width.unwrap_or(0.25),
            })
        }
    }
}

fn validate_probe(probe: &ProbeConfig, grid: &GridSpec) -> Result<()> {
    if let Some(t0) = probe.t0 {
        if !(t0 > 0.0 && t0 < grid.horizon) {
            return Err(range("probe.t0", format!("must lie in (0, {})", grid.horizon)));
        }
    }
    let positive = |key: &str, v: &[f64]| {
        if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            Err(range(key, "must be a non-empty list of positive numbers"))
        } else {
            Ok(())
        }
    };
    positive("probe.delta_factors", &probe.delta_factors)?;
    positive("probe.eps", &probe.eps)?;
    positive("probe.delta_x", &probe.delta_x)?;
    positive("probe.translation", &probe.translation)?;
    if !(0.0..=1.0).contains(&probe.truncation_quantile) {
        return Err(range("probe.truncation_quantile", "must lie in [0, 1]"));
    }
    Ok(())
}

/// Parses a configuration file, applying defaults for absent keys.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let g = cfg.grid;
    let mut p = Pending {
        d: g.d,
        nx: g.nx,
        nv: g.nv,
        nt: g.nt,
        horizon: g.horizon,
        v_max: g.v_max,
        profile: "cosine".into(),
        amplitude: None,
        center: None,
        centers: None,
        width: None,
    };
    let mut seen: Vec<&str> = Vec::new();
    for (li, raw) in text.lines().enumerate() {
        let line = li + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let key_col = content.len() - content.trim_start().len() + 1;
        let Some(eq) = content.find('=') else {
            return Err(Error::Parse {
                line,
                column: key_col,
                message: "expected `key = value`".into(),
            });
        };
        let key = content[..eq].trim();
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            return Err(Error::Parse {
                line,
                column: key_col,
                message: format!("unknown key `{key}`"),
            });
        };
        if seen.contains(&known) {
            return Err(Error::Parse {
                line,
                column: key_col,
                message: format!("key `{key}` given twice"),
            });
        }
        seen.push(known);
        let rest = &content[eq + 1..];
        let lead = rest.len() - rest.trim_start().len();
        let tok = Token {
            text: rest.trim(),
            line,
            column: eq + 2 + lead,
        };
        if tok.text.is_empty() {
            return Err(tok.fail(format!("missing value for `{key}`")));
        }
        apply(&mut cfg, &mut p, known, &tok)?;
    }

    if p.d != 1 && p.d != 2 {
        return Err(range("grid.d", "must be 1 or 2"));
    }
    for (key, n) in [("grid.nx", p.nx), ("grid.nv", p.nv), ("grid.nt", p.nt)] {
        if n < 2 {
            return Err(range(key, "must be at least 2"));
        }
    }
    if !(p.horizon > 0.0) {
        return Err(range("grid.horizon", "must be positive"));
    }
    if !(p.v_max > 0.0) {
        return Err(range("grid.v_max", "must be positive"));
    }
    cfg.grid = GridSpec::new(p.d, p.nx, p.nv, p.nt, p.horizon, p.v_max)?;
    cfg.model.m0 = InitialDensitySpec {
        position: build_profile(&p)?,
        ..cfg.model.m0
    };
    let cells = cfg.grid.slice_len();
    for (key, c) in [("model.c_f", &cfg.model.c_f), ("model.c_g", &cfg.model.c_g)] {
        if let Coefficient::PerCell(v) = c {
            if v.len() != cells {
                return Err(range(key, format!("needs 1 or {cells} values, got {}", v.len())));
            }
        }
    }
    cfg.model.validate()?;
    cfg.solver.validate()?;
    validate_probe(&cfg.probe, &cfg.grid)?;
    Ok(cfg)
}

fn num(x: f64) -> String {
    // shortest representation that parses back to the same bits
    let s = format!("{x:?}");
    if s.contains('e') && !s.contains('.') {
        s.replacen('e', ".0e", 1)
    } else {
        s
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", ")
}

fn coefficient_text(c: &Coefficient) -> String {
    match c {
        Coefficient::Constant(x) => num(*x),
        Coefficient::PerCell(v) => list(v),
    }
}

/// Writes every key, defaults included. `parse_config` reads it back
/// to an identical value.
pub fn config_to_text(cfg: &RunConfig) -> Result<String> {
    let g = &cfg.grid;
    let m = &cfg.model;
    let s = &cfg.solver;
    let pr = &cfg.probe;
    let auto = |o: Option<f64>| o.map_or_else(|| "auto".to_string(), num);
    let mut lines: Vec<(&str, String)> = vec![
        ("run.name", cfg.name.clone()),
        ("run.output_dir", cfg.output_dir.display().to_string()),
        ("run.seed", cfg.seed.to_string()),
        ("grid.d", g.d.to_string()),
        ("grid.nx", g.nx.to_string()),
        ("grid.nv", g.nv.to_string()),
        ("grid.nt", g.nt.to_string()),
        ("grid.horizon", num(g.horizon)),
        ("grid.v_max", num(g.v_max)),
        ("model.q", num(m.q)),
        ("model.s", num(m.s)),
        ("model.r", num(m.r)),
        ("model.c_f", coefficient_text(&m.c_f)),
        ("model.c_g", coefficient_text(&m.c_g)),
        ("model.c_h", num(m.c_h)),
        ("model.big_c_h", num(m.big_c_h)),
    ];
    match &m.m0.position {
        PositionProfile::Uniform => lines.push(("m0.x_profile", "uniform".into())),
        PositionProfile::Cosine { amplitude, center } => {
            lines.push(("m0.x_profile", "cosine".into()));
            lines.push(("m0.x_amplitude", num(*amplitude)));
            lines.push(("m0.x_center", num(*center)));
        }
        PositionProfile::Bumps { centers, width } => {
            lines.push(("m0.x_profile", "bumps".into()));
            lines.push(("m0.x_centers", list(centers)));
            lines.push(("m0.x_width", num(*width)));
        }
    }
    let init = match &s.init {
        Initialization::FreeStreaming => "free_streaming".to_string(),
        Initialization::Constant => "constant".to_string(),
        Initialization::Random(seed) => format!("random:{seed}"),
        Initialization::Warm(_) => {
            return Err(Error::Config("warm starts cannot be written to a config file".into()));
        }
    };
    lines.extend([
        ("m0.v_center", num(m.m0.v_center)),
        ("m0.v_sigma", num(m.m0.v_sigma)),
        ("solver.tau", auto(s.tau)),
        ("solver.sigma", auto(s.sigma)),
        ("solver.step_ratio", num(s.step_ratio)),
        ("solver.theta", num(s.theta)),
        ("solver.max_iter", s.max_iter.to_string()),
        ("solver.tol_gap", num(s.tol_gap)),
        ("solver.tol_feas", num(s.tol_feas)),
        ("solver.prox_tol", num(s.prox_tol)),
        ("solver.record_every", s.record_every.to_string()),
        ("solver.record_time", s.record_time.to_string()),
        ("solver.init", init),
        ("probe.t0", auto(pr.t0)),
        ("probe.delta_factors", list(&pr.delta_factors)),
        ("probe.eps", list(&pr.eps)),
        ("probe.delta_x", list(&pr.delta_x)),
        ("probe.truncation_quantile", num(pr.truncation_quantile)),
        ("probe.translation", list(&pr.translation)),
    ]);
    let mut out = String::new();
    for (k, v) in lines {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    }
    Ok(out)
}
