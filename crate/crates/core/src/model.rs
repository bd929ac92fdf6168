//! Problem data: Hamiltonian and Lagrangian, the power-law couplings with
//! their conjugates, and the initial density.

use crate::error::{Error, Result};
use crate::grid::{integrate_slice, GridSpec, ScalarField, TimeLayout};
use statrs::function::erf::erfc;

/// Value standing in for `+inf` in objective sums; any occurrence in a final
/// objective marks the point infeasible.
pub const INFEASIBLE: f64 = f64::INFINITY;

/// Coupling coefficient, constant or given per phase-space cell of a slice.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    PerCell(Vec<f64>),
}

impl Coefficient {
    pub fn at(&self, cell: usize) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::PerCell(v) => v[cell],
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coefficient::Constant(c) => *c == 0.0,
            Coefficient::PerCell(v) => v.iter().all(|c| *c == 0.0),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Coefficient::Constant(c) => c.is_finite() && *c >= 0.0,
            Coefficient::PerCell(v) => v.iter().all(|c| c.is_finite() && *c >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Range {
                key: name.into(),
                reason: "coefficients must be finite and non-negative".into(),
            })
        }
    }
}

/// `Phi(m) = c m^p / p` on `m >= 0`, `+inf` for `m < 0`.
///
/// Shared by the running coupling (exponent `q`) and the terminal one (`s`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub exponent: f64,
}

impl PowerLaw {
    pub fn value(&self, m: f64, c: f64) -> f64 {
        if m < 0.0 {
            return INFEASIBLE;
        }
        c * m.powf(self.exponent) / self.exponent
    }

    pub fn derivative(&self, m: f64, c: f64) -> f64 {
        c * m.max(0.0).powf(self.exponent - 1.0)
    }

    /// Holder conjugate exponent `p / (p - 1)`.
    pub fn conjugate_exponent(&self) -> f64 {
        self.exponent / (self.exponent - 1.0)
    }

    /// `sup_{m >= 0} { beta m - Phi(m) }`.
    pub fn conjugate(&self, beta: f64, c: f64) -> f64 {
        if beta <= 0.0 {
            return 0.0;
        }
        if c == 0.0 {
            return INFEASIBLE;
        }
        let pc = self.conjugate_exponent();
        c.powf(-1.0 / (self.exponent - 1.0)) * beta.powf(pc) / pc
    }

    /// Derivative of the conjugate: the maximizing `m`.
    pub fn conjugate_derivative(&self, beta: f64, c: f64) -> f64 {
        if beta <= 0.0 {
            return 0.0;
        }
        if c == 0.0 {
            return INFEASIBLE;
        }
        (beta / c).powf(1.0 / (self.exponent - 1.0))
    }
}

/// Shape of the initial density along each position axis.
#[derive(Debug, Clone, PartialEq)]
pub enum PositionProfile {
    Uniform,
    /// `1 + amplitude * cos(2 pi (x - center))`, requires `amplitude < 1`.
    Cosine { amplitude: f64, center: f64 },
    /// Sum of smooth compactly supported bumps of half-width `width`.
    Bumps { centers: Vec<f64>, width: f64 },
}

impl PositionProfile {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            PositionProfile::Uniform => 1.0,
            PositionProfile::Cosine { amplitude, center } => {
                1.0 + amplitude * (2.0 * std::f64::consts::PI * (x - center)).cos()
            }
            PositionProfile::Bumps { centers, width } => centers
                .iter()
                .map(|c| {
                    let mut dist = (x - c).rem_euclid(1.0);
                    if dist > 0.5 {
                        dist = 1.0 - dist;
                    }
                    let r = dist / width;
                    if r < 1.0 {
                        (-1.0 / (1.0 - r * r)).exp()
                    } else {
                        0.0
                    }
                })
                .sum(),
        }
    }
}

/// Initial density description: a position profile times a Gaussian in
/// velocity, applied per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensitySpec {
    pub position: PositionProfile,
    pub v_center: f64,
    pub v_sigma: f64,
}

impl Default for InitialDensitySpec {
    fn default() -> Self {
        Self {
            position: PositionProfile::Cosine {
                amplitude: 0.5,
                center: 0.5,
            },
            v_center: 0.0,
            v_sigma: 1.0 / 3.0,
        }
    }
}

impl InitialDensitySpec {
    /// Unnormalized density at a phase-space point.
    pub fn eval(&self, d: usize, x: [f64; 2], v: [f64; 2]) -> f64 {
        (0..d)
            .map(|a| {
                let z = (v[a] - self.v_center) / self.v_sigma;
                self.position.eval(x[a]) * (-0.5 * z * z).exp()
            })
            .product()
    }

    /// Gaussian probability mass falling outside `[-v_max, v_max]^d`.
    pub fn mass_outside_box(&self, d: usize, v_max: f64) -> f64 {
        let s = self.v_sigma * std::f64::consts::SQRT_2;
        let tail = 0.5 * erfc((v_max + self.v_center) / s) + 0.5 * erfc((v_max - self.v_center) / s);
        1.0 - (1.0 - tail).powi(d as i32)
    }

    fn validate(&self) -> Result<()> {
        if !(self.v_sigma.is_finite() && self.v_sigma > 0.0) {
            return Err(Error::Range {
                key: "m0.v_sigma".into(),
                reason: "width must be positive".into(),
            });
        }
        match &self.position {
            PositionProfile::Uniform => {}
            PositionProfile::Cosine { amplitude, .. } => {
                if !(0.0..1.0).contains(amplitude) {
                    return Err(Error::Range {
                        key: "m0.x_amplitude".into(),
                        reason: "amplitude must lie in [0, 1)".into(),
                    });
                }
            }
            PositionProfile::Bumps { centers, width } => {
                if centers.is_empty() || !(*width > 0.0 && *width <= 0.5) {
                    return Err(Error::Range {
                        key: "m0.x_width".into(),
                        reason: "need at least one center and a width in (0, 0.5]".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// The full data set of one kinetic MFG instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Exponent of the running coupling `F`.
    pub q: f64,
    /// Exponent of the terminal coupling `G`.
    pub s: f64,
    /// Exponent of the Hamiltonian.
    pub r: f64,
    pub c_f: Coefficient,
    pub c_g: Coefficient,
    pub c_h: f64,
    /// Additive constant: `H(p) = c_h |p|^r / r - big_c_h`.
    pub big_c_h: f64,
    pub m0: InitialDensitySpec,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            q: 2.0,
            s: 2.0,
            r: 2.0,
            c_f: Coefficient::Constant(1.0),
            c_g: Coefficient::Constant(1.0),
            c_h: 1.0,
            big_c_h: 0.0,
            m0: InitialDensitySpec::default(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let range = |key: &str, reason: &str| Error::Range {
            key: key.into(),
            reason: reason.into(),
        };
        if !(self.q > 1.0 && self.q.is_finite()) {
            return Err(range("model.q", "must exceed 1"));
        }
        if !(self.s > 1.0 && self.s <= self.q) {
            return Err(range("model.s", "must satisfy 1 < s <= q"));
        }
        if !(self.r > 1.0 && self.r.is_finite()) {
            return Err(range("model.r", "must exceed 1"));
        }
        if !(self.c_h > 0.0 && self.c_h.is_finite()) {
            return Err(range("model.c_h", "must be positive"));
        }
        if !(self.big_c_h >= 0.0 && self.big_c_h.is_finite()) {
            return Err(range("model.big_c_h", "must be non-negative"));
        }
        self.c_f.validate("model.c_f")?;
        self.c_g.validate("model.c_g")?;
        self.m0.validate()
    }

    pub fn running(&self) -> PowerLaw {
        PowerLaw { exponent: self.q }
    }

    pub fn terminal(&self) -> PowerLaw {
        PowerLaw { exponent: self.s }
    }

    pub fn f_value(&self, m: f64, cell: usize) -> f64 {
        self.running().value(m, self.c_f.at(cell))
    }

    /// `f = dF/dm`.
    pub fn f_derivative(&self, m: f64, cell: usize) -> f64 {
        self.running().derivative(m, self.c_f.at(cell))
    }

    pub fn f_star(&self, beta: f64, cell: usize) -> f64 {
        self.running().conjugate(beta, self.c_f.at(cell))
    }

    pub fn g_value(&self, m: f64, cell: usize) -> f64 {
        self.terminal().value(m, self.c_g.at(cell))
    }

    pub fn g_derivative(&self, m: f64, cell: usize) -> f64 {
        self.terminal().derivative(m, self.c_g.at(cell))
    }

    pub fn g_star(&self, u: f64, cell: usize) -> f64 {
        self.terminal().conjugate(u, self.c_g.at(cell))
    }

    pub fn h_value(&self, p: &[f64]) -> f64 {
        self.c_h * norm(p).powf(self.r) / self.r - self.big_c_h
    }

    /// `D_p H(p) = c_h |p|^(r-2) p`, written into `out`.
    pub fn h_gradient(&self, p: &[f64], out: &mut [f64]) {
        let n = norm(p);
        let scale = if n == 0.0 { 0.0 } else { self.c_h * n.powf(self.r - 2.0) };
        for (o, pi) in out.iter_mut().zip(p) {
            *o = scale * pi;
        }
    }

    /// Conjugate exponent `r' = r / (r - 1)`.
    pub fn r_conjugate(&self) -> f64 {
        self.r / (self.r - 1.0)
    }

    /// `L(alpha) = sup_p { alpha . p - H(p) }`.
    pub fn l_value(&self, alpha: &[f64]) -> f64 {
        let rp = self.r_conjugate();
        self.c_h.powf(-1.0 / (self.r - 1.0)) * norm(alpha).powf(rp) / rp + self.big_c_h
    }

    /// Perspective `m L(-w/m)` with the conventions at `m = 0`.
    pub fn perspective(&self, m: f64, w: &[f64]) -> f64 {
        if m < 0.0 {
            return INFEASIBLE;
        }
        if m == 0.0 {
            return if w.iter().all(|x| *x == 0.0) { 0.0 } else { INFEASIBLE };
        }
        let rp = self.r_conjugate();
        let wn = norm(w);
        self.c_h.powf(-1.0 / (self.r - 1.0)) * wn.powf(rp) * m.powf(1.0 - rp) / rp + self.big_c_h * m
    }

    /// Samples the growth bounds of the Hamiltonian and both couplings.
    pub fn check_growth_bounds(&self, p_samples: &[Vec<f64>], m_samples: &[f64]) -> GrowthReport {
        let c_h_needed = self.c_h.max(1.0 / self.c_h);
        let tol = 1e-12;
        let mut report = GrowthReport {
            samples: p_samples.len() + m_samples.len(),
            c_hamiltonian: c_h_needed,
            hamiltonian_holds: true,
            hamiltonian_lower_tight: 0,
            c_running: f64::NAN,
            running_holds: true,
            c_terminal: f64::NAN,
            terminal_holds: true,
        };
        for p in p_samples {
            let pr = norm(p).powf(self.r);
            let h = self.h_value(p);
            let lo = pr / (c_h_needed * self.r) - self.big_c_h;
            let hi = c_h_needed * pr / self.r + self.big_c_h;
            let scale = tol * (1.0 + pr);
            if h < lo - scale || h > hi + scale {
                report.hamiltonian_holds = false;
            }
            if (h - lo).abs() <= scale {
                report.hamiltonian_lower_tight += 1;
            }
        }
        // Pure power laws need C_F = C_G = 0; per-cell coefficients take the extreme cell.
        let (cf_min, cf_max) = coefficient_range(&self.c_f);
        let (cg_min, cg_max) = coefficient_range(&self.c_g);
        report.c_running = if cf_min > 0.0 { cf_max.max(1.0 / cf_min) } else { INFEASIBLE };
        report.c_terminal = if cg_min > 0.0 {
            (cg_max / self.s).max(self.s / cg_min)
        } else {
            INFEASIBLE
        };
        for &m in m_samples {
            let mq = m.powf(self.q);
            let ms = m.powf(self.s);
            for f in [self.running().value(m, cf_min), self.running().value(m, cf_max)] {
                let lo = mq / (report.c_running * self.q);
                let hi = report.c_running * mq / self.q;
                if f < lo - tol * (1.0 + mq) || f > hi + tol * (1.0 + mq) {
                    report.running_holds = false;
                }
            }
            for g in [self.terminal().value(m, cg_min), self.terminal().value(m, cg_max)] {
                let lo = ms / report.c_terminal;
                let hi = report.c_terminal * ms;
                if g < lo - tol * (1.0 + ms) || g > hi + tol * (1.0 + ms) {
                    report.terminal_holds = false;
                }
            }
        }
        report
    }
}

fn coefficient_range(c: &Coefficient) -> (f64, f64) {
    match c {
        Coefficient::Constant(v) => (*v, *v),
        Coefficient::PerCell(v) => v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x))),
    }
}

/// Outcome of [`ModelSpec::check_growth_bounds`]; `c_*` are the tightest
/// constants for which the two-sided bounds hold (`inf` when none does).
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub samples: usize,
    pub c_hamiltonian: f64,
    pub hamiltonian_holds: bool,
    pub hamiltonian_lower_tight: usize,
    pub c_running: f64,
    pub running_holds: bool,
    pub c_terminal: f64,
    pub terminal_holds: bool,
}

impl GrowthReport {
    pub fn all_hold(&self) -> bool {
        self.hamiltonian_holds && self.running_holds && self.terminal_holds
    }
}

/// Numerical conjugate `sup_{x in [lo, hi]} { y x - phi(x) }` on a geometric
/// grid followed by golden-section refinement around the best sample.
///
/// `depth` is the number of geometric levels per decade-ish side of the grid.
pub fn fenchel_conjugate_numeric(
    phi: impl Fn(f64) -> f64,
    y: f64,
    lo: f64,
    hi: f64,
    depth: usize,
) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::Model(format!("empty search box [{lo}, {hi}]")));
    }
    let mut pts = geometric_grid(lo, hi, depth.max(8));
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    let obj = |x: f64| -> Result<f64> {
        let v = phi(x);
        if !v.is_finite() {
            return Err(Error::Model(format!("non-finite sample phi({x}) = {v}")));
        }
        Ok(y * x - v)
    };
    let mut vals = Vec::with_capacity(pts.len());
    for &x in &pts {
        vals.push(obj(x)?);
    }
    let best = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut a = pts[best.saturating_sub(1)];
    let mut b = pts[(best + 1).min(pts.len() - 1)];
    let mut top = vals[best];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (obj(c)?, obj(d)?);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = obj(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = obj(d)?;
        }
        top = top.max(fc).max(fd);
    }
    Ok(top.max(obj(a)?).max(obj(b)?))
}

fn geometric_grid(lo: f64, hi: f64, depth: usize) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    let side = |from: f64, to: f64, pts: &mut Vec<f64>| {
        // points `from + (to - from) * ratio^-j`
        let span = to - from;
        if span <= 0.0 {
            return;
        }
        let levels = 16 * depth;
        for j in 0..=levels {
            let t = 2f64.powf(-(j as f64) / depth as f64 * 3.0);
            pts.push(from + span * t);
        }
    };
    if lo < 0.0 && hi > 0.0 {
        pts.push(0.0);
        let mut neg = Vec::new();
        side(0.0, -lo, &mut neg);
        pts.extend(neg.into_iter().map(|x| -x));
        side(0.0, hi, &mut pts);
    } else {
        side(lo, hi, &mut pts);
        // also refine toward the upper end
        let mut rev = Vec::new();
        side(0.0, hi - lo, &mut rev);
        pts.extend(rev.into_iter().map(|x| hi - x));
    }
    pts.retain(|x| *x >= lo && *x <= hi);
    pts
}

/// Normalized initial density on slice 0 of a node field.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensity {
    pub m0: ScalarField,
    /// Factor the raw samples were divided by.
    pub normalization: f64,
    pub spec: InitialDensitySpec,
}

impl InitialDensity {
    pub fn slice(&self) -> &[f64] {
        self.m0.slice(0)
    }
}

/// Samples `m0_spec` on the grid and normalizes it to unit mass.
pub fn build_initial_density(grid: &GridSpec, spec: &InitialDensitySpec, max_outside_mass: f64) -> Result<InitialDensity> {
    spec.validate()?;
    let outside = spec.mass_outside_box(grid.d, grid.v_max);
    if outside >= max_outside_mass {
        return Err(Error::Config(format!(
            "velocity box truncates {outside:.3e} of the initial Gaussian mass (limit {max_outside_mass:.0e}); raise grid.v_max"
        )));
    }
    let mut m0 = ScalarField::zeros(*grid, TimeLayout::Nodes);
    let (nxd, nvd) = (grid.x_cells(), grid.v_cells());
    for ix in 0..nxd {
        let x = grid.position(ix);
        for iv in 0..nvd {
            let i = m0.index(0, ix, iv);
            m0.values_mut()[i] = spec.eval(grid.d, x, grid.velocity(iv));
        }
    }
    let mass = integrate_slice(&m0, 0)?;
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Config("initial density has no mass on this grid".into()));
    }
    for v in m0.slice_mut(0) {
        *v /= mass;
    }
    Ok(InitialDensity {
        m0,
        normalization: mass,
        spec: spec.clone(),
    })
}

/// Default truncation allowance for the initial Gaussian's mass outside the box.
pub const MAX_OUTSIDE_MASS: f64 = 1e-8;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad() -> ModelSpec {
        ModelSpec::default()
    }

    #[test]
    fn power_law_values() {
        let m = quad();
        assert_eq!(m.f_value(3.0, 0), 4.5);
        assert_eq!(m.f_derivative(3.0, 0), 3.0);
        assert_eq!(m.f_value(0.0, 0), 0.0);
        assert_eq!(m.f_derivative(0.0, 0), 0.0);
        assert_eq!(m.f_value(-1.0, 0), INFEASIBLE);
        assert_eq!(m.g_value(1.0, 0), 0.5);
        assert_eq!(m.g_derivative(1.0, 0), 1.0);
    }

    #[test]
    fn quadratic_conjugates() {
        let m = quad();
        assert_eq!(m.f_star(2.0, 0), 2.0);
        assert_eq!(m.f_star(-5.0, 0), 0.0);
        assert_eq!(m.g_star(-0.1, 0), 0.0);
    }

    #[test]
    fn conjugates_match_numeric_sup() {
        let law = PowerLaw { exponent: 3.0 };
        let numeric = fenchel_conjugate_numeric(|m| law.value(m, 2.0), 1.0, 0.0, 10.0, 16).unwrap();
        assert!((numeric - law.conjugate(1.0, 2.0)).abs() <= 1e-6);

        let law = PowerLaw { exponent: 2.0 };
        let numeric = fenchel_conjugate_numeric(|m| law.value(m, 0.5), 1.0, 0.0, 10.0, 16).unwrap();
        assert!((numeric - law.conjugate(1.0, 0.5)).abs() <= 1e-6);

        let law = PowerLaw { exponent: 2.5 };
        let numeric = fenchel_conjugate_numeric(|m| law.value(m, 1.0), 1.3, 0.0, 10.0, 16).unwrap();
        assert!((numeric - law.conjugate(1.3, 1.0)).abs() <= 1e-6);
    }

    #[test]
    fn numeric_conjugate_simple_cases() {
        let v = fenchel_conjugate_numeric(|m| m * m / 2.0, 3.0, 0.0, 10.0, 16).unwrap();
        assert!((v - 4.5).abs() <= 1e-8);
        let v = fenchel_conjugate_numeric(|m| m, 0.5, 0.0, 10.0, 16).unwrap();
        assert!(v.abs() <= 1e-12);
        assert!(fenchel_conjugate_numeric(|_| f64::NAN, 0.5, 0.0, 1.0, 16).is_err());
    }

    #[test]
    fn hamiltonian_pair() {
        let m = quad();
        assert_eq!(m.h_value(&[0.0]), 0.0);
        assert_eq!(m.h_value(&[2.0]), 2.0);
        assert_eq!(m.l_value(&[2.0]), 2.0);
        let mut g = [0.0];
        m.h_gradient(&[1.5], &mut g);
        assert_eq!(g, [1.5]);
        let shifted = ModelSpec { big_c_h: 0.7, ..quad() };
        assert_eq!(shifted.h_value(&[0.0]), -0.7);
    }

    #[test]
    fn lagrangian_matches_numeric_conjugate_of_cubic_hamiltonian() {
        let m = ModelSpec { r: 3.0, ..quad() };
        let numeric = fenchel_conjugate_numeric(|p| m.h_value(&[p]), 1.0, -20.0, 20.0, 16).unwrap();
        assert!((numeric - m.l_value(&[1.0])).abs() <= 1e-6);
    }

    #[test]
    fn growth_bounds_for_power_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ps: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-5.0..5.0)]).collect();
        let ms: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..5.0)).collect();
        let m = ModelSpec { c_h: 2.5, ..quad() };
        let rep = m.check_growth_bounds(&ps, &ms);
        assert!(rep.all_hold());
        assert_eq!(rep.c_hamiltonian, 2.5);

        let rep = quad().check_growth_bounds(&ps, &ms);
        assert_eq!(rep.hamiltonian_lower_tight, ps.len());
    }

    #[test]
    fn initial_density_normalized() {
        let g = GridSpec::new(1, 16, 32, 4, 1.0, 3.0).unwrap();
        let spec = InitialDensitySpec {
            position: PositionProfile::Uniform,
            v_center: 0.0,
            v_sigma: 0.5,
        };
        let m0 = build_initial_density(&g, &spec, MAX_OUTSIDE_MASS).unwrap();
        assert!((integrate_slice(&m0.m0, 0).unwrap() - 1.0).abs() <= 1e-12);
        assert!(m0.slice().iter().all(|v| *v >= 0.0));

        let spec = InitialDensitySpec {
            position: PositionProfile::Bumps {
                centers: vec![0.25, 0.75],
                width: 0.2,
            },
            ..spec
        };
        let m0 = build_initial_density(&g, &spec, MAX_OUTSIDE_MASS).unwrap();
        assert!((integrate_slice(&m0.m0, 0).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn truncated_gaussian_rejected() {
        let g = GridSpec::new(1, 16, 16, 4, 1.0, 2.0).unwrap();
        let spec = InitialDensitySpec {
            position: PositionProfile::Uniform,
            v_center: 0.0,
            v_sigma: 0.5,
        };
        let err = build_initial_density(&g, &spec, MAX_OUTSIDE_MASS).unwrap_err();
        assert!(err.to_string().contains("v_max"));
    }

    #[test]
    fn first_velocity_moment_of_centered_gaussian() {
        let sigma = 0.5;
        let g = GridSpec::new(1, 4, 256, 2, 1.0, 4.0).unwrap();
        let spec = InitialDensitySpec {
            position: PositionProfile::Uniform,
            v_center: 0.0,
            v_sigma: sigma,
        };
        let m0 = build_initial_density(&g, &spec, MAX_OUTSIDE_MASS).unwrap();
        let mut moment = 0.0;
        for ix in 0..g.x_cells() {
            for iv in 0..g.v_cells() {
                moment += g.speed(iv) * m0.m0.get(0, ix, iv);
            }
        }
        moment *= g.cell_volume();
        let exact = sigma * (2.0 / std::f64::consts::PI).sqrt();
        // midpoint rule, O(dv^2)
        assert!((moment - exact).abs() <= g.dv * g.dv, "{moment} vs {exact}");
    }
}
