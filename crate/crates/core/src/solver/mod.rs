//! Primal-dual hybrid gradient solver for the density problem, with the
//! multiplier read back as the value function of the relaxed dual problem.
//!
//! The primal unknowns are `m^1..m^nt` (nodes), `w^0..w^{nt-1}` (intervals)
//! and a separate terminal density `m_T`. Constraint rows are the interval
//! residuals of the continuity equation with `m^0 = m0` pinned, weighted by
//! `vol * dt`, plus a terminal row `m_T - m^nt = 0` weighted by `vol`. The
//! multiplier `u` is a node field: `u^k` pairs with interval `k` for `k < nt`
//! and `u^nt` with the terminal row. Keeping `m_T` separate lets the proximal
//! step split into independent per-cell problems.

pub mod prox;

pub use prox::{prox_perspective, prox_terminal};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, TimeLayout, VectorField};
use crate::model::{InitialDensity, ModelSpec, INFEASIBLE};
use crate::transport::{discrete_free_streaming, ContinuityOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Primal pair `(m, w)` plus the terminal density.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    /// Node field; slice 0 equals `m0`.
    pub m: ScalarField,
    /// Interval field per velocity component.
    pub w: VectorField,
    /// Terminal density `m_T`, one value per phase-space cell.
    pub m_terminal: Vec<f64>,
}

/// Dual triple `(u, beta, beta_T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueState {
    pub u: ScalarField,
    pub beta: ScalarField,
    pub beta_terminal: Vec<f64>,
}

/// How the iterates are started.
#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    /// Discrete free streaming of `m0`, `w = 0`, `u = 0`.
    FreeStreaming,
    /// `m^k = m0` for every `k`, `w = 0`, `u = 0`.
    Constant,
    /// Free streaming with seeded multiplicative noise on `m`, random fluxes, `u = 0`.
    Random(u64),
    /// Resume from a previous primal-dual pair.
    Warm(Box<(FlowState, ScalarField)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Primal step. When absent it is derived from the operator norm.
    pub tau: Option<f64>,
    /// Dual step. When absent it is derived from the operator norm.
    pub sigma: Option<f64>,
    /// `tau / sigma` used when the steps are derived.
    pub step_ratio: f64,
    pub theta: f64,
    pub max_iter: usize,
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub prox_tol: f64,
    /// Objectives are evaluated and recorded every this many iterations.
    pub record_every: usize,
    /// Write wall-clock seconds into the record; disable for byte-stable output.
    pub record_time: bool,
    pub init: Initialization,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: None,
            sigma: None,
            step_ratio: 1.0,
            theta: 1.0,
            max_iter: 20_000,
            tol_gap: 1e-4,
            tol_feas: 1e-5,
            prox_tol: 1e-12,
            record_every: 10,
            record_time: false,
            init: Initialization::FreeStreaming,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Range {
                    key: key.into(),
                    reason: format!("must be positive and finite, got {v}"),
                })
            }
        };
        if let Some(t) = self.tau {
            positive("solver.tau", t)?;
        }
        if let Some(s) = self.sigma {
            positive("solver.sigma", s)?;
        }
        positive("solver.step_ratio", self.step_ratio)?;
        positive("solver.tol_gap", self.tol_gap)?;
        positive("solver.tol_feas", self.tol_feas)?;
        positive("solver.prox_tol", self.prox_tol)?;
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Range {
                key: "solver.theta".into(),
                reason: format!("must lie in [0, 1], got {}", self.theta),
            });
        }
        if self.max_iter == 0 || self.record_every == 0 {
            return Err(Error::Range {
                key: if self.max_iter == 0 { "solver.max_iter" } else { "solver.record_every" }.into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Resolves `(tau, sigma)` against the operator norm so that
    /// `tau * sigma * norm^2 <= 0.99`.
    pub fn step_sizes(&self, op_norm: f64) -> Result<(f64, f64)> {
        let budget = 0.99 / (op_norm * op_norm);
        let (tau, sigma) = match (self.tau, self.sigma) {
            (Some(t), Some(s)) => (t, s),
            (Some(t), None) => (t, budget / t),
            (None, Some(s)) => (budget / s, s),
            (None, None) => ((budget * self.step_ratio).sqrt(), (budget / self.step_ratio).sqrt()),
        };
        if tau * sigma > budget * (1.0 + 1e-12) {
            return Err(Error::Range {
                key: "solver.tau".into(),
                reason: format!(
                    "tau * sigma = {:.3e} exceeds 0.99 / |K|^2 = {budget:.3e} (|K| = {op_norm:.4})",
                    tau * sigma
                ),
            });
        }
        Ok((tau, sigma))
    }
}

/// One row of the convergence log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub iter: usize,
    /// `B` at the primal iterate.
    pub primal: f64,
    /// `-A~` at the dual iterate.
    pub dual: f64,
    pub gap: f64,
    pub feas: f64,
    pub energy_residual: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceRecord {
    pub rows: Vec<ConvergenceRow>,
    pub converged: bool,
    pub tau: f64,
    pub sigma: f64,
    pub op_norm: f64,
}

impl ConvergenceRecord {
    pub fn last(&self) -> Option<&ConvergenceRow> {
        self.rows.last()
    }
}

/// Relative duality gap `(a + b) / max(1, |b|)`.
pub fn duality_gap(a_val: f64, b_val: f64) -> f64 {
    (a_val + b_val) / b_val.abs().max(1.0)
}

/// Flat working storage for one primal-dual pair.
struct Iterate {
    /// `(nt + 1) * n`, slice 0 is `m0`.
    m: Vec<f64>,
    /// `d` components of `nt * n`.
    w: Vec<Vec<f64>>,
    mt: Vec<f64>,
}

impl Iterate {
    fn zeros(grid: &GridSpec) -> Self {
        let n = grid.slice_len();
        Self {
            m: vec![0.0; (grid.nt + 1) * n],
            w: vec![vec![0.0; grid.nt * n]; grid.d],
            mt: vec![0.0; n],
        }
    }
}

/// Linear parts of the constrained problem on raw slices.
struct System<'a> {
    op: ContinuityOperator,
    grid: GridSpec,
    model: &'a ModelSpec,
    n: usize,
}

impl<'a> System<'a> {
    fn new(grid: GridSpec, model: &'a ModelSpec) -> Self {
        Self {
            op: ContinuityOperator::new(grid),
            grid,
            model,
            n: grid.slice_len(),
        }
    }

    /// Constraint rows `K x - b`, i.e. interval residuals with the stored
    /// slice 0 and the terminal row; `out` has `(nt + 1) * n` entries.
    fn residual(&self, x: &Iterate, out: &mut [f64]) {
        let (n, nt) = (self.n, self.grid.nt);
        for k in 0..nt {
            let ws: Vec<&[f64]> = x.w.iter().map(|c| &c[k * n..(k + 1) * n]).collect();
            self.op
                .residual_slice(&x.m[k * n..(k + 1) * n], &x.m[(k + 1) * n..(k + 2) * n], &ws, &mut out[k * n..(k + 1) * n]);
        }
        let tail = &mut out[nt * n..];
        for ((o, a), b) in tail.iter_mut().zip(&x.mt).zip(&x.m[nt * n..]) {
            *o = a - b;
        }
    }

    /// Transpose against the multiplier: `m` slots `1..=nt`, `w`, and `m_T`.
    /// Slot 0 of `out.m` is left untouched.
    fn adjoint(&self, u: &[f64], out: &mut Iterate, buf: &mut [Vec<f64>]) {
        let (n, nt) = (self.n, self.grid.nt);
        for k in 0..nt {
            self.op
                .adjoint_slice(&u[k * n..(k + 1) * n], &u[(k + 1) * n..(k + 2) * n], &mut out.m[(k + 1) * n..(k + 2) * n], buf);
            for (a, b) in buf.iter().enumerate() {
                out.w[a][k * n..(k + 1) * n].copy_from_slice(b);
            }
        }
        out.mt.copy_from_slice(&u[nt * n..]);
    }

    /// Weighted squared norm of a constraint-row vector.
    fn row_norm_sq(&self, r: &[f64]) -> f64 {
        let (n, nt) = (self.n, self.grid.nt);
        let vol = self.grid.cell_volume();
        let body: f64 = r[..nt * n].iter().map(|x| x * x).sum();
        let tail: f64 = r[nt * n..].iter().map(|x| x * x).sum();
        body * vol * self.grid.dt + tail * vol
    }

    /// Weighted squared norm of the free primal variables.
    fn primal_norm_sq(&self, x: &Iterate) -> f64 {
        let n = self.n;
        let vol = self.grid.cell_volume();
        let body: f64 = x.m[n..].iter().map(|v| v * v).sum::<f64>()
            + x.w.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>();
        let tail: f64 = x.mt.iter().map(|v| v * v).sum();
        body * vol * self.grid.dt + tail * vol
    }

    fn primal_objective(&self, x: &Iterate) -> f64 {
        let (n, nt) = (self.n, self.grid.nt);
        let vol = self.grid.cell_volume();
        let d = self.grid.d;
        let mut running = 0.0;
        let mut wc = [0.0; 2];
        for k in 0..nt {
            for i in 0..n {
                let m = x.m[(k + 1) * n + i];
                for a in 0..d {
                    wc[a] = x.w[a][k * n + i];
                }
                running += self.model.f_value(m, i) + self.model.perspective(m, &wc[..d]);
            }
        }
        let terminal: f64 = x.mt.iter().enumerate().map(|(i, &m)| self.model.g_value(m, i)).sum();
        running * vol * self.grid.dt + terminal * vol
    }
}

/// Upper estimate of the operator norm of the linear constraint map.
///
/// Power iteration on `K* K` in the weighted spaces, stopped at `1e-6`
/// relative stagnation of the eigenvalue, with a `1.01` safety factor.
pub fn estimate_op_norm(grid: &GridSpec) -> Result<f64> {
    const MAX_ITERS: usize = 10_000;
    let model = ModelSpec::default();
    let sys = System::new(*grid, &model);
    let n = sys.n;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b6d6667);
    let mut x = Iterate::zeros(grid);
    for v in x.m[n..].iter_mut().chain(x.mt.iter_mut()) {
        *v = rng.gen_range(-1.0..1.0);
    }
    for c in x.w.iter_mut() {
        for v in c.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut rows = vec![0.0; (grid.nt + 1) * n];
    let mut buf = vec![vec![0.0; n]; grid.d];
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        let norm = sys.primal_norm_sq(&x).sqrt();
        if norm == 0.0 {
            return Err(Error::NormEstimate(0));
        }
        for v in x.m.iter_mut().chain(x.mt.iter_mut()).chain(x.w.iter_mut().flat_map(|c| c.iter_mut())) {
            *v /= norm;
        }
        x.m[..n].iter_mut().for_each(|v| *v = 0.0);
        sys.residual(&x, &mut rows);
        let next = sys.row_norm_sq(&rows);
        sys.adjoint(&rows, &mut x, &mut buf);
        if (next - lambda).abs() <= 1e-6 * next {
            return Ok(next.sqrt() * 1.01);
        }
        lambda = next;
    }
    Err(Error::NormEstimate(MAX_ITERS))
}

/// `beta = K_m* u + H(D_v u)` on intervals and `beta_T = u^nt`.
pub fn recover_value_state(u: &ScalarField, model: &ModelSpec) -> Result<ValueState> {
    if u.layout() != TimeLayout::Nodes {
        return Err(Error::GridMismatch);
    }
    let grid = *u.grid();
    let op = ContinuityOperator::new(grid);
    let (n, nt, d) = (grid.slice_len(), grid.nt, grid.d);
    let mut beta = ScalarField::zeros(grid, TimeLayout::Intervals);
    let mut grads = vec![vec![0.0; n]; d];
    let mut p = [0.0; 2];
    for k in 0..nt {
        let out = beta.slice_mut(k);
        op.adjoint_slice(u.slice(k), u.slice(k + 1), out, &mut grads);
        for i in 0..n {
            for a in 0..d {
                // adjoint_slice stores -D_v u
                p[a] = -grads[a][i];
            }
            out[i] += model.h_value(&p[..d]);
        }
    }
    Ok(ValueState {
        u: u.clone(),
        beta,
        beta_terminal: u.slice(nt).to_vec(),
    })
}

/// Shifts `u` so that the zero-coupling conjugates are finite.
///
/// Where `c_F = 0`, `F*` is the indicator of `beta <= 0`; the shift
/// `u + lambda (t - T)` lowers every `beta` by `lambda`. Where `c_G = 0`, a
/// constant shift `u - mu` lowers `u^nt` without touching `beta`. Both keep a
/// valid dual certificate and cost `(lambda T + mu)` times the initial mass.
pub fn restore_dual(u: &ScalarField, model: &ModelSpec) -> Result<ScalarField> {
    let grid = *u.grid();
    let mut out = u.clone();
    // Recomputed differences carry rounding of order machine epsilon times
    // the multiplier scale, so each shift overshoots by a growing margin.
    let scale = 1.0 + u.values().iter().fold(0.0f64, |a, v| a.max(v.abs())) / u.grid().dt;
    let mut margin = 1e-13 * scale;
    for _ in 0..8 {
        let value = recover_value_state(&out, model)?;
        let mut lambda: f64 = 0.0;
        for k in 0..grid.nt {
            for (i, b) in value.beta.slice(k).iter().enumerate() {
                if model.c_f.at(i) == 0.0 {
                    lambda = lambda.max(*b);
                }
            }
        }
        let mut mu: f64 = 0.0;
        for (i, b) in value.beta_terminal.iter().enumerate() {
            if model.c_g.at(i) == 0.0 {
                mu = mu.max(*b);
            }
        }
        if lambda == 0.0 && mu == 0.0 {
            return Ok(out);
        }
        if lambda > 0.0 {
            lambda += margin;
        }
        if mu > 0.0 {
            mu += margin;
        }
        margin *= 10.0;
        for k in 0..=grid.nt {
            let shift = lambda * (grid.time(k) - grid.horizon) - mu;
            for v in out.slice_mut(k) {
                *v += shift;
            }
        }
    }
    Err(Error::Infeasible("dual restoration did not reach a feasible multiplier".into()))
}

/// `B(m, w) = sum [F(m) + m L(-w/m)] vol dt + sum G(m_T) vol`.
///
/// Interval `k` pairs `w^k` with `m^{k+1}`. Returns the infeasibility sentinel
/// when any term is infinite.
pub fn evaluate_b(flow: &FlowState, model: &ModelSpec) -> f64 {
    let grid = *flow.m.grid();
    let (n, nt, d) = (grid.slice_len(), grid.nt, grid.d);
    let vol = grid.cell_volume();
    let mut running = 0.0;
    let mut wc = [0.0; 2];
    for k in 0..nt {
        let m = flow.m.slice(k + 1);
        for i in 0..n {
            for a in 0..d {
                wc[a] = flow.w.component(a).slice(k)[i];
            }
            running += model.f_value(m[i], i) + model.perspective(m[i], &wc[..d]);
        }
    }
    let terminal: f64 = flow.m_terminal.iter().enumerate().map(|(i, &m)| model.g_value(m, i)).sum();
    let total = running * vol * grid.dt + terminal * vol;
    if total.is_finite() {
        total
    } else {
        INFEASIBLE
    }
}

/// `A~(u, beta, beta_T) = sum F*(beta) vol dt - sum u^0 m0 vol + sum G*(beta_T) vol`.
pub fn evaluate_a(value: &ValueState, m0: &[f64], model: &ModelSpec) -> f64 {
    let grid = *value.u.grid();
    let vol = grid.cell_volume();
    let mut running = 0.0;
    for k in 0..grid.nt {
        for (i, &b) in value.beta.slice(k).iter().enumerate() {
            running += model.f_star(b, i);
        }
    }
    let initial: f64 = value.u.slice(0).iter().zip(m0).map(|(u, m)| u * m).sum();
    let terminal: f64 = value.beta_terminal.iter().enumerate().map(|(i, &b)| model.g_star(b, i)).sum();
    running * vol * grid.dt - initial * vol + terminal * vol
}

/// Relative residual of the discrete energy equality
/// `sum m0 u^0 - sum g(m_T) m_T = sum f(m) m dt + sum [D_pH . D_v u - H] m dt`.
pub(crate) fn energy_residual_raw(
    grid: &GridSpec,
    model: &ModelSpec,
    m: &[f64],
    m_terminal: &[f64],
    u: &[f64],
) -> f64 {
    let op = ContinuityOperator::new(*grid);
    let (n, nt, d) = (grid.slice_len(), grid.nt, grid.d);
    let vol = grid.cell_volume();
    let lhs_initial: f64 = m[..n].iter().zip(&u[..n]).map(|(a, b)| a * b).sum::<f64>() * vol;
    let lhs_terminal: f64 = m_terminal
        .iter()
        .enumerate()
        .map(|(i, &mt)| model.g_derivative(mt, i) * mt)
        .sum::<f64>()
        * vol;
    let lhs = lhs_initial - lhs_terminal;
    let mut grads = vec![vec![0.0; n]; d];
    let (mut p, mut dh) = ([0.0; 2], [0.0; 2]);
    let mut rhs = 0.0;
    for k in 0..nt {
        let uk = &u[k * n..(k + 1) * n];
        for (a, g) in grads.iter_mut().enumerate() {
            op.v_gradient(uk, a, g);
        }
        let mk = &m[(k + 1) * n..(k + 2) * n];
        for i in 0..n {
            for a in 0..d {
                p[a] = grads[a][i];
            }
            model.h_gradient(&p[..d], &mut dh[..d]);
            let legendre: f64 = (0..d).map(|a| dh[a] * p[a]).sum::<f64>() - model.h_value(&p[..d]);
            rhs += (model.f_derivative(mk[i], i) + legendre) * mk[i];
        }
    }
    rhs *= vol * grid.dt;
    (lhs - rhs).abs() / (1.0 + rhs.abs())
}

fn initial_iterate(grid: &GridSpec, m0: &InitialDensity, init: &Initialization) -> Result<(Iterate, Vec<f64>)> {
    let n = grid.slice_len();
    let nt = grid.nt;
    let mut x = Iterate::zeros(grid);
    let mut u = vec![0.0; (nt + 1) * n];
    match init {
        Initialization::FreeStreaming => {
            let fs = discrete_free_streaming(m0.slice(), grid)?;
            x.m.copy_from_slice(fs.values());
            for v in x.m.iter_mut() {
                *v = v.max(0.0);
            }
        }
        Initialization::Constant => {
            for k in 0..=nt {
                x.m[k * n..(k + 1) * n].copy_from_slice(m0.slice());
            }
        }
        Initialization::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mean = 1.0 / (grid.x_cells() as f64 * grid.v_cells() as f64 * grid.cell_volume());
            // multiplicative noise on free streaming keeps the start near the feasible set
            let fs = discrete_free_streaming(m0.slice(), grid)?;
            for (v, f) in x.m[n..].iter_mut().zip(&fs.values()[n..]) {
                *v = f.max(0.0) * rng.gen_range(0.5..1.5);
            }
            let op = ContinuityOperator::new(*grid);
            let nvd = grid.v_cells();
            for c in x.w.iter_mut() {
                for (j, v) in c.iter_mut().enumerate() {
                    if !op.is_boundary_velocity(j % n % nvd) {
                        *v = rng.gen_range(-0.1..0.1) * mean;
                    }
                }
            }
        }
        Initialization::Warm(state) => {
            let (flow, uw) = state.as_ref();
            if flow.m.grid() != grid || uw.grid() != grid || uw.layout() != TimeLayout::Nodes {
                return Err(Error::GridMismatch);
            }
            x.m.copy_from_slice(flow.m.values());
            for (a, c) in x.w.iter_mut().enumerate() {
                c.copy_from_slice(flow.w.component(a).values());
            }
            x.mt.copy_from_slice(&flow.m_terminal);
            u.copy_from_slice(uw.values());
        }
    }
    x.m[..n].copy_from_slice(m0.slice());
    if !matches!(init, Initialization::Warm(_)) {
        let last = x.m[nt * n..].to_vec();
        x.mt.copy_from_slice(&last);
    }
    Ok((x, u))
}

fn into_flow(grid: &GridSpec, x: &Iterate) -> Result<FlowState> {
    let m = ScalarField::from_values(*grid, TimeLayout::Nodes, x.m.clone())?;
    let comps = x
        .w
        .iter()
        .map(|c| ScalarField::from_values(*grid, TimeLayout::Intervals, c.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowState {
        m,
        w: VectorField::from_components(comps)?,
        m_terminal: x.mt.clone(),
    })
}

/// Output of [`pdhg_solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub flow: FlowState,
    /// Value state recovered from the (restored) multiplier.
    pub value: ValueState,
    /// Raw multiplier of the last iterate, suitable for warm starts.
    pub multiplier: ScalarField,
    pub record: ConvergenceRecord,
}

impl Solution {
    pub fn primal(&self) -> f64 {
        self.record.last().map_or(f64::NAN, |r| r.primal)
    }

    pub fn gap(&self) -> f64 {
        self.record.last().map_or(f64::NAN, |r| r.gap)
    }
}

/// Chambolle-Pock iteration with extrapolation `theta`:
///
/// ```text
/// u    <- u - sigma (K xbar - b)
/// x+   <- prox_{tau Phi}(x + tau K* u)
/// xbar <- x+ + theta (x+ - x)
/// ```
pub fn pdhg_solve(model: &ModelSpec, grid: &GridSpec, m0: &InitialDensity, config: &SolverConfig) -> Result<Solution> {
    model.validate()?;
    config.validate()?;
    if m0.m0.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let start = Instant::now();
    let op_norm = estimate_op_norm(grid)?;
    let (tau, sigma) = config.step_sizes(op_norm)?;
    let sys = System::new(*grid, model);
    let (n, nt, d) = (grid.slice_len(), grid.nt, grid.d);
    let nvd = grid.v_cells();
    let (mut x, mut u) = initial_iterate(grid, m0, &config.init)?;
    let mut xbar = Iterate {
        m: x.m.clone(),
        w: x.w.clone(),
        mt: x.mt.clone(),
    };
    let mut kt = Iterate::zeros(grid);
    let mut rows = vec![0.0; (nt + 1) * n];
    let mut buf = vec![vec![0.0; n]; d];
    let boundary: Vec<bool> = (0..nvd).map(|iv| sys.op.is_boundary_velocity(iv)).collect();
    let mut record = ConvergenceRecord {
        tau,
        sigma,
        op_norm,
        ..Default::default()
    };
    let mut wt = [0.0; 2];
    let mut wo = [0.0; 2];
    let mut gap_history: Vec<(usize, f64)> = Vec::new();

    for iter in 1..=config.max_iter {
        sys.residual(&xbar, &mut rows);
        for (ui, r) in u.iter_mut().zip(&rows) {
            *ui -= sigma * r;
        }
        sys.adjoint(&u, &mut kt, &mut buf);

        // xbar temporarily keeps the previous iterate
        std::mem::swap(&mut xbar, &mut x);
        for k in 0..nt {
            for i in 0..n {
                let j = (k + 1) * n + i;
                let jw = k * n + i;
                let m_tilde = xbar.m[j] + tau * kt.m[j];
                if boundary[i % nvd] {
                    wt[..d].iter_mut().for_each(|v| *v = 0.0);
                } else {
                    for a in 0..d {
                        wt[a] = xbar.w[a][jw] + tau * kt.w[a][jw];
                    }
                }
                x.m[j] = prox_perspective(model, m_tilde, &wt[..d], tau, i, config.prox_tol, &mut wo[..d])?;
                for a in 0..d {
                    x.w[a][jw] = wo[a];
                }
            }
        }
        for i in 0..n {
            x.mt[i] = prox_terminal(model, xbar.mt[i] + tau * kt.mt[i], tau, i, config.prox_tol)?;
        }
        let th = config.theta;
        for (b, a) in xbar.m.iter_mut().zip(&x.m) {
            *b = a + th * (a - *b);
        }
        for (bc, ac) in xbar.w.iter_mut().zip(&x.w) {
            for (b, a) in bc.iter_mut().zip(ac) {
                *b = a + th * (a - *b);
            }
        }
        for (b, a) in xbar.mt.iter_mut().zip(&x.mt) {
            *b = a + th * (a - *b);
        }

        if iter % config.record_every == 0 || iter == config.max_iter {
            let row = evaluate_row(&sys, &x, &u, iter, m0.slice(), &mut rows, start, config.record_time)?;
            record.rows.push(row);
            if !(row.primal.is_finite() && row.dual.is_finite() && row.gap.is_finite()) {
                return Err(Error::Divergence {
                    iteration: iter,
                    detail: format!("non-finite objective (primal {}, dual {})", row.primal, row.dual),
                });
            }
            gap_history.push((iter, row.gap.abs()));
            if let Some(&(_, old)) = gap_history.iter().rev().find(|(it, _)| iter - it >= 1000) {
                if row.gap.abs() > 10.0 * old && row.gap.abs() > 1e-2 {
                    return Err(Error::Divergence {
                        iteration: iter,
                        detail: format!("gap grew from {old:.3e} to {:.3e} over 1000 iterations", row.gap.abs()),
                    });
                }
            }
            if row.gap.abs() <= config.tol_gap && row.feas <= config.tol_feas {
                record.converged = true;
                break;
            }
        }
    }

    let flow = into_flow(grid, &x)?;
    let multiplier = ScalarField::from_values(*grid, TimeLayout::Nodes, u)?;
    let restored = restore_dual(&multiplier, model)?;
    let value = recover_value_state(&restored, model)?;
    Ok(Solution {
        flow,
        value,
        multiplier,
        record,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_row(
    sys: &System,
    x: &Iterate,
    u: &[f64],
    iter: usize,
    m0: &[f64],
    rows: &mut [f64],
    start: Instant,
    record_time: bool,
) -> Result<ConvergenceRow> {
    let grid = sys.grid;
    let primal = sys.primal_objective(x);
    let uf = ScalarField::from_values(grid, TimeLayout::Nodes, u.to_vec())?;
    let restored = restore_dual(&uf, sys.model)?;
    let value = recover_value_state(&restored, sys.model)?;
    let a = evaluate_a(&value, m0, sys.model);
    sys.residual(x, rows);
    let feas = sys.row_norm_sq(rows).sqrt();
    let energy = energy_residual_raw(&grid, sys.model, &x.m, &x.mt, restored.values());
    Ok(ConvergenceRow {
        iter,
        primal,
        dual: -a,
        gap: duality_gap(a, primal),
        feas,
        energy_residual: energy,
        seconds: if record_time { start.elapsed().as_secs_f64() } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_initial_density, Coefficient, InitialDensitySpec, PositionProfile, MAX_OUTSIDE_MASS};

    fn setup(nx: usize, nv: usize, nt: usize) -> (GridSpec, InitialDensity) {
        let grid = GridSpec::new(1, nx, nv, nt, 1.0, 2.0).unwrap();
        let m0 = build_initial_density(&grid, &InitialDensitySpec::default(), MAX_OUTSIDE_MASS).unwrap();
        (grid, m0)
    }

    #[test]
    fn gap_formula() {
        assert_eq!(duality_gap(0.0, 0.0), 0.0);
        assert_eq!(duality_gap(1.0, -1.0), 0.0);
        assert_eq!(duality_gap(3.0, 2.0), 2.5);
    }

    #[test]
    fn op_norm_bounds_rayleigh_quotients() {
        let (grid, _) = setup(6, 6, 5);
        let norm = estimate_op_norm(&grid).unwrap();
        let model = ModelSpec::default();
        let sys = System::new(grid, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = vec![0.0; (grid.nt + 1) * sys.n];
        for _ in 0..100 {
            let mut x = Iterate::zeros(&grid);
            for v in x.m[sys.n..].iter_mut().chain(x.mt.iter_mut()).chain(x.w[0].iter_mut()) {
                *v = rng.gen_range(-1.0..1.0);
            }
            sys.residual(&x, &mut rows);
            let q = (sys.row_norm_sq(&rows) / sys.primal_norm_sq(&x)).sqrt();
            assert!(q <= norm, "{q} > {norm}");
        }
    }

    #[test]
    fn op_norm_scales_with_inverse_dt() {
        let g1 = GridSpec::new(1, 4, 4, 32, 1.0, 0.5).unwrap();
        let g2 = GridSpec::new(1, 4, 4, 64, 1.0, 0.5).unwrap();
        let r = estimate_op_norm(&g2).unwrap() / estimate_op_norm(&g1).unwrap();
        assert!((r - 2.0).abs() < 0.15, "ratio {r}");
    }

    #[test]
    fn explicit_steps_are_checked() {
        let cfg = SolverConfig {
            tau: Some(1.0),
            sigma: Some(1.0),
            ..SolverConfig::default()
        };
        assert!(matches!(cfg.step_sizes(2.0), Err(Error::Range { .. })));
        let (t, s) = SolverConfig::default().step_sizes(2.0).unwrap();
        assert!((t * s * 4.0 - 0.99).abs() < 1e-12);
    }

    #[test]
    fn value_recovery_for_simple_multipliers() {
        let (grid, _) = setup(4, 4, 4);
        let model = ModelSpec {
            big_c_h: 0.25,
            ..ModelSpec::default()
        };
        let zero = ScalarField::zeros(grid, TimeLayout::Nodes);
        let v = recover_value_state(&zero, &model).unwrap();
        assert!(v.beta.values().iter().all(|b| (*b + 0.25).abs() < 1e-15));
        let c = 0.7;
        let u = ScalarField::from_fn(grid, TimeLayout::Nodes, |t, _, _| c * (t - 1.0));
        let v = recover_value_state(&u, &model).unwrap();
        assert!(v.beta.values().iter().all(|b| (*b - (-c - 0.25)).abs() < 1e-12));
        assert!(v.beta_terminal.iter().all(|b| b.abs() < 1e-15));
    }

    #[test]
    fn weak_duality_on_feasible_flow() {
        let (grid, m0) = setup(6, 6, 6);
        let model = ModelSpec::default();
        let fs = discrete_free_streaming(m0.slice(), &grid).unwrap();
        let flow = FlowState {
            m_terminal: fs.slice(grid.nt).to_vec(),
            m: fs,
            w: VectorField::zeros(grid),
        };
        let b = evaluate_b(&flow, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let vals = (0..(grid.nt + 1) * grid.slice_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = ScalarField::from_values(grid, TimeLayout::Nodes, vals).unwrap();
            let value = recover_value_state(&u, &model).unwrap();
            let a = evaluate_a(&value, m0.slice(), &model);
            assert!(a + b >= -1e-12, "{a} + {b}");
        }
    }

    #[test]
    fn restoration_makes_zero_coupling_dual_finite() {
        let (grid, m0) = setup(4, 4, 4);
        let model = ModelSpec {
            c_f: Coefficient::Constant(0.0),
            c_g: Coefficient::Constant(0.0),
            ..ModelSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals = (0..(grid.nt + 1) * grid.slice_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = ScalarField::from_values(grid, TimeLayout::Nodes, vals).unwrap();
        let raw = recover_value_state(&u, &model).unwrap();
        assert!(!evaluate_a(&raw, m0.slice(), &model).is_finite());
        let fixed = recover_value_state(&restore_dual(&u, &model).unwrap(), &model).unwrap();
        let a = evaluate_a(&fixed, m0.slice(), &model);
        assert!(a.is_finite() && a >= 0.0);
    }

    #[test]
    fn small_default_instance_converges() {
        let (grid, m0) = setup(4, 4, 4);
        let model = ModelSpec::default();
        let cfg = SolverConfig {
            tol_gap: 1e-7,
            tol_feas: 1e-8,
            max_iter: 50_000,
            ..SolverConfig::default()
        };
        let sol = pdhg_solve(&model, &grid, &m0, &cfg).unwrap();
        assert!(sol.record.converged, "{:?}", sol.record.last());
        let last = sol.record.last().unwrap();
        assert!(last.energy_residual < 1e-4, "{last:?}");
        assert!(sol.flow.m.values().iter().all(|m| *m >= 0.0));
        assert!(sol.flow.w.satisfies_zero_flux());
    }

    #[test]
    fn homogeneous_data_stays_homogeneous() {
        let grid = GridSpec::new(1, 4, 6, 4, 1.0, 2.0).unwrap();
        let spec = InitialDensitySpec {
            position: PositionProfile::Uniform,
            ..InitialDensitySpec::default()
        };
        let m0 = build_initial_density(&grid, &spec, MAX_OUTSIDE_MASS).unwrap();
        let cfg = SolverConfig {
            max_iter: 300,
            ..SolverConfig::default()
        };
        let sol = pdhg_solve(&ModelSpec::default(), &grid, &m0, &cfg).unwrap();
        let nvd = grid.v_cells();
        for k in 0..=grid.nt {
            let s = sol.flow.m.slice(k);
            for ix in 1..grid.nx {
                for iv in 0..nvd {
                    assert!((s[ix * nvd + iv] - s[iv]).abs() < 1e-13);
                }
            }
        }
    }
}
