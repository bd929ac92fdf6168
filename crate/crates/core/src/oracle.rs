//! Slow reference solvers for tiny grids.
//!
//! [`oracle_solve`] eliminates the continuity constraint: with the implicit
//! transport step `B = I/dt + v.D_x` factorized once, every slice
//! `m^{k+1} = B^{-1}(m^k/dt - Div_v w^k)` is an affine function of the free
//! fluxes, so the feasible set is parametrized exactly by `w` alone. A damped
//! Newton method with dense reduced Hessians then minimizes the primal
//! objective. None of this shares code with the primal-dual solver beyond
//! the stencils and the model formulas. Optima where some density vanishes
//! are out of reach of the interior iteration; they end in an error, never
//! in a silently wrong value.
//!
//! [`oracle_prox`] brute-forces a single-cell proximal problem.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, TimeLayout, VectorField};
use crate::model::{InitialDensity, ModelSpec};
use crate::solver::FlowState;
use crate::transport::ContinuityOperator;

/// Floor applied to `m` inside the perspective term.
pub const DENSITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Upper bound on `nx^d * nv^d * nt`.
    pub max_cells: usize,
    /// Newton iteration budget.
    pub max_iter: usize,
    /// Target on the Newton decrement `sqrt(g' H^{-1} g)`.
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_cells: 4096,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub flow: FlowState,
    /// Primal objective at `flow`.
    pub objective: f64,
    pub iterations: usize,
    /// Final Newton decrement.
    pub decrement: f64,
}

/// Second-order data of the running integrand `F(m) + P(m, w)` at one cell.
struct CellHessian {
    grad_m: f64,
    grad_w: [f64; 2],
    mm: f64,
    mw: [f64; 2],
    ww: [[f64; 2]; 2],
}

/// Value and derivatives of `P(m, w) = c_L |w|^p m^(1-p) / p + C_H m`, `p = r'`.
fn perspective_hessian(model: &ModelSpec, m: f64, w: &[f64]) -> (f64, CellHessian) {
    let p = model.r / (model.r - 1.0);
    let c_l = model.c_h.powf(-1.0 / (model.r - 1.0));
    let m = m.max(DENSITY_FLOOR);
    let s2: f64 = w.iter().map(|x| x * x).sum();
    let s = s2.sqrt();
    let value = c_l * s.powf(p) * m.powf(1.0 - p) / p + model.big_c_h * m;
    // |w|^(p-2) blows up at w = 0 when p < 2; a tiny floor keeps the Hessian finite
    let s_h = if p < 2.0 { s.max(1e-8) } else { s };
    let sp2 = if p == 2.0 { 1.0 } else { s_h.powf(p - 2.0) };
    let mut h = CellHessian {
        grad_m: c_l * (1.0 - p) / p * s.powf(p) * m.powf(-p) + model.big_c_h,
        grad_w: [0.0; 2],
        mm: c_l * (p - 1.0) * s_h.powf(p) * m.powf(-p - 1.0),
        mw: [0.0; 2],
        ww: [[0.0; 2]; 2],
    };
    let gw_scale = if s == 0.0 { 0.0 } else { c_l * s.powf(p - 2.0) * m.powf(1.0 - p) };
    for a in 0..w.len() {
        h.grad_w[a] = gw_scale * w[a];
        h.mw[a] = -c_l * (p - 1.0) * sp2 * w[a] * m.powf(-p);
        for b in 0..w.len() {
            let eye = if a == b { 1.0 } else { 0.0 };
            let outer = if s_h > 0.0 { w[a] * w[b] / (s_h * s_h) } else { 0.0 };
            h.ww[a][b] = c_l * m.powf(1.0 - p) * sp2 * (eye + (p - 2.0) * outer);
        }
    }
    (value, h)
}

/// Exact affine parametrization `m = m_base + Z y` of the feasible densities.
struct Reduced {
    grid: GridSpec,
    /// `(k, axis, cell)` of each free flux variable.
    free: Vec<(usize, usize, usize)>,
    /// Densities at nodes `1..=nt` for `w = 0`.
    base: DVector<f64>,
    /// `nt n x free.len()`.
    z: DMatrix<f64>,
}

impl Reduced {
    fn new(grid: GridSpec, m0: &[f64]) -> Result<Self> {
        let op = ContinuityOperator::new(grid);
        let (n, nt, d) = (grid.slice_len(), grid.nt, grid.d);
        let nvd = grid.v_cells();
        let mut b = DMatrix::zeros(n, n);
        let mut unit = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            unit[j] = 1.0;
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0 / grid.dt;
            op.add_x_transport(&unit, 1.0, &mut col);
            b.set_column(j, &DVector::from_column_slice(&col));
            unit[j] = 0.0;
        }
        let b_inv = b
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Oracle("implicit transport step is singular".into()))?;

        let mut base = DVector::zeros(nt * n);
        let mut prev = DVector::from_column_slice(m0);
        for k in 0..nt {
            let next = &b_inv * (&prev / grid.dt);
            base.rows_mut(k * n, n).copy_from(&next);
            prev = next;
        }

        let free: Vec<(usize, usize, usize)> = (0..nt)
            .flat_map(|k| (0..d).flat_map(move |a| (0..n).map(move |i| (k, a, i))))
            .filter(|&(_, _, i)| !op.is_boundary_velocity(i % nvd))
            .collect();
        let mut z = DMatrix::zeros(nt * n, free.len());
        let zeros = vec![0.0; n];
        for (c, &(k, a, i)) in free.iter().enumerate() {
            let mut w_unit = vec![0.0; n];
            w_unit[i] = 1.0;
            let comps: Vec<&[f64]> = (0..d).map(|b| if b == a { &w_unit[..] } else { &zeros[..] }).collect();
            let mut div = vec![0.0; n];
            op.add_v_divergence(&comps, -1.0, &mut div);
            let mut cur = &b_inv * DVector::from_vec(div);
            for j in k..nt {
                if j > k {
                    cur = &b_inv * (&cur / grid.dt);
                }
                z.view_mut((j * n, c), (n, 1)).copy_from(&cur);
            }
        }
        Ok(Self { grid, free, base, z })
    }

    fn densities(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.base + &self.z * y
    }

    /// Full flux vector `w[a][k n + i]` from the free variables.
    fn fluxes(&self, y: &DVector<f64>) -> Vec<Vec<f64>> {
        let n = self.grid.slice_len();
        let mut w = vec![vec![0.0; self.grid.nt * n]; self.grid.d];
        for (&(k, a, i), v) in self.free.iter().zip(y.iter()) {
            w[a][k * n + i] = *v;
        }
        w
    }

    fn objective(&self, model: &ModelSpec, y: &DVector<f64>) -> f64 {
        let m = self.densities(y);
        if m.iter().any(|x| *x < 0.0) {
            return f64::INFINITY;
        }
        let w = self.fluxes(y);
        let (n, nt, d) = (self.grid.slice_len(), self.grid.nt, self.grid.d);
        let vol = self.grid.cell_volume();
        let mut running = 0.0;
        let mut wc = [0.0; 2];
        for k in 0..nt {
            for i in 0..n {
                let mk = m[k * n + i];
                for a in 0..d {
                    wc[a] = w[a][k * n + i];
                }
                running += model.f_value(mk, i) + perspective_hessian(model, mk, &wc[..d]).0;
            }
        }
        let terminal: f64 = (0..n).map(|i| model.g_value(m[(nt - 1) * n + i], i)).sum();
        running * vol * self.grid.dt + terminal * vol
    }

    /// Reduced gradient and Hessian.
    fn derivatives(&self, model: &ModelSpec, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.densities(y);
        let w = self.fluxes(y);
        let (n, nt, d) = (self.grid.slice_len(), self.grid.nt, self.grid.d);
        let vol = self.grid.cell_volume();
        let wt = vol * self.grid.dt;
        let rows = nt * n;
        let mut g_m = DVector::zeros(rows);
        let mut h_mm = DVector::zeros(rows);
        let mut cells = Vec::with_capacity(rows);
        let mut wc = [0.0; 2];
        let (q, s) = (model.q, model.s);
        for k in 0..nt {
            for i in 0..n {
                let r = k * n + i;
                let mk = m[r];
                for a in 0..d {
                    wc[a] = w[a][r];
                }
                let (_, h) = perspective_hessian(model, mk, &wc[..d]);
                let c_f = model.c_f.at(i);
                g_m[r] = (model.f_derivative(mk, i) + h.grad_m) * wt;
                h_mm[r] = (c_f * (q - 1.0) * mk.max(DENSITY_FLOOR).powf(q - 2.0) + h.mm) * wt;
                if k == nt - 1 {
                    let c_g = model.c_g.at(i);
                    g_m[r] += model.g_derivative(mk, i) * vol;
                    h_mm[r] += c_g * (s - 1.0) * mk.max(DENSITY_FLOOR).powf(s - 2.0) * vol;
                }
                cells.push(h);
            }
        }
        let nf = self.free.len();
        let mut grad = self.z.tr_mul(&g_m);
        let mut scaled = self.z.clone();
        for (r, mut row) in scaled.row_iter_mut().enumerate() {
            row *= h_mm[r];
        }
        let mut hess = self.z.tr_mul(&scaled);
        // cross terms: each free variable touches one density row
        let mut cross = DMatrix::zeros(rows, nf);
        for (c, &(k, a, i)) in self.free.iter().enumerate() {
            let r = k * n + i;
            grad[c] += cells[r].grad_w[a] * wt;
            cross[(r, c)] = cells[r].mw[a] * wt;
        }
        let zc = self.z.tr_mul(&cross);
        hess += &zc + zc.transpose();
        for (c1, &(k1, a1, i1)) in self.free.iter().enumerate() {
            for (c2, &(k2, a2, i2)) in self.free.iter().enumerate() {
                if k1 == k2 && i1 == i2 {
                    hess[(c1, c2)] += cells[k1 * n + i1].ww[a1][a2] * wt;
                }
            }
        }
        (grad, hess)
    }
}

/// Minimizes the primal objective over feasible flows with a damped Newton
/// method on the flux variables.
///
/// The start `w = 0` is discrete free streaming, which must be nonnegative.
pub fn oracle_solve(model: &ModelSpec, grid: &GridSpec, m0: &InitialDensity, config: &OracleConfig) -> Result<OracleSolution> {
    model.validate()?;
    let cells = grid.slice_len() * grid.nt;
    if cells > config.max_cells {
        return Err(Error::Oracle(format!(
            "grid has {cells} phase-time cells, oracle limit is {}",
            config.max_cells
        )));
    }
    if m0.slice().len() != grid.slice_len() {
        return Err(Error::GridMismatch);
    }
    let red = Reduced::new(*grid, m0.slice())?;
    let nf = red.free.len();
    let mut y = DVector::zeros(nf);
    let mut value = red.objective(model, &y);
    if !value.is_finite() {
        return Err(Error::Oracle("free streaming start has negative density".into()));
    }
    let mut decrement = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let (grad, hess) = red.derivatives(model, &y);
        let mut shift = 0.0;
        let scale = (0..nf).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let step = loop {
            let mut h = hess.clone();
            for i in 0..nf {
                h[(i, i)] += shift;
            }
            if let Some(ch) = h.cholesky() {
                break ch.solve(&(-&grad));
            }
            shift = if shift == 0.0 { 1e-12 * scale } else { 10.0 * shift };
            if shift > 1e6 * scale {
                return Err(Error::Oracle("reduced Hessian could not be regularized".into()));
            }
        };
        let slope = grad.dot(&step);
        decrement = (-slope).max(0.0).sqrt();
        if decrement <= config.tol {
            break;
        }
        let mut t = 1.0;
        loop {
            let trial = &y + &step * t;
            let v = red.objective(model, &trial);
            if v.is_finite() && v <= value + 1e-4 * t * slope {
                y = trial;
                value = v;
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                // no further decrease representable
                return finish(&red, model, &y, value, iterations, decrement, m0, config);
            }
        }
        iterations += 1;
    }
    finish(&red, model, &y, value, iterations, decrement, m0, config)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    red: &Reduced,
    _model: &ModelSpec,
    y: &DVector<f64>,
    objective: f64,
    iterations: usize,
    decrement: f64,
    m0: &InitialDensity,
    config: &OracleConfig,
) -> Result<OracleSolution> {
    if decrement > config.tol && decrement > 1e-6 * (1.0 + objective.abs()) {
        return Err(Error::Oracle(format!(
            "Newton decrement {decrement:e} above tolerance after {iterations} iterations"
        )));
    }
    let grid = red.grid;
    let n = grid.slice_len();
    let dens = red.densities(y);
    let mut m = Vec::with_capacity((grid.nt + 1) * n);
    m.extend_from_slice(m0.slice());
    m.extend(dens.iter());
    let m_terminal = m[grid.nt * n..].to_vec();
    let comps = red
        .fluxes(y)
        .into_iter()
        .map(|c| ScalarField::from_values(grid, TimeLayout::Intervals, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleSolution {
        flow: FlowState {
            m: ScalarField::from_values(grid, TimeLayout::Nodes, m)?,
            w: VectorField::from_components(comps)?,
            m_terminal,
        },
        objective,
        iterations,
        decrement,
    })
}

struct Closure<'a>(&'a dyn Fn(&[f64]) -> f64);

impl CostFunction for Closure<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok((self.0)(x))
    }
}

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], size: f64, iters: u64) -> Result<Vec<f64>> {
    let mut simplex = vec![start.to_vec()];
    for j in 0..start.len() {
        let mut p = start.to_vec();
        p[j] += size;
        simplex.push(p);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(0.0)
        .map_err(|e| Error::Oracle(e.to_string()))?;
    let res = Executor::new(Closure(f), solver)
        .configure(|s| s.max_iters(iters))
        .run()
        .map_err(|e| Error::Oracle(e.to_string()))?;
    res.state()
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::Oracle("Nelder-Mead returned no point".into()))
}

/// Brute-force minimizer of `F(m) + P(m, w) + (|m - m_tilde|^2 + |w - w_tilde|^2) / (2 tau)`
/// over `m >= 0`, returned as `(m, w)`.
///
/// A coarse grid search seeds Nelder-Mead on the objective, which is then
/// polished by Nelder-Mead on the squared gradient, whose minimizer is
/// resolved to far below the square root of machine precision.
pub fn oracle_prox(model: &ModelSpec, m_tilde: f64, w_tilde: &[f64], tau: f64, cell: usize) -> Result<(f64, Vec<f64>)> {
    let d = w_tilde.len();
    if !(tau > 0.0) || d == 0 || d > 2 {
        return Err(Error::Oracle("prox oracle needs tau > 0 and 1 or 2 flux components".into()));
    }
    let objective = |x: &[f64]| -> f64 {
        let (m, w) = (x[0], &x[1..]);
        // finite penalty: Nelder-Mead mishandles infinite costs
        if m < 0.0 {
            return 1e100 * (1.0 - m);
        }
        let persp = model.perspective(m, w).min(1e100);
        let quad = (m - m_tilde).powi(2) + w.iter().zip(w_tilde).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        model.f_value(m, cell) + persp + quad / (2.0 * tau)
    };
    let stationarity = |x: &[f64]| -> f64 {
        let (m, w) = (x[0], &x[1..]);
        if m <= 0.0 {
            return 1e100 * (1.0 - m);
        }
        let (_, h) = perspective_hessian(model, m, w);
        let gm = model.f_derivative(m, cell) + h.grad_m + (m - m_tilde) / tau;
        let gw: f64 = (0..d).map(|a| (h.grad_w[a] + (w[a] - w_tilde[a]) / tau).powi(2)).sum();
        gm * gm + gw
    };

    // coarse search over a box that contains the minimizer
    let m_hi = m_tilde.max(0.0) + tau * model.big_c_h + 1.0;
    let w_rad = w_tilde.iter().map(|x| x.abs()).fold(0.0, f64::max) + 1.0;
    let steps = 40;
    let mut best = vec![0.0; d + 1];
    let mut best_val = objective(&best);
    let mut idx = vec![0usize; d + 1];
    loop {
        let mut x = vec![m_hi * idx[0] as f64 / steps as f64];
        for a in 0..d {
            x.push(w_tilde[a] - w_rad + 2.0 * w_rad * idx[a + 1] as f64 / steps as f64);
        }
        let v = objective(&x);
        if v < best_val {
            best_val = v;
            best = x;
        }
        let mut j = 0;
        while j <= d {
            idx[j] += 1;
            if idx[j] <= steps {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j > d {
            break;
        }
    }
    let coarse = nelder_mead(&objective, &best, m_hi / steps as f64, 4000)?;
    // a minimizer on the boundary m = 0 forces w = 0
    let origin = vec![0.0; d + 1];
    if coarse[0] < 1e-6 && objective(&origin) <= objective(&coarse) + 1e-14 {
        return Ok((0.0, vec![0.0; d]));
    }
    let fine = nelder_mead(&stationarity, &coarse, 1e-6 * (1.0 + coarse[0]), 4000)?;
    let pick = if objective(&fine) <= objective(&coarse) + 1e-12 { fine } else { coarse };
    Ok((pick[0], pick[1..].to_vec()))
}
