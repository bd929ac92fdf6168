//! Discrete kinetic continuity operator
//! `K(m, w) = d_t m + v . D_x m + div_v w` and its transpose.
//!
//! On interval `k` the residual is
//! `(m^{k+1} - m^k)/dt + v . D_x m^{k+1} + Div_v w^k`, with centered periodic
//! differences in `x` and centered differences in `v` that read zero outside
//! the box. The transpose, taken against a node field `u` paired row by row
//! with `u^k`, is
//!
//! ```text
//! K_m* u = -(u^{k+1} - u^k)/dt - v . D_x u^k      (interval k, pairs with m^{k+1})
//! K_w* u = -D_v u^k                               (zero on boundary velocity layers)
//! ```
//!
//! and the two are linked by the summation-by-parts identity
//! `<K(m,w), u> = <m, K_m* u> + <w, K_w* u> + <m^nt, u^nt> - <m^0, u^0>`.

use crate::error::{Error, Result};
use crate::grid::{integrate_slice, GridSpec, ScalarField, TimeLayout, VectorField};
use crate::model::InitialDensity;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Reachability threshold on the initial density.
pub const REACHABLE_THRESHOLD: f64 = 1e-14;

/// Precomputed neighbor tables for the centered stencils of one grid.
#[derive(Debug, Clone)]
pub struct ContinuityOperator {
    grid: GridSpec,
    /// `x_next[a][ix]`, `x_prev[a][ix]`: periodic neighbors along axis `a`.
    x_next: Vec<Vec<usize>>,
    x_prev: Vec<Vec<usize>>,
    v_next: Vec<Vec<Option<usize>>>,
    v_prev: Vec<Vec<Option<usize>>>,
    /// Velocity component `a` at flattened velocity index.
    v_comp: Vec<Vec<f64>>,
    boundary: Vec<bool>,
}

impl ContinuityOperator {
    pub fn new(grid: GridSpec) -> Self {
        let (nxd, nvd) = (grid.x_cells(), grid.v_cells());
        let d = grid.d;
        let x_next = (0..d).map(|a| (0..nxd).map(|ix| grid.x_neighbor(ix, a, 1)).collect()).collect();
        let x_prev = (0..d).map(|a| (0..nxd).map(|ix| grid.x_neighbor(ix, a, -1)).collect()).collect();
        let v_next = (0..d).map(|a| (0..nvd).map(|iv| grid.v_neighbor(iv, a, 1)).collect()).collect();
        let v_prev = (0..d).map(|a| (0..nvd).map(|iv| grid.v_neighbor(iv, a, -1)).collect()).collect();
        let v_comp = (0..d).map(|a| (0..nvd).map(|iv| grid.velocity(iv)[a]).collect()).collect();
        let boundary = (0..nvd).map(|iv| grid.on_velocity_boundary(iv)).collect();
        Self {
            grid,
            x_next,
            x_prev,
            v_next,
            v_prev,
            v_comp,
            boundary,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn is_boundary_velocity(&self, iv: usize) -> bool {
        self.boundary[iv]
    }

    /// `out += scale * v . D_x f` on one slice.
    pub fn add_x_transport(&self, f: &[f64], scale: f64, out: &mut [f64]) {
        let nvd = self.grid.v_cells();
        let c = scale / (2.0 * self.grid.dx);
        for a in 0..self.grid.d {
            let vc = &self.v_comp[a];
            for ix in 0..self.grid.x_cells() {
                let (p, m) = (self.x_next[a][ix] * nvd, self.x_prev[a][ix] * nvd);
                let row = ix * nvd;
                for iv in 0..nvd {
                    out[row + iv] += c * vc[iv] * (f[p + iv] - f[m + iv]);
                }
            }
        }
    }

    /// `out += scale * Div_v w` on one slice, `w` given per component.
    pub fn add_v_divergence(&self, w: &[&[f64]], scale: f64, out: &mut [f64]) {
        let nvd = self.grid.v_cells();
        let c = scale / (2.0 * self.grid.dv);
        for (a, wa) in w.iter().enumerate() {
            for ix in 0..self.grid.x_cells() {
                let row = ix * nvd;
                for iv in 0..nvd {
                    let up = self.v_next[a][iv].map_or(0.0, |j| wa[row + j]);
                    let dn = self.v_prev[a][iv].map_or(0.0, |j| wa[row + j]);
                    out[row + iv] += c * (up - dn);
                }
            }
        }
    }

    /// Centered `D_{v_a} u` on one slice, zero on boundary velocity layers.
    pub fn v_gradient(&self, u: &[f64], axis: usize, out: &mut [f64]) {
        let nvd = self.grid.v_cells();
        let c = 1.0 / (2.0 * self.grid.dv);
        for ix in 0..self.grid.x_cells() {
            let row = ix * nvd;
            for iv in 0..nvd {
                out[row + iv] = if self.boundary[iv] {
                    0.0
                } else {
                    let up = self.v_next[axis][iv].map_or(0.0, |j| u[row + j]);
                    let dn = self.v_prev[axis][iv].map_or(0.0, |j| u[row + j]);
                    c * (up - dn)
                };
            }
        }
    }

    /// Raw-slice residual of interval `k`; `m_prev`, `m_next` are nodes `k`, `k+1`.
    pub fn residual_slice(&self, m_prev: &[f64], m_next: &[f64], w: &[&[f64]], out: &mut [f64]) {
        let inv_dt = 1.0 / self.grid.dt;
        for ((o, a), b) in out.iter_mut().zip(m_next).zip(m_prev) {
            *o = (a - b) * inv_dt;
        }
        self.add_x_transport(m_next, 1.0, out);
        self.add_v_divergence(w, 1.0, out);
    }

    /// Raw-slice transpose on interval `k`: writes `K_m* u` into `out_m` and
    /// `K_w* u` into `out_w`.
    pub fn adjoint_slice(&self, u_k: &[f64], u_next: &[f64], out_m: &mut [f64], out_w: &mut [Vec<f64>]) {
        let inv_dt = 1.0 / self.grid.dt;
        for ((o, a), b) in out_m.iter_mut().zip(u_next).zip(u_k) {
            *o = -(a - b) * inv_dt;
        }
        self.add_x_transport(u_k, -1.0, out_m);
        for (axis, ow) in out_w.iter_mut().enumerate() {
            self.v_gradient(u_k, axis, ow);
            for x in ow.iter_mut() {
                *x = -*x;
            }
        }
    }

    fn check_m(&self, m: &ScalarField) -> Result<()> {
        if m.grid() != &self.grid || m.layout() != TimeLayout::Nodes {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Interval-in-time residual of the continuity equation.
    pub fn apply(&self, m: &ScalarField, w: &VectorField) -> Result<ScalarField> {
        self.check_m(m)?;
        if w.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let mut out = ScalarField::zeros(self.grid, TimeLayout::Intervals);
        for k in 0..self.grid.nt {
            let ws: Vec<&[f64]> = w.components().iter().map(|c| c.slice(k)).collect();
            let (prev, next) = (m.slice(k), m.slice(k + 1));
            self.residual_slice(prev, next, &ws, out.slice_mut(k));
        }
        Ok(out)
    }

    /// Transpose of [`apply`](Self::apply) against a node field.
    pub fn adjoint(&self, u: &ScalarField) -> Result<(ScalarField, VectorField)> {
        self.check_m(u)?;
        let n = self.grid.slice_len();
        let mut a = ScalarField::zeros(self.grid, TimeLayout::Intervals);
        let mut c = VectorField::zeros(self.grid);
        let mut buf = vec![vec![0.0; n]; self.grid.d];
        for k in 0..self.grid.nt {
            self.adjoint_slice(u.slice(k), u.slice(k + 1), a.slice_mut(k), &mut buf);
            for (axis, b) in buf.iter().enumerate() {
                c.component_mut(axis).slice_mut(k).copy_from_slice(b);
            }
        }
        Ok((a, c))
    }
}

pub fn apply_k(m: &ScalarField, w: &VectorField) -> Result<ScalarField> {
    ContinuityOperator::new(*m.grid()).apply(m, w)
}

pub fn apply_k_adjoint(u: &ScalarField) -> Result<(ScalarField, VectorField)> {
    ContinuityOperator::new(*u.grid()).adjoint(u)
}

/// Pairs `K(m, w)` with `u` as interval `k` against node `k`.
pub fn pair_residual(residual: &ScalarField, u: &ScalarField) -> Result<f64> {
    let grid = residual.grid();
    if residual.layout() != TimeLayout::Intervals || u.layout() != TimeLayout::Nodes || u.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let mut acc = 0.0;
    for k in 0..grid.nt {
        acc += residual.slice(k).iter().zip(u.slice(k)).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(acc * residual.measure())
}

/// Pairs an interval field with nodes `1..=nt` of `m`.
pub fn pair_shifted_density(m: &ScalarField, a: &ScalarField) -> Result<f64> {
    let grid = m.grid();
    if a.layout() != TimeLayout::Intervals || m.layout() != TimeLayout::Nodes || a.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let mut acc = 0.0;
    for k in 0..grid.nt {
        acc += m.slice(k + 1).iter().zip(a.slice(k)).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(acc * a.measure())
}

/// Boundary term `<m^nt, u^nt> - <m^0, u^0>` of the summation-by-parts identity.
pub fn boundary_pairing(m: &ScalarField, u: &ScalarField) -> Result<f64> {
    if !m.same_shape(u) || m.layout() != TimeLayout::Nodes {
        return Err(Error::GridMismatch);
    }
    let nt = m.grid().nt;
    let dotk = |k: usize| m.slice(k).iter().zip(u.slice(k)).map(|(a, b)| a * b).sum::<f64>();
    Ok((dotk(nt) - dotk(0)) * m.grid().cell_volume())
}

/// Mass `integrate_slice(m, k)` for every time node.
pub fn mass_per_slice(m: &ScalarField) -> Vec<f64> {
    (0..m.slices()).map(|k| integrate_slice(m, k).unwrap_or(f64::NAN)).collect()
}

/// First velocity moment `sum |v| m dx dv` per time node.
pub fn first_v_moment(m: &ScalarField) -> Vec<f64> {
    let grid = *m.grid();
    let nvd = grid.v_cells();
    let speeds: Vec<f64> = (0..nvd).map(|iv| grid.speed(iv)).collect();
    (0..m.slices())
        .map(|k| {
            m.slice(k)
                .chunks(nvd)
                .map(|row| row.iter().zip(&speeds).map(|(a, s)| a * s).sum::<f64>())
                .sum::<f64>()
                * grid.cell_volume()
        })
        .collect()
}

/// Free transport of the initial density: the discrete scheme's solution of
/// `K(m, 0) = 0` and the exact characteristic solution `m0(x - v t, v)`.
#[derive(Debug, Clone)]
pub struct FreeStreaming {
    pub discrete: ScalarField,
    pub continuum: ScalarField,
}

/// Runs both free-streaming solutions forward from `m0`.
///
/// Each implicit step `(I/dt + v . D_x) m^{k+1} = m^k / dt` is diagonal in the
/// discrete Fourier basis of the torus, with symbol
/// `1 + i dt sum_a v_a sin(2 pi k_a / nx) / dx`; its modulus is at least 1, so
/// the step is invertible for every `dt`.
pub fn free_streaming(m0: &InitialDensity, grid: &GridSpec) -> Result<FreeStreaming> {
    let discrete = discrete_free_streaming(m0.slice(), grid)?;
    let spec = &m0.spec;
    let continuum = ScalarField::from_fn(*grid, TimeLayout::Nodes, |t, x, v| {
        let mut shifted = x;
        for a in 0..grid.d {
            shifted[a] = x[a] - v[a] * t;
        }
        spec.eval(grid.d, shifted, v) / m0.normalization
    });
    Ok(FreeStreaming { discrete, continuum })
}

/// Discrete free streaming of an arbitrary initial slice.
pub fn discrete_free_streaming(m0: &[f64], grid: &GridSpec) -> Result<ScalarField> {
    let (nxd, nvd) = (grid.x_cells(), grid.v_cells());
    if m0.len() != grid.slice_len() {
        return Err(Error::GridMismatch);
    }
    let mut out = ScalarField::zeros(*grid, TimeLayout::Nodes);
    out.slice_mut(0).copy_from_slice(m0);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(grid.nx);
    let inv = planner.plan_fft_inverse(grid.nx);
    let sines: Vec<f64> = (0..grid.nx)
        .map(|k| (2.0 * std::f64::consts::PI * k as f64 / grid.nx as f64).sin() / grid.dx)
        .collect();
    let mut line = vec![Complex64::new(0.0, 0.0); nxd];
    for iv in 0..nvd {
        let v = grid.velocity(iv);
        // per-mode step multiplier 1 / symbol
        let mut mult = vec![Complex64::new(0.0, 0.0); nxd];
        for (ix, mm) in mult.iter_mut().enumerate() {
            let modes = grid.unflatten(ix, grid.nx);
            let im: f64 = (0..grid.d).map(|a| v[a] * sines[modes[a]]).sum::<f64>() * grid.dt;
            let symbol = Complex64::new(1.0, im);
            if symbol.norm() < 1.0 - 1e-12 {
                return Err(Error::SingularStep(format!("symbol modulus {} at velocity {iv}", symbol.norm())));
            }
            *mm = symbol.inv();
        }
        for ix in 0..nxd {
            line[ix] = Complex64::new(m0[ix * nvd + iv], 0.0);
        }
        fft_nd(&mut line, grid, &fwd);
        for k in 1..=grid.nt {
            for (l, mm) in line.iter_mut().zip(&mult) {
                *l *= mm;
            }
            let mut phys = line.clone();
            fft_nd(&mut phys, grid, &inv);
            let scale = 1.0 / nxd as f64;
            let slice = out.slice_mut(k);
            for ix in 0..nxd {
                slice[ix * nvd + iv] = phys[ix].re * scale;
            }
        }
    }
    Ok(out)
}

fn fft_nd(data: &mut [Complex64], grid: &GridSpec, plan: &std::sync::Arc<dyn rustfft::Fft<f64>>) {
    let n = grid.nx;
    if grid.d == 1 {
        plan.process(data);
        return;
    }
    // rows (second axis contiguous)
    for row in data.chunks_mut(n) {
        plan.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        plan.process(&mut col);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
}

/// Points reachable from the support of `m0`: everything for `t > 0`, and
/// `{m0 > threshold}` at `t = 0`. Laid out like a node field.
pub fn reachable_mask(m0: &[f64], grid: &GridSpec) -> Vec<bool> {
    let n = grid.slice_len();
    let mut mask = vec![true; (grid.nt + 1) * n];
    for (slot, v) in mask[..n].iter_mut().zip(m0) {
        *slot = *v > REACHABLE_THRESHOLD;
    }
    mask
}
