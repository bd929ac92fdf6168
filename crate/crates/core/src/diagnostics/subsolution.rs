//! Cellwise Hamilton-Jacobi subsolution checks for truncations `(u - l)_+`
//! and maxima `max(u1, u2)`.
//!
//! Discrete derivatives of a kinked field are not subsolution-exact where the
//! stencil straddles the kink, so cells whose stencil touches both signs of
//! `g = u - l` (or `g = u1 - u2`) are excluded. This is the one-cell dilation
//! of the interface `{g = 0}`.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, TimeLayout};
use crate::model::ModelSpec;
use crate::solver::{FlowState, ValueState};
use crate::transport::ContinuityOperator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsolutionReport {
    /// Interval cells examined, kink cells excluded.
    pub cells_checked: usize,
    pub kink_cells: usize,
    /// Cells above the stencil allowance.
    pub violations: usize,
    /// Cells above a round-off allowance of `1e-10 (1 + |rhs|)`.
    pub strict_violations: usize,
    /// `violations / cells_checked`.
    pub violation_fraction: f64,
    /// Largest positive `lhs - rhs` off the kink set.
    pub max_excess: f64,
    /// Terminal cells with `u_T > bound + 1e-12`.
    pub terminal_violations: usize,
}

/// Marks interval cells whose stencil mixes `g > 0` and `g <= 0` nodes.
fn kink_mask(grid: &GridSpec, g: &[f64]) -> Vec<bool> {
    let (n, nt, d) = (grid.slice_len(), grid.nt, grid.d);
    let nvd = grid.v_cells();
    let upper: Vec<bool> = g.iter().map(|x| *x > 0.0).collect();
    let mut mask = vec![false; nt * n];
    for k in 0..nt {
        for i in 0..n {
            let (ix, iv) = (i / nvd, i % nvd);
            let first = upper[k * n + i];
            let mut hit = false;
            for node in [k, k + 1] {
                let base = node * n;
                hit |= upper[base + i] != first;
                for a in 0..d {
                    for off in [-1isize, 1] {
                        let jx = grid.x_neighbor(ix, a, off);
                        hit |= upper[base + jx * nvd + iv] != first;
                        if let Some(jv) = grid.v_neighbor(iv, a, off) {
                            hit |= upper[base + ix * nvd + jv] != first;
                        }
                    }
                }
            }
            mask[k * n + i] = hit;
        }
    }
    mask
}

/// Evaluates `-dt w - v.D_x w + H(D_v w) 1 <= beta 1` on every interval cell.
#[allow(clippy::too_many_arguments)]
fn check(
    op: &ContinuityOperator,
    model: &ModelSpec,
    w: &ScalarField,
    active: &[bool],
    beta: &ScalarField,
    kinks: &[bool],
    terminal: &[f64],
    terminal_bound: &[f64],
) -> SubsolutionReport {
    let grid = *op.grid();
    let (n, nt, d) = (grid.slice_len(), grid.nt, grid.d);
    let mut lhs = vec![0.0; n];
    let mut grads = vec![vec![0.0; n]; d];
    let mut p = [0.0; 2];
    let allowance = 10.0 * (grid.dx + grid.dv + grid.dt);
    let mut rep = SubsolutionReport {
        cells_checked: 0,
        kink_cells: 0,
        violations: 0,
        strict_violations: 0,
        violation_fraction: 0.0,
        max_excess: 0.0,
        terminal_violations: 0,
    };
    let inv_dt = 1.0 / grid.dt;
    for k in 0..nt {
        let (wk, wn) = (w.slice(k), w.slice(k + 1));
        op.adjoint_slice(wk, wn, &mut lhs, &mut grads);
        for i in 0..n {
            let idx = k * n + i;
            if kinks[idx] {
                rep.kink_cells += 1;
                continue;
            }
            rep.cells_checked += 1;
            let on = active[idx];
            let mut value = lhs[i];
            let mut lip = ((wn[i] - wk[i]) * inv_dt).abs();
            for a in 0..d {
                p[a] = -grads[a][i];
                lip = lip.max(p[a].abs());
            }
            if on {
                value += model.h_value(&p[..d]);
            }
            let rhs = if on { beta.slice(k)[i] } else { 0.0 };
            let excess = value - rhs;
            // x-direction difference enters through the transport term
            let ix = i / grid.v_cells();
            let iv = i % grid.v_cells();
            for a in 0..d {
                let jp = grid.x_neighbor(ix, a, 1) * grid.v_cells() + iv;
                let jm = grid.x_neighbor(ix, a, -1) * grid.v_cells() + iv;
                lip = lip.max(((wk[jp] - wk[jm]) / (2.0 * grid.dx)).abs());
            }
            if excess > 1e-10 * (1.0 + rhs.abs()) {
                rep.strict_violations += 1;
            }
            if excess > allowance * lip + 1e-10 * (1.0 + rhs.abs()) {
                rep.violations += 1;
            }
            rep.max_excess = rep.max_excess.max(excess);
        }
    }
    rep.violation_fraction = if rep.cells_checked > 0 {
        rep.violations as f64 / rep.cells_checked as f64
    } else {
        0.0
    };
    rep.terminal_violations = terminal
        .iter()
        .zip(terminal_bound)
        .filter(|(a, b)| **a > **b + 1e-12 * (1.0 + b.abs()))
        .count();
    rep
}

/// Checks the truncation `(u - l)_+` against `beta 1_{u > l}` and the
/// terminal bound `(beta_T - l)_+`.
pub fn truncation_check(value: &ValueState, flow: &FlowState, l: f64, model: &ModelSpec) -> Result<SubsolutionReport> {
    let grid = *value.u.grid();
    if flow.m.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    let op = ContinuityOperator::new(grid);
    let n = grid.slice_len();
    let mut w = value.u.clone();
    for x in w.values_mut() {
        *x = (*x - l).max(0.0);
    }
    let active: Vec<bool> = value.u.values()[..grid.nt * n].iter().map(|u| *u > l).collect();
    let g: Vec<f64> = value.u.values().iter().map(|u| u - l).collect();
    let kinks = kink_mask(&grid, &g);
    let bound: Vec<f64> = value.beta_terminal.iter().map(|b| (b - l).max(0.0)).collect();
    Ok(check(&op, model, &w, &active, &value.beta, &kinks, w.slice(grid.nt), &bound))
}

/// Checks `max(u1, u2)` against a shared `beta` and `beta_T`.
pub fn maximum_check(
    u1: &ScalarField,
    u2: &ScalarField,
    beta: &ScalarField,
    beta_terminal: &[f64],
    model: &ModelSpec,
) -> Result<SubsolutionReport> {
    let grid = *u1.grid();
    if u2.grid() != &grid || beta.grid() != &grid || beta.layout() != TimeLayout::Intervals {
        return Err(Error::GridMismatch);
    }
    let op = ContinuityOperator::new(grid);
    let vals: Vec<f64> = u1.values().iter().zip(u2.values()).map(|(a, b)| a.max(*b)).collect();
    let w = ScalarField::from_values(grid, TimeLayout::Nodes, vals)?;
    let active = vec![true; grid.nt * grid.slice_len()];
    let g: Vec<f64> = u1.values().iter().zip(u2.values()).map(|(a, b)| a - b).collect();
    let kinks = kink_mask(&grid, &g);
    Ok(check(&op, model, &w, &active, beta, &kinks, w.slice(grid.nt), beta_terminal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VectorField;
    use crate::solver::recover_value_state;

    fn sample() -> (GridSpec, ValueState, FlowState, ModelSpec) {
        let grid = GridSpec::new(1, 8, 8, 6, 1.0, 2.0).unwrap();
        let model = ModelSpec::default();
        let u = ScalarField::from_fn(grid, TimeLayout::Nodes, |t, x, v| {
            (1.0 - t) * (0.5 + (6.283185307179586 * x[0]).cos() * 0.3) + 0.2 * v[0] * v[0]
        });
        let value = recover_value_state(&u, &model).unwrap();
        let m = ScalarField::constant(grid, TimeLayout::Nodes, 0.25);
        let flow = FlowState {
            m_terminal: m.slice(grid.nt).to_vec(),
            m,
            w: VectorField::zeros(grid),
        };
        (grid, value, flow, model)
    }

    #[test]
    fn inactive_truncation_is_the_identity() {
        let (_, value, flow, model) = sample();
        let min = value.u.values().iter().fold(f64::INFINITY, |a, b| a.min(*b));
        let rep = truncation_check(&value, &flow, min - 1.0, &model).unwrap();
        assert_eq!(rep.kink_cells, 0);
        assert_eq!(rep.strict_violations, 0);
        assert!(rep.max_excess <= 1e-10);
        assert_eq!(rep.terminal_violations, 0);
    }

    #[test]
    fn truncation_above_max_is_trivial() {
        let (_, value, flow, model) = sample();
        let max = value.u.values().iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let rep = truncation_check(&value, &flow, max + 1.0, &model).unwrap();
        assert_eq!(rep.strict_violations, 0);
        assert_eq!(rep.max_excess, 0.0);
    }

    #[test]
    fn maximum_of_shifted_copy_is_exact() {
        let (_, value, _, model) = sample();
        let mut lower = value.u.clone();
        for x in lower.values_mut() {
            *x -= 3.0;
        }
        for other in [&value.u, &lower] {
            let rep = maximum_check(&value.u, other, &value.beta, &value.beta_terminal, &model).unwrap();
            assert_eq!(rep.strict_violations, 0);
            assert_eq!(rep.kink_cells, 0);
            assert_eq!(rep.terminal_violations, 0);
        }
    }
}
