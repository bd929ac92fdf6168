//! Computable certificates for a converged primal-dual pair.
//!
//! Everything here is a pure reduction of fields to numbers. Residuals that
//! involve `u` are restricted to cells where the density is bounded away from
//! zero, since the value function is not determined elsewhere.

mod averaging;
mod commutator;
mod regularity;
mod subsolution;

pub use averaging::{translation_modulus, velocity_average, VelocityAverage};
pub use commutator::{commutator_decay, CommutatorProbe, CommutatorTable};
pub use regularity::{regularity_quotient, CutoffPreset, RegularityProbe, RegularityReport};
pub use subsolution::{maximum_check, truncation_check, SubsolutionReport};

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TimeLayout};
use crate::model::ModelSpec;
use crate::solver::{energy_residual_raw, FlowState, ValueState};
use crate::transport::{mass_per_slice, ContinuityOperator};

/// Density threshold below which `u`-based residuals are not evaluated.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

fn check_pair(flow: &FlowState, value: &ValueState) -> Result<()> {
    if flow.m.grid() != value.u.grid() || value.u.layout() != TimeLayout::Nodes {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Relative residual `|LHS - RHS| / (1 + |RHS|)` of the energy equality
/// `sum m0 u0 - sum g(m_T) m_T = sum f(m) m dt + sum [D_pH(D_v u) . D_v u - H(D_v u)] m dt`.
pub fn energy_equality_residual(flow: &FlowState, value: &ValueState, model: &ModelSpec) -> Result<f64> {
    check_pair(flow, value)?;
    Ok(energy_residual_raw(
        flow.m.grid(),
        model,
        flow.m.values(),
        &flow.m_terminal,
        value.u.values(),
    ))
}

/// Pointwise Fenchel-Young gaps `F*(beta) + F(m) - beta m` and the terminal
/// analogue.
#[derive(Debug, Clone)]
pub struct FenchelYoungReport {
    /// Interval field; interval `k` uses `m^{k+1}`.
    pub running: ScalarField,
    pub terminal: Vec<f64>,
    /// Mass-weighted mean over both parts.
    pub weighted_mean: f64,
    /// Smallest pointwise value (nonnegative up to rounding).
    pub min: f64,
}

pub fn fenchel_young_residuals(flow: &FlowState, value: &ValueState, model: &ModelSpec) -> Result<FenchelYoungReport> {
    check_pair(flow, value)?;
    let grid = *flow.m.grid();
    let mut running = ScalarField::zeros(grid, TimeLayout::Intervals);
    let (mut num, mut den, mut min) = (0.0, 0.0, f64::INFINITY);
    for k in 0..grid.nt {
        let m = flow.m.slice(k + 1);
        let beta = value.beta.slice(k);
        let out = running.slice_mut(k);
        for i in 0..m.len() {
            let r = model.f_star(beta[i], i) + model.f_value(m[i], i) - beta[i] * m[i];
            out[i] = r;
            min = min.min(r);
            num += r * m[i] * grid.dt;
            den += m[i] * grid.dt;
        }
    }
    let terminal: Vec<f64> = flow
        .m_terminal
        .iter()
        .zip(&value.beta_terminal)
        .enumerate()
        .map(|(i, (&m, &b))| model.g_star(b, i) + model.g_value(m, i) - b * m)
        .collect();
    for (r, m) in terminal.iter().zip(&flow.m_terminal) {
        min = min.min(*r);
        num += r * m;
        den += m;
    }
    Ok(FenchelYoungReport {
        running,
        terminal,
        weighted_mean: if den > 0.0 { num / den } else { 0.0 },
        min,
    })
}

/// Optimality-coupling residuals on the support `{m > SUPPORT_THRESHOLD}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingResiduals {
    /// `sum m |beta - f(m)| / sum m`.
    pub running: f64,
    /// `sum m_T |beta_T - g(m_T)| / sum m_T`.
    pub terminal: f64,
    /// `sum |w + m D_pH(D_v u)| / sum m`, which stays meaningful when `w` vanishes.
    pub flux: f64,
}

impl CouplingResiduals {
    pub fn max(&self) -> f64 {
        self.running.max(self.terminal).max(self.flux)
    }
}

pub fn coupling_residuals(flow: &FlowState, value: &ValueState, model: &ModelSpec) -> Result<CouplingResiduals> {
    check_pair(flow, value)?;
    let grid = *flow.m.grid();
    let op = ContinuityOperator::new(grid);
    let (n, d) = (grid.slice_len(), grid.d);
    let mut grads = vec![vec![0.0; n]; d];
    let (mut p, mut dh) = ([0.0; 2], [0.0; 2]);
    let (mut rb, mut mb, mut rw) = (0.0, 0.0, 0.0);
    for k in 0..grid.nt {
        let m = flow.m.slice(k + 1);
        let beta = value.beta.slice(k);
        for (a, g) in grads.iter_mut().enumerate() {
            op.v_gradient(value.u.slice(k), a, g);
        }
        for i in 0..n {
            if m[i] <= SUPPORT_THRESHOLD {
                continue;
            }
            rb += m[i] * (beta[i] - model.f_derivative(m[i], i)).abs();
            mb += m[i];
            for a in 0..d {
                p[a] = grads[a][i];
            }
            model.h_gradient(&p[..d], &mut dh[..d]);
            let mut diff = 0.0;
            for a in 0..d {
                let w = flow.w.component(a).slice(k)[i];
                diff += (w + m[i] * dh[a]).powi(2);
            }
            rw += diff.sqrt();
        }
    }
    let (mut rt, mut mt) = (0.0, 0.0);
    for (i, (&m, &b)) in flow.m_terminal.iter().zip(&value.beta_terminal).enumerate() {
        if m > SUPPORT_THRESHOLD {
            rt += m * (b - model.g_derivative(m, i)).abs();
            mt += m;
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { a };
    Ok(CouplingResiduals {
        running: ratio(rb, mb),
        terminal: ratio(rt, mt),
        flux: ratio(rw, mb),
    })
}

/// Largest deviation of any slice mass from the initial one.
pub fn mass_drift(flow: &FlowState) -> f64 {
    let masses = mass_per_slice(&flow.m);
    let vol = flow.m.grid().cell_volume();
    let terminal: f64 = flow.m_terminal.iter().sum::<f64>() * vol;
    masses
        .iter()
        .chain(std::iter::once(&terminal))
        .map(|m| (m - masses[0]).abs())
        .fold(0.0, f64::max)
}

/// Distances between two converged runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniquenessReport {
    /// `sum |m1 - m2| vol` over all nodes.
    pub density_l1: f64,
    /// `sum |u1 - u2| vol` over nodes where both densities exceed the threshold.
    pub value_l1: f64,
    pub threshold: f64,
}

pub fn uniqueness_probe(a: (&FlowState, &ValueState), b: (&FlowState, &ValueState), threshold: f64) -> Result<UniquenessReport> {
    check_pair(a.0, a.1)?;
    check_pair(b.0, b.1)?;
    if a.0.m.grid() != b.0.m.grid() {
        return Err(Error::GridMismatch);
    }
    let vol = a.0.m.grid().cell_volume();
    let density_l1 = a.0.m.values().iter().zip(b.0.m.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() * vol;
    let value_l1 = a
        .0
        .m
        .values()
        .iter()
        .zip(b.0.m.values())
        .zip(a.1.u.values().iter().zip(b.1.u.values()))
        .filter(|((m1, m2), _)| **m1 > threshold && **m2 > threshold)
        .map(|(_, (u1, u2))| (u1 - u2).abs())
        .sum::<f64>()
        * vol;
    Ok(UniquenessReport {
        density_l1,
        value_l1,
        threshold,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Probe("slope fit needs at least two paired samples".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Probe("slope fit needs positive finite samples".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}
