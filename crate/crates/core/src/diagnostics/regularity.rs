//! Difference quotients under kinetic shifts `(x + eta(t) delta, v + zeta(t) delta)`.

use super::loglog_slope;
use crate::error::{Error, Result};
use crate::grid::shift_slice;
use crate::model::ModelSpec;
use crate::solver::{FlowState, ValueState};
use crate::transport::ContinuityOperator;

/// Choice of time cutoffs; both satisfy `zeta = eta'` and vanish on `[0, t0/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffPreset {
    /// `zeta` rises to 1 over `[t0/2, t0]`; for `t > t0` the shift acts like `(t D_x + D_v)`.
    Kinetic,
    /// `eta` rises to 1 over `[t0/2, t0]`; for `t > t0` the shift is a pure `x` translation.
    Spatial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityProbe {
    pub preset: CutoffPreset,
    pub t0: f64,
    /// Shift direction, normalized internally.
    pub direction: Vec<f64>,
    /// Shift magnitudes `|delta|`.
    pub ladder: Vec<f64>,
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl RegularityProbe {
    /// Ladder `{1/4, 1/2, 1, 2} * dv` along the first axis with `t0 = T / 2`.
    pub fn standard(preset: CutoffPreset, d: usize, dv: f64, horizon: f64) -> Self {
        let mut direction = vec![0.0; d];
        direction[0] = 1.0;
        Self {
            preset,
            t0: 0.5 * horizon,
            direction,
            ladder: [0.25, 0.5, 1.0, 2.0].iter().map(|f| f * dv).collect(),
        }
    }

    /// `(eta(t), zeta(t))`.
    pub fn cutoffs(&self, t: f64) -> (f64, f64) {
        let h = 0.5 * self.t0;
        if t <= h {
            return (0.0, 0.0);
        }
        let s = ((t - h) / h).min(1.0);
        match self.preset {
            CutoffPreset::Kinetic => {
                // eta = int zeta, zeta = smoothstep
                let ramp = h * (s * s * s - 0.5 * s * s * s * s);
                let eta = ramp + (t - self.t0).max(0.0);
                (eta, smoothstep(s))
            }
            CutoffPreset::Spatial => {
                let zeta = if t < self.t0 { 6.0 * s * (1.0 - s) / h } else { 0.0 };
                (smoothstep(s), zeta)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub deltas: Vec<f64>,
    pub lhs: Vec<f64>,
    /// `lhs / |delta|^2`.
    pub ratios: Vec<f64>,
    /// `max ratio / min ratio`.
    pub spread: f64,
    /// Log-log slope of `lhs` against `|delta|`.
    pub slope: f64,
}

/// `min{a^(q-2), b^(q-2)}` with the convention that a vanishing density
/// has weight `+inf` when `q < 2`.
fn min_power(a: f64, b: f64, q: f64) -> f64 {
    if q == 2.0 {
        return 1.0;
    }
    const FLOOR: f64 = 1e-12;
    let (za, zb) = (a <= FLOOR, b <= FLOOR);
    match (za, zb) {
        (true, true) => 0.0,
        (true, false) => b.powf(q - 2.0),
        (false, true) => a.powf(q - 2.0),
        (false, false) => a.powf(q - 2.0).min(b.powf(q - 2.0)),
    }
}

/// Left side of the fundamental quotient bound with unit constants:
/// `sum |D_v u^{-delta} - D_v u^{delta}|^2 m + 1/2 sum min{..} |m^delta - m|^2`
/// over intervals plus the terminal term with `T`.
pub fn regularity_quotient(
    flow: &FlowState,
    value: &ValueState,
    probe: &RegularityProbe,
    model: &ModelSpec,
) -> Result<RegularityReport> {
    let grid = *flow.m.grid();
    if value.u.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    if model.r != 2.0 {
        return Err(Error::Probe("regularity quotient needs r = 2".into()));
    }
    if probe.direction.len() != grid.d || !(probe.t0 > 0.0 && probe.t0 < grid.horizon) {
        return Err(Error::Probe("probe direction or t0 incompatible with the grid".into()));
    }
    let norm = probe.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Probe("zero shift direction".into()));
    }
    let zeta_max = (0..=grid.nt).map(|k| probe.cutoffs(grid.time(k)).1.abs()).fold(0.0, f64::max);
    let (n, d) = (grid.slice_len(), grid.d);
    let op = ContinuityOperator::new(grid);
    let vol = grid.cell_volume();

    // D_v u per interval, component-wise
    let mut dvu = vec![vec![vec![0.0; n]; d]; grid.nt];
    for (k, g) in dvu.iter_mut().enumerate() {
        for (a, ga) in g.iter_mut().enumerate() {
            op.v_gradient(value.u.slice(k), a, ga);
        }
    }

    let mut lhs = Vec::with_capacity(probe.ladder.len());
    for &mag in &probe.ladder {
        if mag < 0.0 {
            return Err(Error::Probe(format!("negative shift magnitude {mag}")));
        }
        if zeta_max * mag >= 2.0 * grid.v_max {
            return Err(Error::Probe(format!(
                "velocity shift {:.3e} leaves the interpolation range of the box (v_max {})",
                zeta_max * mag,
                grid.v_max
            )));
        }
        let delta: Vec<f64> = probe.direction.iter().map(|c| c * mag / norm).collect();
        let minus: Vec<f64> = delta.iter().map(|c| -c).collect();
        let mut total = 0.0;
        for k in 0..grid.nt {
            let (eta, zeta) = probe.cutoffs(grid.time(k + 1));
            let m = flow.m.slice(k + 1);
            let mut u_term = vec![0.0; n];
            for ga in &dvu[k] {
                let plus = shift_slice(ga, &grid, &delta, eta, zeta);
                let back = shift_slice(ga, &grid, &minus, eta, zeta);
                for i in 0..n {
                    u_term[i] += (back[i] - plus[i]).powi(2);
                }
            }
            let ms = shift_slice(m, &grid, &delta, eta, zeta);
            let mut acc = 0.0;
            for i in 0..n {
                acc += u_term[i] * m[i] + 0.5 * min_power(ms[i], m[i], model.q) * (ms[i] - m[i]).powi(2);
            }
            total += acc * vol * grid.dt;
        }
        let (eta, zeta) = probe.cutoffs(grid.horizon);
        let mt = &flow.m_terminal;
        let ms = shift_slice(mt, &grid, &delta, eta, zeta);
        let term: f64 = (0..n)
            .map(|i| 0.5 * min_power(ms[i], mt[i], model.s) * (ms[i] - mt[i]).powi(2))
            .sum();
        total += term * vol;
        lhs.push(total);
    }
    let ratios: Vec<f64> = lhs
        .iter()
        .zip(&probe.ladder)
        .map(|(l, m)| if *m > 0.0 { l / (m * m) } else { 0.0 })
        .collect();
    let positive: Vec<f64> = ratios.iter().copied().filter(|r| *r > 0.0).collect();
    let spread = if positive.is_empty() {
        f64::NAN
    } else {
        positive.iter().fold(0.0f64, |a, b| a.max(*b)) / positive.iter().fold(f64::INFINITY, |a, b| a.min(*b))
    };
    let fit: Vec<(f64, f64)> = probe
        .ladder
        .iter()
        .zip(&lhs)
        .filter(|(m, l)| **m > 0.0 && **l > 0.0)
        .map(|(m, l)| (*m, *l))
        .collect();
    let slope = if fit.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = fit.into_iter().unzip();
        loglog_slope(&xs, &ys)?
    } else {
        f64::NAN
    };
    Ok(RegularityReport {
        deltas: probe.ladder.clone(),
        lhs,
        ratios,
        spread,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, ScalarField, TimeLayout, VectorField};
    use crate::solver::recover_value_state;

    #[test]
    fn cutoffs_satisfy_derivative_relation() {
        for preset in [CutoffPreset::Kinetic, CutoffPreset::Spatial] {
            let p = RegularityProbe::standard(preset, 1, 0.25, 1.0);
            assert_eq!(p.cutoffs(0.0), (0.0, 0.0));
            let h = 1e-6;
            let mut prev = 0.0;
            for i in 1..100 {
                let t = i as f64 / 100.0;
                let (eta, zeta) = p.cutoffs(t);
                let fd = (p.cutoffs(t + h).0 - p.cutoffs(t - h).0) / (2.0 * h);
                assert!((fd - zeta).abs() < 1e-4, "{preset:?} t={t}: {fd} vs {zeta}");
                assert!(eta >= prev);
                prev = eta;
            }
        }
        let k = RegularityProbe::standard(CutoffPreset::Kinetic, 1, 0.25, 1.0);
        assert_eq!(k.cutoffs(0.9).1, 1.0);
        let s = RegularityProbe::standard(CutoffPreset::Spatial, 1, 0.25, 1.0);
        assert_eq!(s.cutoffs(0.9), (1.0, 0.0));
    }

    #[test]
    fn min_power_conventions() {
        assert_eq!(min_power(0.0, 0.0, 1.5), 0.0);
        assert_eq!(min_power(0.0, 4.0, 1.5), 0.5);
        assert_eq!(min_power(4.0, 1.0, 3.0), 1.0);
        assert_eq!(min_power(0.0, 7.0, 2.0), 1.0);
    }

    #[test]
    fn constant_density_spatial_shift() {
        let grid = GridSpec::new(1, 8, 8, 4, 1.0, 2.0).unwrap();
        let m = ScalarField::constant(grid, TimeLayout::Nodes, 0.25);
        let flow = FlowState {
            m_terminal: m.slice(grid.nt).to_vec(),
            m,
            w: VectorField::zeros(grid),
        };
        let u = ScalarField::from_fn(grid, TimeLayout::Nodes, |_, _, v| v[0] * v[0]);
        let value = recover_value_state(&u, &ModelSpec::default()).unwrap();
        let mut probe = RegularityProbe::standard(CutoffPreset::Spatial, 1, grid.dv, 1.0);
        probe.ladder.insert(0, 0.0);
        // ramp finished before the first grid time: a pure x translation
        probe.t0 = 0.5 * grid.dt;
        let rep = regularity_quotient(&flow, &value, &probe, &ModelSpec::default()).unwrap();
        assert!(rep.lhs.iter().all(|l| l.abs() < 1e-14), "{:?}", rep.lhs);
    }

    #[test]
    fn oversized_shift_is_rejected() {
        let grid = GridSpec::new(1, 8, 8, 4, 1.0, 2.0).unwrap();
        let m = ScalarField::constant(grid, TimeLayout::Nodes, 0.25);
        let flow = FlowState {
            m_terminal: m.slice(grid.nt).to_vec(),
            m,
            w: VectorField::zeros(grid),
        };
        let value = recover_value_state(&ScalarField::zeros(grid, TimeLayout::Nodes), &ModelSpec::default()).unwrap();
        let mut probe = RegularityProbe::standard(CutoffPreset::Kinetic, 1, grid.dv, 1.0);
        probe.ladder = vec![5.0];
        assert!(matches!(
            regularity_quotient(&flow, &value, &probe, &ModelSpec::default()),
            Err(Error::Probe(_))
        ));
    }
}
