//! Velocity averages `rho(t, x) = int u(t, x, v) phi(v) dv` and their
//! translation modulus in `x`.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityAverage {
    pub grid: GridSpec,
    /// One row of `nx^d` values per time slice of the source field.
    pub rows: Vec<Vec<f64>>,
}

pub fn velocity_average(u: &ScalarField, phi: impl Fn([f64; 2]) -> f64) -> VelocityAverage {
    let grid = *u.grid();
    let (nxd, nvd) = (grid.x_cells(), grid.v_cells());
    let dvd = grid.dv.powi(grid.d as i32);
    let weights: Vec<f64> = (0..nvd).map(|iv| phi(grid.velocity(iv)) * dvd).collect();
    let rows = (0..u.slices())
        .map(|k| {
            let s = u.slice(k);
            (0..nxd)
                .map(|ix| s[ix * nvd..(ix + 1) * nvd].iter().zip(&weights).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    VelocityAverage { grid, rows }
}

/// `omega(h) = sum_t dt sum_x |rho(x + h e_1) - rho(x)| dx^d` for each `h`,
/// with periodic linear interpolation.
pub fn translation_modulus(avg: &VelocityAverage, ladder: &[f64]) -> Result<Vec<f64>> {
    let grid = avg.grid;
    if ladder.iter().any(|h| !h.is_finite()) {
        return Err(Error::Probe("non-finite translation".into()));
    }
    let nx = grid.nx;
    let dxd = grid.dx.powi(grid.d as i32);
    let stride = if grid.d == 2 { nx } else { 1 };
    Ok(ladder
        .iter()
        .map(|h| {
            let cells = h / grid.dx;
            let base = cells.floor();
            let frac = cells - base;
            let base = base as isize;
            let mut total = 0.0;
            for row in &avg.rows {
                let mut acc = 0.0;
                for (ix, r) in row.iter().enumerate() {
                    let i0 = (ix / stride) as isize;
                    let rest = ix % stride;
                    let at = |off: isize| row[((i0 + off).rem_euclid(nx as isize) as usize) * stride + rest];
                    let shifted = (1.0 - frac) * at(base) + frac * at(base + 1);
                    acc += (shifted - r).abs();
                }
                total += acc * dxd * grid.dt;
            }
            total
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeLayout;

    #[test]
    fn v_independent_field_with_unit_mass_weight() {
        let grid = GridSpec::new(1, 8, 8, 2, 1.0, 2.0).unwrap();
        let u = ScalarField::from_fn(grid, TimeLayout::Nodes, |t, x, _| t + (6.0 * x[0]).sin());
        let avg = velocity_average(&u, |_| 1.0 / (2.0 * grid.v_max));
        for (k, row) in avg.rows.iter().enumerate() {
            for (ix, r) in row.iter().enumerate() {
                assert!((r - u.get(k, ix, 0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn odd_field_even_weight_averages_to_zero() {
        let grid = GridSpec::new(1, 8, 10, 2, 1.0, 2.0).unwrap();
        let u = ScalarField::from_fn(grid, TimeLayout::Nodes, |_, x, v| v[0] * (1.0 + x[0]));
        let avg = velocity_average(&u, |v| (-v[0] * v[0]).exp());
        assert!(avg.rows.iter().flatten().all(|r| r.abs() < 1e-14));
    }

    #[test]
    fn modulus_vanishes_at_zero_and_full_period() {
        let grid = GridSpec::new(1, 16, 4, 2, 1.0, 2.0).unwrap();
        let u = ScalarField::from_fn(grid, TimeLayout::Nodes, |_, x, _| (6.283185307179586 * x[0]).cos());
        let avg = velocity_average(&u, |_| 1.0);
        let w = translation_modulus(&avg, &[0.0, 1.0, 0.25]).unwrap();
        assert!(w[0].abs() < 1e-15 && w[1].abs() < 1e-12);
        assert!(w[2] > 0.1);
    }
}
