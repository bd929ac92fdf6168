//! Commutator between free transport and velocity mollification.
//!
//! With `h = psi_dx *_x m`, the commutator
//! `v . D_x (chi_eps *_v h) - chi_eps *_v (v . D_x h)` equals
//! `(v chi_eps) *_v D_x h` exactly, also on the grid, because the discrete
//! convolution and the discrete `D_x` act on different variables.

use super::loglog_slope;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorProbe {
    /// Velocity mollifier half-widths.
    pub eps: Vec<f64>,
    /// Position mollifier half-widths.
    pub delta_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorTable {
    pub eps: Vec<f64>,
    pub delta_x: Vec<f64>,
    /// `norms[i][j]`: L1 norm at `eps[i]`, `delta_x[j]`.
    pub norms: Vec<Vec<f64>>,
    /// Largest relative disagreement between the two evaluation paths.
    pub path_disagreement: f64,
    /// Slope in `eps` for each fixed `delta_x[j]`; NaN when a norm vanishes.
    pub eps_slopes: Vec<f64>,
    /// Slope in `delta_x` for each fixed `eps[i]`.
    pub delta_slopes: Vec<f64>,
}

fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Kernel samples `k[o] = kernel(o * h)` for `o` in `-r..=r`, normalized to
/// unit discrete mass.
fn kernel(width: f64, h: f64) -> Vec<f64> {
    let r = (width / h).ceil() as isize;
    let raw: Vec<f64> = (-r..=r).map(|o| bump(o as f64 * h / width)).collect();
    let mass: f64 = raw.iter().sum::<f64>() * h;
    raw.into_iter().map(|x| x / mass).collect()
}

/// Discrete `sum_j k(v_i - v_j) g_j dv` on one x-row, zero outside the box.
fn convolve_v(row: &[f64], k: &[f64], h: f64, out: &mut [f64]) {
    let n = row.len() as isize;
    let r = (k.len() / 2) as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for off in -r..=r {
            let j = i as isize - off;
            if (0..n).contains(&j) {
                acc += k[(off + r) as usize] * row[j as usize];
            }
        }
        *o = acc * h;
    }
}

/// Periodic `x` convolution of one slice.
fn convolve_x(slice: &[f64], grid: &GridSpec, k: &[f64]) -> Vec<f64> {
    let (nx, nv) = (grid.nx, grid.nv);
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; slice.len()];
    for ix in 0..nx {
        for off in -r..=r {
            let jx = (ix as isize - off).rem_euclid(nx as isize) as usize;
            let w = k[(off + r) as usize] * grid.dx;
            for iv in 0..nv {
                out[ix * nv + iv] += w * slice[jx * nv + iv];
            }
        }
    }
    out
}

fn d_x(slice: &[f64], grid: &GridSpec) -> Vec<f64> {
    let (nx, nv) = (grid.nx, grid.nv);
    let mut out = vec![0.0; slice.len()];
    for ix in 0..nx {
        let (p, m) = ((ix + 1) % nx, (ix + nx - 1) % nx);
        for iv in 0..nv {
            out[ix * nv + iv] = (slice[p * nv + iv] - slice[m * nv + iv]) / (2.0 * grid.dx);
        }
    }
    out
}

fn v_times(slice: &[f64], grid: &GridSpec) -> Vec<f64> {
    let nv = grid.nv;
    slice
        .iter()
        .enumerate()
        .map(|(i, x)| x * grid.velocity_node(i % nv))
        .collect()
}

fn v_convolve_slice(slice: &[f64], grid: &GridSpec, k: &[f64]) -> Vec<f64> {
    let nv = grid.nv;
    let mut out = vec![0.0; slice.len()];
    for (row, o) in slice.chunks(nv).zip(out.chunks_mut(nv)) {
        convolve_v(row, k, grid.dv, o);
    }
    out
}

/// L1 norms of the commutator over an `(eps, delta_x)` table, summed over all
/// time nodes of `m` with weight `dt`. One spatial dimension only.
pub fn commutator_decay(m: &ScalarField, probe: &CommutatorProbe) -> Result<CommutatorTable> {
    let grid = *m.grid();
    if grid.d != 1 {
        return Err(Error::Probe("commutator probe is implemented for d = 1".into()));
    }
    if probe.eps.is_empty() || probe.delta_x.is_empty() {
        return Err(Error::Probe("empty mollifier ladder".into()));
    }
    for &e in &probe.eps {
        if !(e > 0.0) || e >= grid.v_max {
            return Err(Error::Probe(format!("velocity mollifier width {e} exceeds the box half-width {}", grid.v_max)));
        }
    }
    for &dx in &probe.delta_x {
        if !(dx > 0.0) || dx >= 0.5 {
            return Err(Error::Probe(format!("position mollifier width {dx} exceeds half the torus")));
        }
    }
    let vol = grid.cell_volume();
    let mut norms = vec![vec![0.0; probe.delta_x.len()]; probe.eps.len()];
    let mut disagreement: f64 = 0.0;
    for (j, &dxw) in probe.delta_x.iter().enumerate() {
        let kx = kernel(dxw, grid.dx);
        let hs: Vec<Vec<f64>> = (0..m.slices()).map(|k| convolve_x(m.slice(k), &grid, &kx)).collect();
        for (i, &e) in probe.eps.iter().enumerate() {
            let kv = kernel(e, grid.dv);
            let r = (kv.len() / 2) as isize;
            let vk: Vec<f64> = kv.iter().enumerate().map(|(o, k)| (o as isize - r) as f64 * grid.dv * k).collect();
            let mut total = 0.0;
            for h in &hs {
                // definition path
                let a = v_times(&d_x(&v_convolve_slice(h, &grid, &kv), &grid), &grid);
                let b = v_convolve_slice(&v_times(&d_x(h, &grid), &grid), &grid, &kv);
                // identity path
                let c = v_convolve_slice(&d_x(h, &grid), &grid, &vk);
                let mut scale: f64 = 0.0;
                let mut diff: f64 = 0.0;
                let mut l1 = 0.0;
                for t in 0..c.len() {
                    let def = a[t] - b[t];
                    diff = diff.max((def - c[t]).abs());
                    scale = scale.max(c[t].abs());
                    l1 += c[t].abs();
                }
                if scale > 0.0 {
                    disagreement = disagreement.max(diff / scale);
                } else {
                    disagreement = disagreement.max(diff);
                }
                total += l1 * vol * grid.dt;
            }
            norms[i][j] = total;
        }
    }
    let eps_slopes = if probe.eps.len() >= 2 {
        (0..probe.delta_x.len())
            .map(|j| {
                let ys: Vec<f64> = norms.iter().map(|row| row[j]).collect();
                loglog_slope(&probe.eps, &ys).unwrap_or(f64::NAN)
            })
            .collect()
    } else {
        Vec::new()
    };
    let delta_slopes = if probe.delta_x.len() >= 2 {
        norms
            .iter()
            .map(|row| loglog_slope(&probe.delta_x, row).unwrap_or(f64::NAN))
            .collect()
    } else {
        Vec::new()
    };
    Ok(CommutatorTable {
        eps: probe.eps.clone(),
        delta_x: probe.delta_x.clone(),
        norms,
        path_disagreement: disagreement,
        eps_slopes,
        delta_slopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeLayout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernels_have_unit_mass() {
        let k = kernel(0.3, 0.01);
        assert!((k.iter().sum::<f64>() * 0.01 - 1.0).abs() < 1e-14);
        assert_eq!(k.len(), 61);
    }

    #[test]
    fn x_independent_density_has_no_commutator() {
        let grid = GridSpec::new(1, 16, 32, 2, 1.0, 2.0).unwrap();
        let m = ScalarField::from_fn(grid, TimeLayout::Nodes, |_, _, v| (-v[0] * v[0]).exp());
        let probe = CommutatorProbe {
            eps: vec![0.3, 0.6],
            delta_x: vec![0.1, 0.2],
        };
        let table = commutator_decay(&m, &probe).unwrap();
        assert!(table.norms.iter().flatten().all(|n| *n == 0.0));
    }

    #[test]
    fn paths_agree_on_random_density() {
        let grid = GridSpec::new(1, 24, 24, 2, 1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals = (0..3 * grid.slice_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = ScalarField::from_values(grid, TimeLayout::Nodes, vals).unwrap();
        let probe = CommutatorProbe {
            eps: vec![0.4, 0.8],
            delta_x: vec![0.1, 0.2],
        };
        let table = commutator_decay(&m, &probe).unwrap();
        assert!(table.path_disagreement <= 1e-10, "{}", table.path_disagreement);
    }

    #[test]
    fn oversized_mollifiers_are_rejected() {
        let grid = GridSpec::new(1, 8, 8, 2, 1.0, 1.0).unwrap();
        let m = ScalarField::zeros(grid, TimeLayout::Nodes);
        let bad_v = CommutatorProbe { eps: vec![1.5], delta_x: vec![0.1] };
        let bad_x = CommutatorProbe { eps: vec![0.5], delta_x: vec![0.6] };
        assert!(commutator_decay(&m, &bad_v).is_err());
        assert!(commutator_decay(&m, &bad_x).is_err());
    }
}
