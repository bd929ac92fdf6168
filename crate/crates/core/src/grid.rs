//! Phase-space lattice over `[0, T] x T^d x [-v_max, v_max]^d` and the
//! fields that live on it.
//!
//! Positions sit on the unit torus with nodes `x_i = i * dx`; velocities are
//! cell centered, `v_j = -v_max + (j + 1/2) dv`. Field values are stored
//! time-major, then by flattened position index, then by flattened velocity
//! index (both flattened lexicographically, first axis slowest).

use crate::error::{Error, Result};

/// Time placement of a field: on the `nt + 1` time nodes or the `nt` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeLayout {
    Nodes,
    Intervals,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub d: usize,
    pub nx: usize,
    pub nv: usize,
    pub nt: usize,
    pub horizon: f64,
    pub v_max: f64,
    pub dx: f64,
    pub dv: f64,
    pub dt: f64,
}

impl GridSpec {
    pub fn new(d: usize, nx: usize, nv: usize, nt: usize, horizon: f64, v_max: f64) -> Result<Self> {
        if d != 1 && d != 2 {
            return Err(Error::Config(format!("spatial dimension must be 1 or 2, got {d}")));
        }
        for (name, n) in [("nx", nx), ("nv", nv), ("nt", nt)] {
            if n < 2 {
                return Err(Error::Config(format!("{name} must be at least 2, got {n}")));
            }
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(Error::Config(format!("v_max must be positive, got {v_max}")));
        }
        Ok(Self {
            d,
            nx,
            nv,
            nt,
            horizon,
            v_max,
            dx: 1.0 / nx as f64,
            dv: 2.0 * v_max / nv as f64,
            dt: horizon / nt as f64,
        })
    }

    /// Number of position cells, `nx^d`.
    pub fn x_cells(&self) -> usize {
        self.nx.pow(self.d as u32)
    }

    /// Number of velocity cells, `nv^d`.
    pub fn v_cells(&self) -> usize {
        self.nv.pow(self.d as u32)
    }

    /// Phase-space cells per time slice.
    pub fn slice_len(&self) -> usize {
        self.x_cells() * self.v_cells()
    }

    pub fn time_slices(&self, layout: TimeLayout) -> usize {
        match layout {
            TimeLayout::Nodes => self.nt + 1,
            TimeLayout::Intervals => self.nt,
        }
    }

    /// Phase-space volume element `dx^d dv^d`.
    pub fn cell_volume(&self) -> f64 {
        (self.dx * self.dv).powi(self.d as i32)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn velocity_node(&self, j: usize) -> f64 {
        -self.v_max + (j as f64 + 0.5) * self.dv
    }

    pub fn position_node(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    /// Per-axis indices of a flattened position or velocity index.
    pub fn unflatten(&self, flat: usize, n: usize) -> [usize; 2] {
        match self.d {
            1 => [flat, 0],
            _ => [flat / n, flat % n],
        }
    }

    pub fn velocity(&self, iv: usize) -> [f64; 2] {
        let a = self.unflatten(iv, self.nv);
        let mut out = [0.0; 2];
        for (axis, o) in out.iter_mut().enumerate().take(self.d) {
            *o = self.velocity_node(a[axis]);
        }
        out
    }

    pub fn position(&self, ix: usize) -> [f64; 2] {
        let a = self.unflatten(ix, self.nx);
        let mut out = [0.0; 2];
        for (axis, o) in out.iter_mut().enumerate().take(self.d) {
            *o = self.position_node(a[axis]);
        }
        out
    }

    /// Euclidean norm of the velocity at flattened index `iv`.
    pub fn speed(&self, iv: usize) -> f64 {
        let v = self.velocity(iv);
        v[..self.d].iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Stride of velocity axis `axis` inside the flattened velocity index.
    pub fn v_stride(&self, axis: usize) -> usize {
        if self.d == 2 && axis == 0 {
            self.nv
        } else {
            1
        }
    }

    pub fn x_stride(&self, axis: usize) -> usize {
        if self.d == 2 && axis == 0 {
            self.nx
        } else {
            1
        }
    }

    /// True when velocity cell `iv` sits on an outermost layer of some axis.
    pub fn on_velocity_boundary(&self, iv: usize) -> bool {
        let a = self.unflatten(iv, self.nv);
        a[..self.d].iter().any(|&j| j == 0 || j + 1 == self.nv)
    }

    /// Neighbor of position index `ix` along `axis`, offset `off`, with periodic wrap.
    pub fn x_neighbor(&self, ix: usize, axis: usize, off: isize) -> usize {
        let a = self.unflatten(ix, self.nx);
        let n = self.nx as isize;
        let moved = (a[axis] as isize + off).rem_euclid(n) as usize;
        ix - a[axis] * self.x_stride(axis) + moved * self.x_stride(axis)
    }

    /// Neighbor of velocity index `iv` along `axis`, or `None` outside the box.
    pub fn v_neighbor(&self, iv: usize, axis: usize, off: isize) -> Option<usize> {
        let a = self.unflatten(iv, self.nv);
        let moved = a[axis] as isize + off;
        if moved < 0 || moved >= self.nv as isize {
            return None;
        }
        Some(iv - a[axis] * self.v_stride(axis) + moved as usize * self.v_stride(axis))
    }
}

/// Real values on every phase-space cell of every time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    layout: TimeLayout,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec, layout: TimeLayout) -> Self {
        Self::constant(grid, layout, 0.0)
    }

    pub fn constant(grid: GridSpec, layout: TimeLayout, value: f64) -> Self {
        let len = grid.time_slices(layout) * grid.slice_len();
        Self {
            grid,
            layout,
            values: vec![value; len],
        }
    }

    pub fn from_values(grid: GridSpec, layout: TimeLayout, values: Vec<f64>) -> Result<Self> {
        let len = grid.time_slices(layout) * grid.slice_len();
        if values.len() != len {
            return Err(Error::Config(format!(
                "field needs {len} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("field values must be finite".into()));
        }
        Ok(Self { grid, layout, values })
    }

    /// Builds a field by evaluating `f(t, x, v)` at every lattice point.
    pub fn from_fn(grid: GridSpec, layout: TimeLayout, f: impl Fn(f64, [f64; 2], [f64; 2]) -> f64) -> Self {
        let mut out = Self::zeros(grid, layout);
        let (nxd, nvd) = (grid.x_cells(), grid.v_cells());
        for k in 0..grid.time_slices(layout) {
            let t = grid.time(k);
            for ix in 0..nxd {
                let x = grid.position(ix);
                for iv in 0..nvd {
                    out.values[(k * nxd + ix) * nvd + iv] = f(t, x, grid.velocity(iv));
                }
            }
        }
        out
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn layout(&self) -> TimeLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn slices(&self) -> usize {
        self.grid.time_slices(self.layout)
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.slice_len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.slice_len();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn index(&self, k: usize, ix: usize, iv: usize) -> usize {
        (k * self.grid.x_cells() + ix) * self.grid.v_cells() + iv
    }

    pub fn get(&self, k: usize, ix: usize, iv: usize) -> f64 {
        self.values[self.index(k, ix, iv)]
    }

    pub fn same_shape(&self, other: &ScalarField) -> bool {
        self.grid == other.grid && self.layout == other.layout
    }

    /// Weighted inner product `sum f g * vol` (times `dt` for interval fields).
    pub fn dot(&self, other: &ScalarField) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::GridMismatch);
        }
        let w = self.measure();
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * w)
    }

    /// Quadrature weight attached to every stored value.
    pub fn measure(&self) -> f64 {
        match self.layout {
            TimeLayout::Nodes => self.grid.cell_volume(),
            TimeLayout::Intervals => self.grid.cell_volume() * self.grid.dt,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.measure()
    }
}

/// One interval-in-time scalar field per velocity component.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            components: (0..grid.d)
                .map(|_| ScalarField::zeros(grid, TimeLayout::Intervals))
                .collect(),
        }
    }

    pub fn from_components(components: Vec<ScalarField>) -> Result<Self> {
        let first = components.first().ok_or(Error::GridMismatch)?;
        let grid = *first.grid();
        if components.len() != grid.d
            || components
                .iter()
                .any(|c| c.grid() != &grid || c.layout() != TimeLayout::Intervals)
        {
            return Err(Error::GridMismatch);
        }
        Ok(Self { components })
    }

    pub fn grid(&self) -> &GridSpec {
        self.components[0].grid()
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut ScalarField {
        &mut self.components[axis]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    /// Zeroes every component on the outermost velocity layers.
    pub fn enforce_zero_flux(&mut self) {
        let grid = *self.grid();
        let (nxd, nvd) = (grid.x_cells(), grid.v_cells());
        let boundary: Vec<usize> = (0..nvd).filter(|&iv| grid.on_velocity_boundary(iv)).collect();
        for c in &mut self.components {
            for k in 0..grid.nt {
                for ix in 0..nxd {
                    let base = (k * nxd + ix) * nvd;
                    for &iv in &boundary {
                        c.values[base + iv] = 0.0;
                    }
                }
            }
        }
    }

    pub fn satisfies_zero_flux(&self) -> bool {
        let grid = *self.grid();
        let (nxd, nvd) = (grid.x_cells(), grid.v_cells());
        self.components.iter().all(|c| {
            (0..grid.nt * nxd).all(|row| {
                (0..nvd)
                    .filter(|&iv| grid.on_velocity_boundary(iv))
                    .all(|iv| c.values[row * nvd + iv] == 0.0)
            })
        })
    }

    pub fn dot(&self, other: &VectorField) -> Result<f64> {
        if self.components.len() != other.components.len() {
            return Err(Error::GridMismatch);
        }
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    /// Euclidean magnitude summed over cells, times the interval measure.
    pub fn l1_norm(&self) -> f64 {
        let c0 = &self.components[0];
        let n = c0.values.len();
        let mut acc = 0.0;
        for i in 0..n {
            let s: f64 = self.components.iter().map(|c| c.values[i] * c.values[i]).sum();
            acc += s.sqrt();
        }
        acc * c0.measure()
    }
}

/// Discrete `sum_cells f * dx^d dv^d` on time slice `k`.
pub fn integrate_slice(f: &ScalarField, k: usize) -> Result<f64> {
    if k >= f.slices() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: f.slices(),
        });
    }
    Ok(f.slice(k).iter().sum::<f64>() * f.grid().cell_volume())
}

/// Shifts one row of samples by `s` cells: `out[i] = in(i + s)`, linearly
/// interpolated. Periodic rows wrap; bounded rows read 0 outside.
fn shift_line(input: &[f64], output: &mut [f64], s: f64, periodic: bool) {
    let n = input.len() as isize;
    let base = s.floor();
    let frac = s - base;
    let base = base as isize;
    let read = |i: isize| -> f64 {
        if periodic {
            input[i.rem_euclid(n) as usize]
        } else if (0..n).contains(&i) {
            input[i as usize]
        } else {
            0.0
        }
    };
    for (i, o) in output.iter_mut().enumerate() {
        let j = i as isize + base;
        *o = if frac == 0.0 {
            read(j)
        } else {
            (1.0 - frac) * read(j) + frac * read(j + 1)
        };
    }
}

/// Applies a uniform shift of `cells` along one axis of a slice.
fn shift_axis(slice: &[f64], grid: &GridSpec, velocity_axis: bool, axis: usize, cells: f64) -> Vec<f64> {
    let mut out = vec![0.0; slice.len()];
    if cells == 0.0 {
        out.copy_from_slice(slice);
        return out;
    }
    let (n, stride_in_group, periodic) = if velocity_axis {
        (grid.nv, grid.v_stride(axis), false)
    } else {
        (grid.nx, grid.x_stride(axis) * grid.v_cells(), true)
    };
    let total = slice.len();
    let mut line_in = vec![0.0; n];
    let mut line_out = vec![0.0; n];
    // Every line is identified by its starting offset: all indices whose
    // coordinate along `axis` is zero.
    let block = n * stride_in_group;
    for outer in (0..total).step_by(block) {
        for inner in 0..stride_in_group {
            let start = outer + inner;
            for (j, l) in line_in.iter_mut().enumerate() {
                *l = slice[start + j * stride_in_group];
            }
            shift_line(&line_in, &mut line_out, cells, periodic);
            for (j, l) in line_out.iter().enumerate() {
                out[start + j * stride_in_group] = *l;
            }
        }
    }
    out
}

/// Evaluates slice `k` of `f` at `(x + a_x * delta, v + a_v * delta)` with
/// multilinear interpolation, periodic in `x` and zero outside the velocity box.
pub fn shift_field(f: &ScalarField, k: usize, delta: &[f64], a_x: f64, a_v: f64) -> Result<Vec<f64>> {
    let grid = *f.grid();
    if k >= f.slices() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: f.slices(),
        });
    }
    if delta.len() != grid.d {
        return Err(Error::GridMismatch);
    }
    Ok(shift_slice(f.slice(k), &grid, delta, a_x, a_v))
}

/// Slice-level form of [`shift_field`].
pub fn shift_slice(slice: &[f64], grid: &GridSpec, delta: &[f64], a_x: f64, a_v: f64) -> Vec<f64> {
    let mut cur = slice.to_vec();
    for (axis, &dl) in delta.iter().enumerate().take(grid.d) {
        cur = shift_axis(&cur, grid, false, axis, a_x * dl / grid.dx);
        cur = shift_axis(&cur, grid, true, axis, a_v * dl / grid.dv);
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacings_from_definitions() {
        let g = GridSpec::new(1, 4, 4, 4, 1.0, 2.0).unwrap();
        assert_eq!((g.dx, g.dv, g.dt), (0.25, 1.0, 0.25));
        let g = GridSpec::new(1, 2, 2, 2, 1.0, 1.0).unwrap();
        assert_eq!([g.velocity_node(0), g.velocity_node(1)], [-0.5, 0.5]);
        let g = GridSpec::new(2, 8, 8, 16, 2.0, 3.0).unwrap();
        assert_eq!(g.dt, 0.125);
        assert_eq!(g.slice_len(), 4096);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(GridSpec::new(3, 4, 4, 4, 1.0, 1.0).is_err());
        assert!(GridSpec::new(1, 1, 4, 4, 1.0, 1.0).is_err());
        assert!(GridSpec::new(1, 4, 4, 4, 0.0, 1.0).is_err());
        assert!(GridSpec::new(1, 4, 4, 4, 1.0, -1.0).is_err());
    }

    #[test]
    fn constant_integrals() {
        let g = GridSpec::new(1, 4, 4, 4, 1.0, 2.0).unwrap();
        let one = ScalarField::constant(g, TimeLayout::Nodes, 1.0);
        assert_eq!(integrate_slice(&one, 0).unwrap(), 4.0);
        let zero = ScalarField::zeros(g, TimeLayout::Nodes);
        assert_eq!(integrate_slice(&zero, 3).unwrap(), 0.0);
        assert!(matches!(
            integrate_slice(&zero, 5),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_shift_is_identity() {
        let g = GridSpec::new(2, 5, 6, 2, 1.0, 1.5).unwrap();
        let f = ScalarField::from_fn(g, TimeLayout::Nodes, |t, x, v| t + x[0] * 3.0 - x[1] + v[0] * v[1]);
        assert_eq!(shift_field(&f, 1, &[0.0, 0.0], 1.0, 1.0).unwrap(), f.slice(1));
    }

    #[test]
    fn lattice_aligned_shift_is_a_permutation() {
        let g = GridSpec::new(1, 8, 6, 2, 1.0, 1.0).unwrap();
        let f = ScalarField::from_fn(g, TimeLayout::Nodes, |_, x, v| (7.0 * x[0]).sin() + v[0]);
        let shifted = shift_field(&f, 0, &[g.dx], 1.0, 0.0).unwrap();
        for ix in 0..8 {
            for iv in 0..6 {
                assert_eq!(shifted[ix * 6 + iv], f.get(0, (ix + 1) % 8, iv));
            }
        }
    }

    #[test]
    fn half_cell_velocity_shift_of_gaussian() {
        let g = GridSpec::new(1, 4, 64, 2, 1.0, 4.0).unwrap();
        let gauss = |v: f64| (-v * v / 2.0).exp();
        let f = ScalarField::from_fn(g, TimeLayout::Nodes, |_, _, v| gauss(v[0]));
        let shifted = shift_field(&f, 0, &[g.dv / 2.0], 0.0, 1.0).unwrap();
        let mut err: f64 = 0.0;
        for iv in 0..63 {
            let exact = gauss(g.velocity_node(iv) + g.dv / 2.0);
            err = err.max((shifted[iv] - exact).abs());
        }
        // linear interpolation at a midpoint: |f''| dv^2 / 8
        assert!(err <= g.dv * g.dv / 8.0 + 1e-15, "err {err}");
    }
}
