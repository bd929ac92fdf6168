//! Per-cell proximal maps of the primal objective.
//!
//! The running integrand is `phi(m, w) = F(m) + m L(-w/m)` on `m >= 0`. For
//! `r = 2` the Lagrangian is `|a|^2 / (2 c_h) + C_H`, the optimal `w` for a
//! fixed `m` is `w_tilde * m / (m + tau / c_h)`, and what remains is a convex
//! scalar problem in `m` whose derivative is strictly increasing.

use crate::error::{Error, Result};
use crate::model::ModelSpec;

const MAX_ROOT_ITERS: usize = 200;

fn norm(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Root of a strictly increasing `g` on `[lo, hi]` with `g(lo) < 0 < g(hi)`,
/// Newton steps guarded by bisection.
fn increasing_root(
    g: impl Fn(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    cell: usize,
) -> Result<f64> {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..MAX_ROOT_ITERS {
        let (val, slope) = g(x);
        if val.abs() <= tol || hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1e-300) {
            return Ok(x);
        }
        if val > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - val / slope;
        x = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::RootFinding {
        cell,
        detail: format!("bracket [{lo:e}, {hi:e}] after {MAX_ROOT_ITERS} iterations"),
    })
}

/// Proximal map of `F(m) + m L(-w/m)` jointly in `(m, w)`:
/// the minimizer of `phi(m, w) + (|m - m_tilde|^2 + |w - w_tilde|^2) / (2 tau)`.
///
/// `w_out` receives the velocity part; the density is returned. Cells where
/// `w` is pinned to 0 pass an all-zero `w_tilde`.
pub fn prox_perspective(
    model: &ModelSpec,
    m_tilde: f64,
    w_tilde: &[f64],
    tau: f64,
    cell: usize,
    tol: f64,
    w_out: &mut [f64],
) -> Result<f64> {
    let c_f = model.c_f.at(cell);
    let q = model.q;
    let big_c = model.big_c_h;
    let f_prime = |m: f64| -> (f64, f64) {
        if q == 2.0 {
            (c_f * m, c_f)
        } else if m > 0.0 {
            (c_f * m.powf(q - 1.0), c_f * (q - 1.0) * m.powf(q - 2.0))
        } else {
            (0.0, if q < 2.0 { f64::INFINITY } else { 0.0 })
        }
    };
    let wn = norm(w_tilde);
    if wn == 0.0 {
        w_out.iter_mut().for_each(|x| *x = 0.0);
        // psi'(m) = f(m) + C_H + (m - m_tilde) / tau
        if big_c - m_tilde / tau >= 0.0 {
            return Ok(0.0);
        }
        let hi = m_tilde - tau * big_c;
        let m = increasing_root(
            |m| {
                let (fp, fpp) = f_prime(m);
                (fp + big_c + (m - m_tilde) / tau, fpp + 1.0 / tau)
            },
            0.0,
            hi,
            tol,
            cell,
        )?;
        return Ok(m);
    }
    if model.r == 2.0 {
        let kappa = 1.0 / model.c_h;
        let b = tau * kappa;
        let a = kappa * wn * wn / 2.0;
        // psi'(m) = f(m) + C_H - a / (m + b)^2 + (m - m_tilde) / tau
        let dpsi = |m: f64| -> (f64, f64) {
            let (fp, fpp) = f_prime(m);
            let s = m + b;
            (
                fp + big_c - a / (s * s) + (m - m_tilde) / tau,
                fpp + 2.0 * a / (s * s * s) + 1.0 / tau,
            )
        };
        if dpsi(0.0).0 >= 0.0 {
            w_out.iter_mut().for_each(|x| *x = 0.0);
            return Ok(0.0);
        }
        let hi = m_tilde.max(0.0) + tau * a / (b * b) + f64::MIN_POSITIVE;
        let m = increasing_root(dpsi, 0.0, hi, tol, cell)?;
        let scale = m / (m + b);
        for (o, wt) in w_out.iter_mut().zip(w_tilde) {
            *o = wt * scale;
        }
        return Ok(m);
    }
    prox_perspective_general(model, m_tilde, w_tilde, wn, tau, cell, tol, w_out)
}

/// Nested scalar solve for `r != 2`: inner root for `|w|` at fixed `m`,
/// outer bisection on the envelope derivative in `m`.
#[allow(clippy::too_many_arguments)]
fn prox_perspective_general(
    model: &ModelSpec,
    m_tilde: f64,
    w_tilde: &[f64],
    wn: f64,
    tau: f64,
    cell: usize,
    tol: f64,
    w_out: &mut [f64],
) -> Result<f64> {
    let rp = model.r_conjugate();
    let a = model.c_h.powf(-1.0 / (model.r - 1.0));
    let c_f = model.c_f.at(cell);
    // optimal |w| at fixed m > 0: a rho^(r'-1) m^(1-r') + (rho - wn)/tau = 0
    let rho_of = |m: f64| -> Result<f64> {
        increasing_root(
            |rho| {
                let t = a * (rho / m).powf(rp - 1.0);
                let dt = if rho > 0.0 { a * (rp - 1.0) * (rho / m).powf(rp - 2.0) / m } else { 0.0 };
                (t + (rho - wn) / tau, dt + 1.0 / tau)
            },
            0.0,
            wn,
            tol * 1e-3,
            cell,
        )
    };
    let limit_ratio = (wn / (a * tau)).powf(1.0 / (rp - 1.0));
    let bound = (rp - 1.0) / rp * a * limit_ratio.powf(rp);
    let dpsi = |m: f64| -> Result<f64> {
        let rho = rho_of(m)?;
        let dp = -(rp - 1.0) / rp * a * (rho / m).powf(rp);
        Ok(model.running().derivative(m, c_f) + model.big_c_h + dp + (m - m_tilde) / tau)
    };
    if model.big_c_h - bound - m_tilde / tau >= 0.0 {
        w_out.iter_mut().for_each(|x| *x = 0.0);
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, m_tilde.max(0.0) + tau * bound + f64::MIN_POSITIVE);
    for _ in 0..MAX_ROOT_ITERS {
        let mid = 0.5 * (lo + hi);
        let v = dpsi(mid)?;
        if v.abs() <= tol || hi - lo <= 4.0 * f64::EPSILON * hi {
            lo = mid;
            hi = mid;
            break;
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let m = 0.5 * (lo + hi);
    let rho = rho_of(m)?;
    for (o, wt) in w_out.iter_mut().zip(w_tilde) {
        *o = wt * rho / wn;
    }
    Ok(m)
}

/// `argmin_{m >= 0} G(m) + (m - m_tilde)^2 / (2 tau)`.
pub fn prox_terminal(model: &ModelSpec, m_tilde: f64, tau: f64, cell: usize, tol: f64) -> Result<f64> {
    if m_tilde <= 0.0 {
        return Ok(0.0);
    }
    let c = model.c_g.at(cell);
    let s = model.s;
    if s == 2.0 {
        return Ok(m_tilde / (1.0 + tau * c));
    }
    increasing_root(
        |m| {
            let gp = c * m.powf(s - 1.0);
            let gpp = if m > 0.0 { c * (s - 1.0) * m.powf(s - 2.0) } else { 0.0 };
            (gp + (m - m_tilde) / tau, gpp + 1.0 / tau)
        },
        0.0,
        m_tilde,
        tol,
        cell,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coefficient;

    fn objective(model: &ModelSpec, m: f64, w: &[f64], mt: f64, wt: &[f64], tau: f64) -> f64 {
        let dw: f64 = w.iter().zip(wt).map(|(a, b)| (a - b) * (a - b)).sum();
        model.f_value(m, 0) + model.perspective(m, w) + ((m - mt) * (m - mt) + dw) / (2.0 * tau)
    }

    #[test]
    fn symmetric_input_keeps_zero_flux() {
        let model = ModelSpec::default();
        let mut w = [9.0];
        let m = prox_perspective(&model, 1.0, &[0.0], 0.01, 0, 1e-13, &mut w).unwrap();
        assert_eq!(w, [0.0]);
        assert!(m < 1.0 && m > 0.98);
        assert!((m - 1.0 / 1.01).abs() < 1e-12);
    }

    #[test]
    fn negative_input_projects_to_origin() {
        let model = ModelSpec::default();
        let mut w = [1.0];
        assert_eq!(prox_perspective(&model, -0.5, &[0.0], 0.3, 0, 1e-13, &mut w).unwrap(), 0.0);
        assert_eq!(w, [0.0]);
        assert_eq!(prox_perspective(&model, 0.0, &[0.0], 0.3, 0, 1e-13, &mut w).unwrap(), 0.0);
    }

    #[test]
    fn terminal_closed_form() {
        let model = ModelSpec::default();
        assert_eq!(prox_terminal(&model, 2.0, 1.0, 0, 1e-14).unwrap(), 1.0);
        assert_eq!(prox_terminal(&model, -3.0, 1.0, 0, 1e-14).unwrap(), 0.0);
    }

    #[test]
    fn terminal_general_exponent_is_stationary() {
        let model = ModelSpec {
            q: 3.0,
            s: 2.5,
            c_g: Coefficient::Constant(1.7),
            ..ModelSpec::default()
        };
        let m = prox_terminal(&model, 1.4, 0.6, 0, 1e-14).unwrap();
        let grad = model.g_derivative(m, 0) + (m - 1.4) / 0.6;
        assert!(grad.abs() < 1e-12);
    }

    #[test]
    fn general_r_reduces_to_quadratic_path() {
        let quad = ModelSpec::default();
        let mut w1 = [0.0];
        let m1 = prox_perspective(&quad, 2.0, &[1.0], 0.5, 0, 1e-14, &mut w1).unwrap();
        let mut w2 = [0.0];
        let m2 = prox_perspective_general(&quad, 2.0, &[1.0], 1.0, 0.5, 0, 1e-14, &mut w2).unwrap();
        assert!((m1 - m2).abs() < 1e-9, "{m1} {m2}");
        assert!((w1[0] - w2[0]).abs() < 1e-9);
    }

    #[test]
    fn stationarity_by_finite_differences() {
        let model = ModelSpec {
            big_c_h: 0.3,
            c_h: 1.7,
            ..ModelSpec::default()
        };
        for (mt, wt, tau) in [(2.0, [1.0, -0.4], 0.5), (0.2, [3.0, 1.0], 0.1), (5.0, [0.1, 0.0], 2.0)] {
            let mut w = [0.0, 0.0];
            let m = prox_perspective(&model, mt, &wt, tau, 0, 1e-14, &mut w).unwrap();
            assert!(m > 0.0);
            let h = 1e-6;
            let f = |dm: f64, dw: [f64; 2]| objective(&model, m + dm, &[w[0] + dw[0], w[1] + dw[1]], mt, &wt, tau);
            let gm = (f(h, [0.0, 0.0]) - f(-h, [0.0, 0.0])) / (2.0 * h);
            let g0 = (f(0.0, [h, 0.0]) - f(0.0, [-h, 0.0])) / (2.0 * h);
            let g1 = (f(0.0, [0.0, h]) - f(0.0, [0.0, -h])) / (2.0 * h);
            let gn = (gm * gm + g0 * g0 + g1 * g1).sqrt();
            assert!(gn <= 1e-8 * (1.0 + mt.abs() + wt[0].abs() + wt[1].abs()), "grad {gn}");
        }
    }
}
