//! Newton solver for the backward Euler equation `z − r − τ b(z) = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sde;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonSettings {
    /// Tolerance on the ∞-norm of the residual, relative to
    /// `max(1, |r|_∞, τ|b(z)|_∞)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Maximum number of step halvings per Newton iteration.
    pub max_halvings: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 50,
            max_halvings: 30,
        }
    }
}

pub(crate) struct NewtonScratch {
    rhs: Vec<f64>,
    b: Vec<f64>,
    trial: Vec<f64>,
    jac: Vec<f64>,
}

impl NewtonScratch {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            rhs: vec![0.0; d],
            b: vec![0.0; d],
            trial: vec![0.0; d],
            jac: vec![0.0; d * d],
        }
    }
}

/// Solves for `z` in place; on entry `z` holds `r`.
pub(crate) fn solve<P: Sde + ?Sized>(
    problem: &P,
    tau: f64,
    settings: &NewtonSettings,
    z: &mut [f64],
    scratch: &mut NewtonScratch,
) -> Result<()> {
    if z.len() == 1 {
        let r = z[0];
        let root = solve_scalar(problem, tau, settings, r)?;
        z[0] = polish_scalar(problem, tau, r, root);
        return Ok(());
    }
    solve_vector(problem, tau, settings, z, scratch)
}

fn scalar_drift<P: Sde + ?Sized>(problem: &P, z: f64) -> f64 {
    let mut b = [0.0];
    problem.drift(&[z], &mut b);
    b[0]
}

/// Newton steps past the tolerance while the residual keeps dropping, so the
/// returned root is accurate to rounding.
fn polish_scalar<P: Sde + ?Sized>(problem: &P, tau: f64, r: f64, mut z: f64) -> f64 {
    let one = [1.0];
    let mut f = z - r - tau * scalar_drift(problem, z);
    for _ in 0..3 {
        if f == 0.0 {
            break;
        }
        let mut db = [0.0];
        if problem.drift_deriv(&[z], &[&one], &mut db).is_err() {
            break;
        }
        let zn = z - f / (1.0 - tau * db[0]);
        let fn_ = zn - r - tau * scalar_drift(problem, zn);
        if !(fn_.abs() < f.abs()) {
            break;
        }
        (z, f) = (zn, fn_);
    }
    z
}

fn solve_scalar<P: Sde + ?Sized>(problem: &P, tau: f64, settings: &NewtonSettings, r: f64) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::NonFinite {
            what: "backward Euler right-hand side",
            point: vec![r],
        });
    }
    let resid = |z: f64| {
        let tb = tau * scalar_drift(problem, z);
        (z - r - tb, tb)
    };
    let tol = |tb: f64| settings.tolerance * 1f64.max(r.abs()).max(tb.abs());
    let one = [1.0];
    let mut z = r;
    let (mut f, mut tb) = resid(z);
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        if f.is_finite() && f.abs() <= tol(tb) {
            return Ok(z);
        }
        iterations += 1;
        let mut db = [0.0];
        if problem.drift_deriv(&[z], &[&one], &mut db).is_err() {
            break;
        }
        let jac = 1.0 - tau * db[0];
        if !(jac.is_finite() && jac > 0.0) || !f.is_finite() {
            break;
        }
        let mut dz = f / jac;
        let mut accepted = false;
        for _ in 0..=settings.max_halvings {
            let zn = z - dz;
            let (fn_, tbn) = resid(zn);
            if fn_.is_finite() && fn_.abs() < f.abs() {
                z = zn;
                f = fn_;
                tb = tbn;
                accepted = true;
                break;
            }
            dz *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if f.is_finite() && f.abs() <= tol(tb) {
        return Ok(z);
    }
    bisect(r, &resid, &tol, iterations, f)
}

/// Guarded bisection fallback: brackets a sign change of the residual by
/// expanding around `r`.
fn bisect(
    r: f64,
    resid: &impl Fn(f64) -> (f64, f64),
    tol: &impl Fn(f64) -> f64,
    iterations: usize,
    last: f64,
) -> Result<f64> {
    let fail = |res: f64| Error::SolverFailed {
        iterations,
        residual: res.abs(),
    };
    let (f0, _) = resid(r);
    if !f0.is_finite() {
        return Err(fail(last));
    }
    if f0 == 0.0 {
        return Ok(r);
    }
    // F(r) = −τ b(r): the root lies in the direction of b(r)
    let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
    let mut width = 1f64.max(r.abs());
    let (mut lo, mut hi) = (r, r);
    let mut found = false;
    for _ in 0..200 {
        let cand = r + dir * width;
        let (fc, _) = resid(cand);
        if fc.is_finite() && fc.signum() != f0.signum() {
            if dir > 0.0 {
                lo = r;
                hi = cand;
            } else {
                lo = cand;
                hi = r;
            }
            found = true;
            break;
        }
        width *= 2.0;
    }
    if !found {
        return Err(fail(last));
    }
    let (mut flo, _) = resid(lo);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        let (fm, tbm) = resid(mid);
        if fm.abs() <= tol(tbm) || mid == lo || mid == hi {
            return if fm.abs() <= tol(tbm) { Ok(mid) } else { Err(fail(fm)) };
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Err(fail(last))
}

fn solve_vector<P: Sde + ?Sized>(
    problem: &P,
    tau: f64,
    settings: &NewtonSettings,
    z: &mut [f64],
    s: &mut NewtonScratch,
) -> Result<()> {
    let d = z.len();
    s.rhs.copy_from_slice(z);
    if s.rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "backward Euler right-hand side",
            point: s.rhs.clone(),
        });
    }
    let rnorm = s.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let residual = |z: &[f64], b: &mut [f64], rhs: &[f64], out: &mut DVector<f64>| -> (f64, f64) {
        problem.drift(z, b);
        let mut fmax = 0.0f64;
        let mut bmax = 0.0f64;
        for i in 0..d {
            out[i] = z[i] - rhs[i] - tau * b[i];
            fmax = fmax.max(out[i].abs());
            bmax = bmax.max((tau * b[i]).abs());
        }
        if out.iter().any(|v| !v.is_finite()) {
            fmax = f64::INFINITY;
        }
        (fmax, bmax)
    };
    let tol = |bmax: f64| settings.tolerance * 1f64.max(rnorm).max(bmax);
    let mut f = DVector::zeros(d);
    let mut ftrial = DVector::zeros(d);
    let (mut fnorm, mut bmax) = residual(z, &mut s.b, &s.rhs, &mut f);
    // after convergence, up to three polishing steps while the residual drops
    let mut polish = 0;
    for it in 0..settings.max_iterations + 3 {
        let converged = fnorm <= tol(bmax);
        if converged {
            if polish == 3 || fnorm == 0.0 {
                return Ok(());
            }
            polish += 1;
        } else if it >= settings.max_iterations {
            break;
        }
        problem.drift_jacobian(z, &mut s.jac)?;
        let mut j = DMatrix::from_row_slice(d, d, &s.jac);
        j *= -tau;
        for i in 0..d {
            j[(i, i)] += 1.0;
        }
        let Some(mut dz) = j.lu().solve(&f) else {
            if converged {
                return Ok(());
            }
            return Err(Error::SolverFailed {
                iterations: it,
                residual: fnorm,
            });
        };
        let mut accepted = false;
        let halvings = if converged { 0 } else { settings.max_halvings };
        for _ in 0..=halvings {
            for i in 0..d {
                s.trial[i] = z[i] - dz[i];
            }
            let (tn, tb) = residual(&s.trial, &mut s.b, &s.rhs, &mut ftrial);
            if tn < fnorm {
                z.copy_from_slice(&s.trial);
                std::mem::swap(&mut f, &mut ftrial);
                fnorm = tn;
                bmax = tb;
                accepted = true;
                break;
            }
            dz *= 0.5;
        }
        if !accepted {
            if converged {
                return Ok(());
            }
            return Err(Error::SolverFailed {
                iterations: it + 1,
                residual: fnorm,
            });
        }
    }
    if fnorm <= tol(bmax) {
        Ok(())
    } else {
        Err(Error::SolverFailed {
            iterations: settings.max_iterations,
            residual: fnorm,
        })
    }
}
