//! Stein solution `𝒜f = φ − π(φ)` for scalar problems by generator
//! inversion: `f' = (2/(σ² p)) ∫_{−R}^x (φ − π(φ)) p dy`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{pi_of, StationaryDensity1d};
use crate::error::{Error, Result};
use crate::model::{Scalar1d, Sde, SmoothFunction, TestFunction};
use crate::stats::NeumaierSum;

/// Bound on the finite-difference Stein residual.
pub const RESIDUAL_MAX: f64 = 1e-8;

/// Tabulated `f_φ` and its first four derivatives, gauge `f(0) = 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteinSolution1d {
    pub grid: Vec<f64>,
    pub f: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub f3: Vec<f64>,
    pub f4: Vec<f64>,
    pub pi_phi: f64,
    /// `sup |b f1 + (σ²/2) f2 − (φ − π(φ))|` over interior grid points with
    /// `f1`, `f2` re-derived from `f` by five-point differences.
    pub residual_sup: f64,
    /// `π(f)`: subtracting it gives the solution with zero `π`-mean, which
    /// is the one represented by the semigroup integral.
    pub gauge_constant: f64,
    /// Jump of `f'` where the left- and right-anchored integrals meet.
    pub anchor_mismatch: f64,
    pub h: f64,
    pub radius: f64,
    pub phi: TestFunction,
    coeffs: CoeffTable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CoeffTable {
    /// `[b, b', b'']` per grid point.
    b: Vec<[f64; 3]>,
    /// `[σ²/2, σσ', σ'² + σσ'']` per grid point.
    s: Vec<[f64; 3]>,
}

/// Pointwise data of the 1-D generator: `b, b', b''` and `s = σ²/2, s', s''`.
fn coefficient_jets<P: Sde + ?Sized>(s: &Scalar1d<'_, P>, x: f64) -> Result<([f64; 3], [f64; 3])> {
    let b = [s.b(x), s.b_deriv(1, x)?, s.b_deriv(2, x)?];
    let (g, g1, g2) = (s.sigma(x), s.sigma_deriv(1, x)?, s.sigma_deriv(2, x)?);
    let sj = [0.5 * g * g, g * g1, g1 * g1 + g * g2];
    Ok((b, sj))
}

/// `f2, f3, f4` from `f1` via the Stein ODE and its first two derivatives.
#[inline]
fn ode_derivatives(b: &[f64; 3], s: &[f64; 3], phi: [f64; 3], pi: f64, f1: f64) -> [f64; 3] {
    let f2 = (phi[0] - pi - b[0] * f1) / s[0];
    let f3 = (phi[1] - b[1] * f1 - b[0] * f2 - s[1] * f2) / s[0];
    let f4 = (phi[2] - b[2] * f1 - 2.0 * b[1] * f2 - b[0] * f3 - s[2] * f2 - 2.0 * s[1] * f3) / s[0];
    [f2, f3, f4]
}

/// Quintic Hermite interpolant on `[0, h]` from value and first two
/// derivatives at both ends, evaluated at `t·h`.
#[inline]
pub(crate) fn quintic_hermite(t: f64, h: f64, left: [f64; 3], right: [f64; 3]) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h5 = 0.5 * (t3 - 2.0 * t4 + t5);
    left[0] * h0 + h * left[1] * h1 + h * h * left[2] * h2 + right[0] * h3 + h * right[1] * h4 + h * h * right[2] * h5
}

pub fn stein_solution<P: Sde + ?Sized>(
    problem: &P,
    density: &StationaryDensity1d,
    phi: &TestFunction,
) -> Result<SteinSolution1d> {
    let s = Scalar1d::new(problem)?;
    let pi = pi_of(density, phi)?;
    let grid = &density.grid;
    let n = grid.len() - 1;
    let l = &density.log_density;
    let h = density.h;

    if phi.profile.is_constant() {
        return Ok(zero_solution(density, phi, pi));
    }
    let tail = |side: usize, l_ref: f64| -> f64 {
        density.outer[side]
            .iter()
            .map(|(y, w, ly)| w * (phi.d1(0, *y) - pi) * (ly - l_ref).exp())
            .collect::<NeumaierSum>()
            .value()
    };
    // left-anchored H_i = ∫_{−∞}^{x_i} (φ − π) e^{L(y) − L(x_i)} dy
    let mut left = vec![0.0; n + 1];
    left[0] = tail(0, l[0]);
    for i in 1..=n {
        let mut acc = (l[i - 1] - l[i]).exp() * left[i - 1];
        for (y, w, ly) in density.panel_nodes(i) {
            acc += w * (phi.d1(0, y) - pi) * (ly - l[i]).exp();
        }
        left[i] = acc;
    }
    // right-anchored K_i = ∫_{x_i}^{∞} (φ − π) e^{L(y) − L(x_i)} dy
    let mut right = vec![0.0; n + 1];
    right[n] = tail(1, l[n]);
    for i in (0..n).rev() {
        let mut acc = (l[i + 1] - l[i]).exp() * right[i + 1];
        for (y, w, ly) in density.panel_nodes(i + 1) {
            acc += w * (phi.d1(0, y) - pi) * (ly - l[i]).exp();
        }
        right[i] = acc;
    }
    // switch anchors where the cumulative mass crosses 1/2
    let mut mass = NeumaierSum::new();
    let mut switch = n / 2;
    for i in 1..=n {
        for (_, w, ly) in density.panel_nodes(i) {
            mass.add(w * ly.exp());
        }
        if mass.value() >= 0.5 {
            switch = i;
            break;
        }
    }

    let mut f1 = vec![0.0; n + 1];
    let mut f2 = vec![0.0; n + 1];
    let mut f3 = vec![0.0; n + 1];
    let mut f4 = vec![0.0; n + 1];
    let mut b_tab = Vec::with_capacity(n + 1);
    let mut s_tab = Vec::with_capacity(n + 1);
    let mut anchor_mismatch = 0.0;
    for i in 0..=n {
        let x = grid[i];
        let (bj, sj) = coefficient_jets(&s, x)?;
        let scale = 1.0 / sj[0];
        let d1 = if i < switch { scale * left[i] } else { -scale * right[i] };
        if i == switch {
            anchor_mismatch = (scale * left[i] + scale * right[i]).abs();
        }
        let phij = [phi.d1(0, x), phi.d1(1, x), phi.d1(2, x)];
        let [d2, d3, d4] = ode_derivatives(&bj, &sj, phij, pi, d1);
        f1[i] = d1;
        f2[i] = d2;
        f3[i] = d3;
        f4[i] = d4;
        b_tab.push(bj);
        s_tab.push(sj);
    }
    for (i, v) in f1.iter().chain(&f2).chain(&f3).chain(&f4).enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "Stein solution derivative",
                point: vec![grid[i % (n + 1)]],
            });
        }
    }

    // f by two-point Hermite quadrature of f' (exact for quintics), f(0) = 0
    let mid = n / 2;
    let mut f = vec![0.0; n + 1];
    let step = |a: usize, b: usize| {
        h / 2.0 * (f1[a] + f1[b]) + h * h / 10.0 * (f2[a] - f2[b]) + h * h * h / 120.0 * (f3[a] + f3[b])
    };
    for i in mid + 1..=n {
        f[i] = f[i - 1] + step(i - 1, i);
    }
    for i in (0..mid).rev() {
        f[i] = f[i + 1] - step(i, i + 1);
    }

    let mut sol = SteinSolution1d {
        grid: grid.clone(),
        f,
        f1,
        f2,
        f3,
        f4,
        pi_phi: pi,
        residual_sup: 0.0,
        gauge_constant: 0.0,
        anchor_mismatch,
        h,
        radius: density.radius,
        phi: *phi,
        coeffs: CoeffTable { b: b_tab, s: s_tab },
    };
    sol.residual_sup = fd_residual(&s, &sol)?;
    let mut c = NeumaierSum::new();
    for ((x, w), lp) in density.nodes_a.iter().zip(&density.weights_a).zip(&density.log_p_a) {
        c.add(w * sol.value_at(*x)? * lp.exp());
    }
    sol.gauge_constant = c.value();
    if !(sol.residual_sup < RESIDUAL_MAX) {
        return Err(Error::ResidualTooLarge {
            residual: sol.residual_sup,
        });
    }
    Ok(sol)
}

fn zero_solution(density: &StationaryDensity1d, phi: &TestFunction, pi: f64) -> SteinSolution1d {
    let n = density.grid.len();
    SteinSolution1d {
        grid: density.grid.clone(),
        f: vec![0.0; n],
        f1: vec![0.0; n],
        f2: vec![0.0; n],
        f3: vec![0.0; n],
        f4: vec![0.0; n],
        pi_phi: pi,
        residual_sup: 0.0,
        gauge_constant: 0.0,
        anchor_mismatch: 0.0,
        h: density.h,
        radius: density.radius,
        phi: *phi,
        coeffs: CoeffTable {
            b: vec![[0.0; 3]; n],
            s: vec![[0.0; 3]; n],
        },
    }
}

/// Five-point finite-difference Stein residual on interior grid points.
fn fd_residual<P: Sde + ?Sized>(s: &Scalar1d<'_, P>, sol: &SteinSolution1d) -> Result<f64> {
    fd_residual_within(s, sol, f64::INFINITY)
}

/// As [`fd_residual`], restricted to `|x| ≤ window`.
pub(super) fn fd_residual_within<P: Sde + ?Sized>(s: &Scalar1d<'_, P>, sol: &SteinSolution1d, window: f64) -> Result<f64> {
    let f = &sol.f;
    let h = sol.h;
    let n = f.len() - 1;
    let mut worst = 0.0f64;
    for i in 2..=n - 2 {
        let x = sol.grid[i];
        if x.abs() > window {
            continue;
        }
        let d1 = (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * h);
        let d2 = (-f[i + 2] + 16.0 * f[i + 1] - 30.0 * f[i] + 16.0 * f[i - 1] - f[i - 2]) / (12.0 * h * h);
        let sg = s.sigma(x);
        let r = s.b(x) * d1 + 0.5 * sg * sg * d2 - (sol.phi.d1(0, x) - sol.pi_phi);
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

impl SteinSolution1d {
    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        if !(x >= -self.radius && x <= self.radius) {
            return Err(Error::OutsideTable {
                x,
                lo: -self.radius,
                hi: self.radius,
            });
        }
        let n = self.grid.len() - 1;
        let u = (x + self.radius) / self.h;
        let i = (u.floor() as usize).min(n - 1);
        let t = ((x - self.grid[i]) / self.h).clamp(0.0, 1.0);
        Ok((i, t))
    }

    /// `f(x)` by quintic Hermite interpolation of `(f, f', f'')`.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        let (i, t) = self.locate(x)?;
        Ok(quintic_hermite(
            t,
            self.h,
            [self.f[i], self.f1[i], self.f2[i]],
            [self.f[i + 1], self.f1[i + 1], self.f2[i + 1]],
        ))
    }

    /// `[f, f', f'', f''', f'''']` at `x`: `f` and `f'` by quintic Hermite
    /// interpolation, the rest from the Stein ODE with the problem's
    /// coefficients at `x`.
    pub fn eval<P: Sde + ?Sized>(&self, problem: &P, x: f64) -> Result<[f64; 5]> {
        let s = Scalar1d::new(problem)?;
        let (i, t) = self.locate(x)?;
        let f = quintic_hermite(
            t,
            self.h,
            [self.f[i], self.f1[i], self.f2[i]],
            [self.f[i + 1], self.f1[i + 1], self.f2[i + 1]],
        );
        let d1 = quintic_hermite(
            t,
            self.h,
            [self.f1[i], self.f2[i], self.f3[i]],
            [self.f1[i + 1], self.f2[i + 1], self.f3[i + 1]],
        );
        let (bj, sj) = coefficient_jets(&s, x)?;
        let phij = [self.phi.d1(0, x), self.phi.d1(1, x), self.phi.d1(2, x)];
        let [d2, d3, d4] = ode_derivatives(&bj, &sj, phij, self.pi_phi, d1);
        Ok([f, d1, d2, d3, d4])
    }

    /// Bound `sup |f^{(k)}|` over the grid for `k = 1..=4`.
    pub fn derivative_sup(&self) -> [f64; 4] {
        let m = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        [m(&self.f1), m(&self.f2), m(&self.f3), m(&self.f4)]
    }

    /// Binds the table to its problem so it can be used as a
    /// [`SmoothFunction`].
    pub fn bind<'a, P: Sde + ?Sized>(&'a self, problem: &'a P) -> BoundStein<'a, P> {
        BoundStein { sol: self, problem }
    }

    /// CSV table with columns `x, p, f, f1, f2, f3, f4`.
    pub fn write_csv<W: Write>(&self, density: &StationaryDensity1d, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidParameter {
            name: "csv",
            reason: e.to_string(),
        };
        w.write_record(["x", "p", "f", "f1", "f2", "f3", "f4"]).map_err(io)?;
        for i in 0..self.grid.len() {
            w.write_record(
                [
                    self.grid[i],
                    density.log_density[i].exp(),
                    self.f[i],
                    self.f1[i],
                    self.f2[i],
                    self.f3[i],
                    self.f4[i],
                ]
                .iter()
                .map(|v| format!("{v:e}")),
            )
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidParameter {
            name: "csv",
            reason: e.to_string(),
        })?;
        Ok(())
    }

    /// Coefficient jets stored at grid point `i`: `([b, b', b''], [s, s', s''])`.
    pub fn coefficients_at(&self, i: usize) -> ([f64; 3], [f64; 3]) {
        (self.coeffs.b[i], self.coeffs.s[i])
    }
}

/// A Stein table together with its problem, usable wherever a smooth
/// function of the state is expected.
pub struct BoundStein<'a, P: Sde + ?Sized> {
    sol: &'a SteinSolution1d,
    problem: &'a P,
}

impl<P: Sde + ?Sized> BoundStein<'_, P> {
    pub fn jet(&self, x: f64) -> Result<[f64; 5]> {
        self.sol.eval(self.problem, x)
    }
}

impl<P: Sde + ?Sized> SmoothFunction for BoundStein<'_, P> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.sol.value_at(x[0])
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.jet(x[0])?[1];
        Ok(())
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.jet(x[0])?[2];
        Ok(())
    }
    fn jet2(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> Result<f64> {
        let j = self.jet(x[0])?;
        grad[0] = j[1];
        hess[0] = j[2];
        Ok(j[0])
    }
}
